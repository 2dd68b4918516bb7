#include "tavr/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "tavr/tensor_file.hpp"
#include "tavr/tokenizer.hpp"

namespace tavr {

namespace fs = std::filesystem;

std::string to_string(DataMode m) {
    return m == DataMode::same_scene ? "same_scene" : "cross_scene";
}

DataMode data_mode_from_string(const std::string& s) {
    if (s == "same_scene") return DataMode::same_scene;
    if (s == "cross_scene") return DataMode::cross_scene;
    throw ValidationError("unknown data mode '" + s + "'");
}

Video slice_video(const Video& v, size_t t0, size_t len) {
    if (t0 + len > v.frames) throw std::runtime_error("slice_video: range out of bounds");
    Video out;
    out.frames = len;
    out.height = v.height;
    out.width = v.width;
    size_t fp = v.frame_pixels();
    out.rgb.assign(v.rgb.begin() + t0 * fp * 3, v.rgb.begin() + (t0 + len) * fp * 3);
    out.mask.assign(v.mask.begin() + t0 * fp, v.mask.begin() + (t0 + len) * fp);
    out.boxes.assign(v.boxes.begin() + t0, v.boxes.begin() + t0 + len);
    return out;
}

namespace {

Video gather_frames(const Video& v, const std::vector<size_t>& idx) {
    Video out;
    out.frames = idx.size();
    out.height = v.height;
    out.width = v.width;
    size_t fp = v.frame_pixels();
    out.rgb.resize(idx.size() * fp * 3);
    out.mask.resize(idx.size() * fp);
    out.boxes.resize(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) {
        std::copy_n(v.rgb.begin() + idx[i] * fp * 3, fp * 3, out.rgb.begin() + i * fp * 3);
        std::copy_n(v.mask.begin() + idx[i] * fp, fp, out.mask.begin() + i * fp);
        out.boxes[i] = v.boxes[idx[i]];
    }
    return out;
}

// Sorted distinct frame indices, a uniformly random size-k subset of [0, n).
std::vector<size_t> pick_frames(Rng& rng, size_t n, size_t k) {
    std::vector<size_t> all(n);
    for (size_t i = 0; i < n; ++i) all[i] = i;
    for (size_t i = 0; i < k; ++i) std::swap(all[i], all[i + rng.index(n - i)]);
    all.resize(k);
    std::sort(all.begin(), all.end());
    return all;
}

std::vector<float> scene_text(const SceneSpec& sc, size_t d_text) {
    std::vector<float> t(d_text, 0.0f);
    double vals[4] = {sc.tex_a, sc.tex_b, sc.tex_c, sc.light};
    for (size_t i = 0; i < d_text && i < 4; ++i) t[i] = float(vals[i]);
    return t;
}

}  // namespace

Sample make_sample(const Config& cfg, uint64_t seed, const std::string& split, uint64_t index,
                   DataMode mode, size_t ref_len) {
    Rng rng(seed, "data/" + split + "/" + std::to_string(index));
    Sample s;
    Rng id_rng = rng.fork("identity");
    s.identity = sample_identity(id_rng);
    Rng scene_rng = rng.fork("scene");
    s.target_scene = sample_scene(scene_rng);

    Rng audio_rng = rng.fork("audio");
    std::vector<double> env = synth_envelope(cfg.source_frames, audio_rng);
    uint64_t drift_seed = rng.fork("drift").next_u64();
    Video source = render_video(s.identity, s.target_scene, cfg.world_h, cfg.world_w, env, drift_seed);

    size_t t = cfg.clip_frames;
    size_t lead = 2 * cfg.c_t;  // room for the motion frames
    size_t span = cfg.source_frames - t - lead + 1;
    size_t a = lead + rng.fork("window").index(span);
    s.target = slice_video(source, a, t);
    s.motion = slice_video(source, a - lead, lead);
    s.bg_plate = background_plate(s.target);
    s.fg_mask = union_mask(s.target);
    s.envelope.assign(env.begin() + a, env.begin() + a + t);
    s.audio = envelope_features(s.envelope, cfg.audio_tokens, cfg.d_audio);
    s.text = scene_text(s.target_scene, cfg.d_text);

    size_t len = ref_len;
    if (len == 0) len = cfg.ref_min + rng.fork("ref_len").index(cfg.ref_max - cfg.ref_min + 1);
    Rng pick_rng = rng.fork("ref_pick");

    if (mode == DataMode::same_scene) {
        s.ref_scene = s.target_scene;
        std::vector<size_t> idx = pick_frames(pick_rng, cfg.source_frames, len);
        s.reference = gather_frames(source, idx);
        s.ref_envelope.resize(len);
        for (size_t i = 0; i < len; ++i) s.ref_envelope[i] = env[idx[i]];
    } else {
        Rng ref_scene_rng = rng.fork("ref_scene");
        s.ref_scene = sample_scene(ref_scene_rng);
        Rng ref_audio_rng = rng.fork("ref_audio");
        std::vector<double> ref_env = synth_envelope(cfg.source_frames, ref_audio_rng);
        uint64_t ref_drift = rng.fork("ref_drift").next_u64();
        Video ref_source =
            render_video(s.identity, s.ref_scene, cfg.world_h, cfg.world_w, ref_env, ref_drift);
        std::vector<size_t> idx = pick_frames(pick_rng, cfg.source_frames, len);
        s.reference = gather_frames(ref_source, idx);
        s.ref_envelope.resize(len);
        for (size_t i = 0; i < len; ++i) s.ref_envelope[i] = ref_env[idx[i]];
    }
    s.ref_audio = envelope_features(s.ref_envelope, cfg.audio_tokens, cfg.d_audio);
    return s;
}

std::vector<Sample> make_dataset(const Config& cfg, uint64_t seed, const std::string& split,
                                 size_t count, DataMode mode, size_t ref_len) {
    std::vector<Sample> out;
    out.reserve(count);
    for (size_t i = 0; i < count; ++i) out.push_back(make_sample(cfg, seed, split, i, mode, ref_len));
    return out;
}

namespace {

std::string sample_dir_name(size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "sample_%05zu", i);
    return buf;
}

void save_video(const std::string& dir, const std::string& stem, const Video& v) {
    save_tensor(dir + "/" + stem + "_rgb.tavr", {v.frames, v.height, v.width, 3}, v.rgb);
    save_tensor(dir + "/" + stem + "_mask.tavr", {v.frames, v.height, v.width}, v.mask);
    std::vector<float> boxes(v.frames * 4);
    for (size_t t = 0; t < v.frames; ++t) {
        boxes[t * 4] = v.boxes[t].x0;
        boxes[t * 4 + 1] = v.boxes[t].y0;
        boxes[t * 4 + 2] = v.boxes[t].x1;
        boxes[t * 4 + 3] = v.boxes[t].y1;
    }
    save_tensor(dir + "/" + stem + "_boxes.tavr", {v.frames, 4}, boxes);
}

Video load_video(const std::string& dir, const std::string& stem) {
    auto [rs, rgb] = load_tensor_raw(dir + "/" + stem + "_rgb.tavr");
    auto [ms, mask] = load_tensor_raw(dir + "/" + stem + "_mask.tavr");
    auto [bs, boxes] = load_tensor_raw(dir + "/" + stem + "_boxes.tavr");
    if (rs.size() != 4 || rs[3] != 3) throw std::runtime_error("dataset: bad video tensor " + stem);
    Video v;
    v.frames = rs[0];
    v.height = rs[1];
    v.width = rs[2];
    v.rgb = std::move(rgb);
    v.mask = std::move(mask);
    v.boxes.resize(v.frames);
    if (bs.size() != 2 || bs[0] != v.frames || bs[1] != 4)
        throw std::runtime_error("dataset: bad box tensor " + stem);
    for (size_t t = 0; t < v.frames; ++t)
        v.boxes[t] = {boxes[t * 4], boxes[t * 4 + 1], boxes[t * 4 + 2], boxes[t * 4 + 3]};
    return v;
}

std::vector<float> to_f32(const std::vector<double>& v) {
    std::vector<float> out(v.size());
    for (size_t i = 0; i < v.size(); ++i) out[i] = float(v[i]);
    return out;
}

std::vector<double> to_f64(const std::vector<float>& v) {
    std::vector<double> out(v.size());
    for (size_t i = 0; i < v.size(); ++i) out[i] = double(v[i]);
    return out;
}

}  // namespace

void save_dataset(const std::string& dir, const std::vector<Sample>& samples) {
    fs::create_directories(dir);
    for (size_t i = 0; i < samples.size(); ++i) {
        const Sample& s = samples[i];
        std::string sd = (fs::path(dir) / sample_dir_name(i)).string();
        fs::create_directories(sd);
        save_video(sd, "target", s.target);
        save_video(sd, "reference", s.reference);
        save_video(sd, "motion", s.motion);
        save_tensor(sd + "/bg_plate.tavr", {s.target.height, s.target.width, 3}, s.bg_plate);
        save_tensor(sd + "/fg_mask.tavr", {s.target.height, s.target.width}, s.fg_mask);
        save_tensor(sd + "/envelope.tavr", {s.envelope.size()}, to_f32(s.envelope));
        size_t t = s.target.frames;
        save_tensor(sd + "/audio.tavr", {t, s.audio.size() / t}, s.audio);
        save_tensor(sd + "/ref_envelope.tavr", {s.ref_envelope.size()}, to_f32(s.ref_envelope));
        size_t rt = std::max<size_t>(1, s.reference.frames);
        save_tensor(sd + "/ref_audio.tavr", {s.reference.frames, s.ref_audio.size() / rt}, s.ref_audio);
        save_tensor(sd + "/text.tavr", {s.text.size()}, s.text);
        std::vector<float> id = {float(s.identity.hue),     float(s.identity.tone),
                                 float(s.identity.face_w),  float(s.identity.face_h),
                                 float(s.identity.eyes),    float(s.identity.mouth_w),
                                 float(s.identity.hair),    float(s.identity.eye_size)};
        save_tensor(sd + "/identity.tavr", {8}, id);
        std::vector<float> scenes = {float(s.target_scene.tex_a), float(s.target_scene.tex_b),
                                     float(s.target_scene.tex_c), float(s.target_scene.light),
                                     float(s.ref_scene.tex_a),    float(s.ref_scene.tex_b),
                                     float(s.ref_scene.tex_c),    float(s.ref_scene.light)};
        save_tensor(sd + "/scenes.tavr", {2, 4}, scenes);
    }
    nlohmann::json meta;
    meta["count"] = samples.size();
    std::ofstream out(fs::path(dir) / "dataset.json");
    if (!out) throw std::runtime_error("save_dataset: cannot write meta in " + dir);
    out << meta.dump(2) << "\n";
}

std::vector<Sample> load_dataset(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "dataset.json");
    if (!in) throw ValidationError("load_dataset: no dataset.json in " + dir);
    nlohmann::json meta = nlohmann::json::parse(in);
    size_t count = meta.at("count").get<size_t>();
    std::vector<Sample> samples;
    samples.reserve(count);
    for (size_t i = 0; i < count; ++i) {
        std::string sd = (fs::path(dir) / sample_dir_name(i)).string();
        Sample s;
        s.target = load_video(sd, "target");
        s.reference = load_video(sd, "reference");
        s.motion = load_video(sd, "motion");
        s.bg_plate = load_tensor_raw(sd + "/bg_plate.tavr").second;
        s.fg_mask = load_tensor_raw(sd + "/fg_mask.tavr").second;
        s.envelope = to_f64(load_tensor_raw(sd + "/envelope.tavr").second);
        s.audio = load_tensor_raw(sd + "/audio.tavr").second;
        s.ref_envelope = to_f64(load_tensor_raw(sd + "/ref_envelope.tavr").second);
        s.ref_audio = load_tensor_raw(sd + "/ref_audio.tavr").second;
        s.text = load_tensor_raw(sd + "/text.tavr").second;
        auto id = load_tensor_raw(sd + "/identity.tavr").second;
        s.identity = {id[0], id[1], id[2], id[3], id[4], id[5], id[6], id[7]};
        auto sc = load_tensor_raw(sd + "/scenes.tavr").second;
        s.target_scene = {sc[0], sc[1], sc[2], sc[3]};
        s.ref_scene = {sc[4], sc[5], sc[6], sc[7]};
        samples.push_back(std::move(s));
    }
    return samples;
}

namespace {

// Union of per-frame boxes over each temporal group of the reference clip.
std::vector<Box> latent_frame_boxes(const Video& v, size_t c_t) {
    auto groups = temporal_groups(v.frames, c_t, TemporalMode::plain);
    std::vector<Box> out;
    out.reserve(groups.size());
    for (auto [start, len] : groups) {
        Box u = v.boxes[start];
        for (size_t f = start + 1; f < start + len; ++f) {
            u.x0 = std::min(u.x0, v.boxes[f].x0);
            u.y0 = std::min(u.y0, v.boxes[f].y0);
            u.x1 = std::max(u.x1, v.boxes[f].x1);
            u.y1 = std::max(u.y1, v.boxes[f].y1);
        }
        out.push_back(u);
    }
    return out;
}

}  // namespace

ConditioningContext sample_context(const Config& cfg, const Sample& s, bool include_motion) {
    CodecSpec codec{cfg.c_s, cfg.c_t, cfg.c_lat};
    LatentGeometry g{cfg.c_s, cfg.c_t, cfg.patch, TemporalMode::first_frame_plus};
    ConditioningContext ctx;

    ctx.audio = group_audio(s.audio, s.target.frames, cfg.audio_tokens, cfg.d_audio, cfg.c_t,
                            TemporalMode::first_frame_plus);
    ctx.ref_audio = group_audio(s.ref_audio, s.reference.frames, cfg.audio_tokens, cfg.d_audio,
                                cfg.c_t, TemporalMode::plain);
    ctx.text = s.text;

    Latent bg = encode_video(s.bg_plate.data(), 1, cfg.world_h, cfg.world_w, codec,
                             TemporalMode::plain);
    ctx.background = patchify(bg, g, Origin::background, kBackgroundTime);

    Latent ref = encode_video(s.reference, codec, TemporalMode::plain);
    ctx.reference = patchify(ref, g, Origin::reference, kReferenceTimeBase);
    ctx.ref_boxes = latent_frame_boxes(s.reference, cfg.c_t);

    ctx.subject_mask = s.fg_mask;
    ctx.mask_h = cfg.world_h;
    ctx.mask_w = cfg.world_w;

    if (include_motion && s.motion.frames > 0)
        ctx.motion = encode_video(s.motion, codec, TemporalMode::plain);
    return ctx;
}

Latent sample_target_latent(const Config& cfg, const Sample& s) {
    CodecSpec codec{cfg.c_s, cfg.c_t, cfg.c_lat};
    return encode_video(s.target, codec, TemporalMode::first_frame_plus);
}

}  // namespace tavr
