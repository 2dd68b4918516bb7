#include "tavr/model.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "tavr/rng.hpp"
#include "tavr/tensor_file.hpp"

namespace tavr {

void ModelConfig::validate() const {
    if (d == 0 || d % 2) throw ValidationError("model: width must be positive and even");
    if (heads == 0 || d % heads) throw ValidationError("model: width must divide by head count");
    if (blocks == 0) throw ValidationError("model: at least one block required");
    if (audio_tokens == 0 || d_audio == 0) throw ValidationError("model: audio shape must be positive");
    if (d_text == 0) throw ValidationError("model: text width must be positive");
    if (channels == 0 || geometry.p == 0) throw ValidationError("model: latent geometry must be positive");
    if ((3 * d / 8) < 2) throw ValidationError("model: width too small for positional factorization");
}

ModelConfig model_config_from(const Config& cfg) {
    ModelConfig m;
    m.d = cfg.d;
    m.heads = cfg.heads;
    m.blocks = cfg.blocks;
    m.audio_tokens = cfg.audio_tokens;
    m.d_audio = cfg.d_audio;
    m.d_text = cfg.d_text;
    m.channels = cfg.c_lat;
    m.geometry.c_s = cfg.c_s;
    m.geometry.c_t = cfg.c_t;
    m.geometry.p = cfg.patch;
    m.geometry.target_convention = TemporalMode::first_frame_plus;
    m.use_ref_audio = cfg.use_ref_audio;
    m.use_token_selection = cfg.token_selection;
    m.validate();
    return m;
}

void ParamStore::add(const std::string& name, Tensor<double> value) {
    if (values_.count(name)) throw std::runtime_error("params: duplicate name " + name);
    names_.push_back(name);
    values_.emplace(name, std::move(value));
}

void ParamStore::set(const std::string& name, Tensor<double> value) {
    auto it = values_.find(name);
    if (it == values_.end()) throw std::runtime_error("params: unknown name " + name);
    if (it->second.shape() != value.shape())
        throw std::runtime_error("params: shape change for " + name);
    it->second = std::move(value);
}

const Tensor<double>& ParamStore::at(const std::string& name) const {
    auto it = values_.find(name);
    if (it == values_.end()) throw std::runtime_error("params: unknown name " + name);
    return it->second;
}

size_t ParamStore::scalar_count() const {
    size_t n = 0;
    for (const auto& name : names_) n += at(name).size();
    return n;
}

namespace {

// Random matrix with orthonormal rows or columns along the shorter side.
Tensor<double> orthogonal(size_t rows, size_t cols, Rng rng) {
    bool tall = rows >= cols;
    size_t m = tall ? cols : rows;  // number of vectors
    size_t n = tall ? rows : cols;  // their length
    std::vector<std::vector<double>> v(m, std::vector<double>(n));
    for (auto& row : v)
        for (double& x : row) x = rng.normal();
    for (size_t i = 0; i < m; ++i) {
        for (size_t j = 0; j < i; ++j) {
            double dot = 0;
            for (size_t k = 0; k < n; ++k) dot += v[i][k] * v[j][k];
            for (size_t k = 0; k < n; ++k) v[i][k] -= dot * v[j][k];
        }
        double norm = 0;
        for (double x : v[i]) norm += x * x;
        norm = std::sqrt(norm);
        if (norm < 1e-8) throw std::runtime_error("orthogonal: degenerate draw");
        for (double& x : v[i]) x /= norm;
    }
    std::vector<double> out(rows * cols);
    for (size_t r = 0; r < rows; ++r)
        for (size_t c = 0; c < cols; ++c) out[r * cols + c] = tall ? v[c][r] : v[r][c];
    return Tensor<double>(Shape{rows, cols}, std::move(out));
}

Tensor<double> zeros2(size_t rows, size_t cols) { return Tensor<double>::zeros(Shape{rows, cols}); }
Tensor<double> zeros1(size_t n) { return Tensor<double>::zeros(Shape{n}); }
Tensor<double> ones1(size_t n) { return Tensor<double>::full(Shape{n}, 1.0); }

}  // namespace

ParamStore init_params(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng(seed, "model_init");
    ParamStore p;
    size_t d = cfg.d, pd = cfg.patch_dim();
    auto orth = [&](const std::string& name, size_t r, size_t c) {
        p.add(name, orthogonal(r, c, rng.fork(name)));
    };

    orth("embed.w", pd, d);
    p.add("embed.b", zeros1(d));
    orth("temb.w1", d, d);
    p.add("temb.b1", zeros1(d));
    orth("temb.w2", d, d);
    p.add("temb.b2", zeros1(d));

    for (size_t b = 0; b < cfg.blocks; ++b) {
        std::string pre = "block" + std::to_string(b) + ".";
        p.add(pre + "ln1.g", ones1(d));
        p.add(pre + "ln1.b", zeros1(d));
        orth(pre + "attn.wq", d, d);
        orth(pre + "attn.wk", d, d);
        orth(pre + "attn.wv", d, d);
        p.add(pre + "attn.wo", zeros2(d, d));
        p.add(pre + "ln_text.g", ones1(d));
        p.add(pre + "ln_text.b", zeros1(d));
        orth(pre + "text.wq", d, d);
        orth(pre + "text.wk", cfg.d_text, d);
        orth(pre + "text.wv", cfg.d_text, d);
        p.add(pre + "text.wo", zeros2(d, d));
        p.add(pre + "ln_audio.g", ones1(d));
        p.add(pre + "ln_audio.b", zeros1(d));
        orth(pre + "audio.enc", cfg.d_audio, d);
        orth(pre + "audio.wq", d, d);
        orth(pre + "audio.wk", d, d);
        orth(pre + "audio.wv", d, d);
        p.add(pre + "audio.wo", zeros2(d, d));
        p.add(pre + "ln2.g", ones1(d));
        p.add(pre + "ln2.b", zeros1(d));
        orth(pre + "ffn.w1", d, 4 * d);
        p.add(pre + "ffn.b1", zeros1(4 * d));
        p.add(pre + "ffn.w2", zeros2(4 * d, d));
        p.add(pre + "ffn.b2", zeros1(d));
        p.add(pre + "mod.w", zeros2(d, 6 * d));
        p.add(pre + "mod.b", zeros1(6 * d));
    }

    p.add("final.ln.g", ones1(d));
    p.add("final.ln.b", zeros1(d));
    p.add("final.mod.w", zeros2(d, 2 * d));
    p.add("final.mod.b", zeros1(2 * d));
    p.add("head.w", zeros2(d, pd));
    p.add("head.b", zeros1(pd));
    return p;
}

void randomize_params(ParamStore& store, uint64_t seed, double scale) {
    Rng rng(seed, "model_randomize");
    for (const auto& name : store.names()) {
        Rng r = rng.fork(name);
        const Tensor<double>& old = store.at(name);
        std::vector<double> v(old.size());
        for (double& x : v) x = r.normal() * scale;
        store.set(name, Tensor<double>(old.shape(), std::move(v)));
    }
}

std::vector<double> flatten_params(const ParamStore& store) {
    std::vector<double> flat;
    flat.reserve(store.scalar_count());
    for (const auto& name : store.names()) {
        const auto& v = store.at(name).vec();
        flat.insert(flat.end(), v.begin(), v.end());
    }
    return flat;
}

void unflatten_params(ParamStore& store, const std::vector<double>& flat) {
    if (flat.size() != store.scalar_count())
        throw std::runtime_error("params: flat vector length mismatch");
    size_t off = 0;
    for (const auto& name : store.names()) {
        const Tensor<double>& old = store.at(name);
        std::vector<double> v(flat.begin() + off, flat.begin() + off + old.size());
        off += old.size();
        store.set(name, Tensor<double>(old.shape(), std::move(v)));
    }
}

Weights::Weights(const ParamStore& store, Tape<double>* tape) : tape_(tape) {
    for (const auto& name : store.names())
        view_.emplace(name, tape ? tape->leaf(store.at(name)) : store.at(name));
}

Weights::Weights(std::map<std::string, Tensor<double>> view, Tape<double>* tape)
    : view_(std::move(view)), tape_(tape) {}

const Tensor<double>& Weights::operator[](const std::string& name) const {
    auto it = view_.find(name);
    if (it == view_.end()) throw std::runtime_error("weights: unknown parameter " + name);
    return it->second;
}

std::vector<OriginRange> frame_ranges(const LatentState& s, const OriginRange& r) {
    std::vector<OriginRange> out;
    size_t i = r.begin;
    while (i < r.end) {
        size_t j = i;
        while (j < r.end && s.coords[j][0] == s.coords[i][0]) ++j;
        out.push_back({i, j});
        i = j;
    }
    return out;
}

std::vector<float> group_audio(const std::vector<float>& per_frame, size_t frames, size_t tokens,
                               size_t d_audio, size_t c_t, TemporalMode mode) {
    size_t block = tokens * d_audio;
    if (per_frame.size() != frames * block)
        throw std::runtime_error("group_audio: feature size does not match frame count");
    auto groups = temporal_groups(frames, c_t, mode);
    std::vector<float> out(groups.size() * block, 0.0f);
    for (size_t g = 0; g < groups.size(); ++g) {
        auto [t0, len] = groups[g];
        for (size_t t = t0; t < t0 + len; ++t)
            for (size_t k = 0; k < block; ++k) out[g * block + k] += per_frame[t * block + k];
        for (size_t k = 0; k < block; ++k) out[g * block + k] /= float(len);
    }
    return out;
}

Tensor<double> timestep_embedding(double t, size_t d) {
    if (d % 2) throw std::runtime_error("timestep_embedding: width must be even");
    std::vector<double> e(d);
    double pos = t * 1000.0;
    for (size_t i = 0; i < d / 2; ++i) {
        double freq = std::pow(10000.0, -2.0 * double(i) / double(d));
        e[2 * i] = std::sin(pos * freq);
        e[2 * i + 1] = std::cos(pos * freq);
    }
    return Tensor<double>(Shape{1, d}, std::move(e));
}

namespace {

Tensor<double> linear(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b) {
    Tensor<double> y = matmul(x, w);
    Tensor<double> no_scale = Tensor<double>::zeros(Shape{b.size()});
    return rowwise_scale_shift(y, no_scale, b);
}

// y[i,j] * gate[j]
Tensor<double> rowwise_gate(const Tensor<double>& y, const Tensor<double>& gate) {
    Tensor<double> zero = Tensor<double>::zeros(Shape{gate.size()});
    return rowwise_scale_shift(y, add_scalar(gate, -1.0), zero);
}

LatentState with_x(const LatentState& s, Tensor<double> x) {
    LatentState out = s;
    out.x = std::move(x);
    return out;
}

Tensor<double> modulate(const Tensor<double>& h, const Modulation& mod) {
    if (mod.shift.empty() && mod.scale.empty()) return h;
    if (mod.shift.empty() || mod.scale.empty())
        throw std::runtime_error("modulation: shift and scale must come together");
    return rowwise_scale_shift(h, mod.scale, mod.shift);
}

// Positional embedding rows for a coordinate list, as an off-tape constant.
Tensor<double> positional_rows(const std::vector<std::array<long, 3>>& coords, size_t d) {
    std::vector<double> data(coords.size() * d);
    for (size_t i = 0; i < coords.size(); ++i) {
        std::vector<double> e = positional_embedding(coords[i][0], coords[i][1], coords[i][2], d);
        std::copy(e.begin(), e.end(), data.begin() + i * d);
    }
    return Tensor<double>(Shape{coords.size(), d}, std::move(data));
}

size_t distinct_frames(const TokenGrid& grid) {
    size_t n = 0;
    for (size_t i = 0; i < grid.size(); ++i)
        if (i == 0 || grid.coords[i][0] != grid.coords[i - 1][0]) ++n;
    return n;
}

std::vector<Tensor<double>> audio_frame_blocks(const std::vector<float>& flat, size_t frames,
                                               size_t tokens, size_t d_audio, const char* what) {
    if (flat.size() != frames * tokens * d_audio)
        throw std::runtime_error(std::string(what) + ": audio frame count does not match the visual stream");
    std::vector<Tensor<double>> out;
    out.reserve(frames);
    for (size_t f = 0; f < frames; ++f) {
        std::vector<double> block(tokens * d_audio);
        for (size_t k = 0; k < block.size(); ++k) block[k] = double(flat[f * block.size() + k]);
        out.emplace_back(Shape{tokens, d_audio}, std::move(block));
    }
    return out;
}

}  // namespace

Tensor<double> grid_values(const TokenGrid& grid) {
    std::vector<double> data(grid.tokens.begin(), grid.tokens.end());
    return Tensor<double>(Shape{grid.size(), grid.d}, std::move(data));
}

LatentState reference_self_attention(const ModelConfig& cfg, const Weights& w,
                                     const std::string& prefix, const LatentState& s,
                                     const Modulation& mod) {
    if (s.target.count() == 0) throw std::runtime_error("attention: empty target range");
    Tensor<double> h = layer_norm(s.x, w[prefix + "ln1.g"], w[prefix + "ln1.b"]);
    h = modulate(h, mod);
    Tensor<double> q = matmul(h, w[prefix + "attn.wq"]);
    Tensor<double> k = matmul(h, w[prefix + "attn.wk"]);
    Tensor<double> v = matmul(h, w[prefix + "attn.wv"]);

    size_t nq1 = s.background.end;  // motion + target + background rows
    Tensor<double> out1 = attention_core(slice_rows(q, 0, nq1), k, v, cfg.heads);
    Tensor<double> y;
    if (s.reference.count()) {
        size_t rb = s.reference.begin, re = s.reference.end;
        Tensor<double> out2 = attention_core(slice_rows(q, rb, re), slice_rows(k, rb, re),
                                             slice_rows(v, rb, re), cfg.heads);
        y = concat_rows<double>({out1, out2});
    } else {
        y = out1;
    }
    y = matmul(y, w[prefix + "attn.wo"]);
    if (!mod.gate.empty()) y = rowwise_gate(y, mod.gate);
    return with_x(s, add(s.x, y));
}

LatentState text_cross_attention(const ModelConfig& cfg, const Weights& w,
                                 const std::string& prefix, const LatentState& s,
                                 const Tensor<double>& text) {
    if (text.size() != cfg.d_text)
        throw std::runtime_error("text attention: descriptor width mismatch");
    Tensor<double> tok = reshape(text, Shape{1, cfg.d_text});
    size_t nr = s.reference.begin;  // non-reference rows
    Tensor<double> xs = s.reference.count() ? slice_rows(s.x, 0, nr) : s.x;
    Tensor<double> h = layer_norm(xs, w[prefix + "ln_text.g"], w[prefix + "ln_text.b"]);
    Tensor<double> q = matmul(h, w[prefix + "text.wq"]);
    Tensor<double> k = matmul(tok, w[prefix + "text.wk"]);
    Tensor<double> v = matmul(tok, w[prefix + "text.wv"]);
    Tensor<double> y = matmul(attention_core(q, k, v, cfg.heads), w[prefix + "text.wo"]);
    if (!s.reference.count()) return with_x(s, add(s.x, y));
    Tensor<double> x_new = concat_rows<double>(
        {add(xs, y), slice_rows(s.x, s.reference.begin, s.reference.end)});
    return with_x(s, x_new);
}

LatentState audio_cross_attention(const ModelConfig& cfg, const Weights& w,
                                  const std::string& prefix, const LatentState& s,
                                  const AudioBlocks& audio) {
    std::vector<OriginRange> t_frames = frame_ranges(s, s.target);
    if (audio.drv.size() != t_frames.size())
        throw std::runtime_error("audio attention: driving audio frame count does not match the target stream");
    bool do_ref = cfg.use_ref_audio && s.reference.count() > 0;
    std::vector<OriginRange> r_frames;
    if (do_ref) {
        r_frames = frame_ranges(s, s.reference);
        if (audio.ref.size() != r_frames.size())
            throw std::runtime_error("audio attention: reference audio frame count does not match the reference stream");
    }

    Tensor<double> h = layer_norm(s.x, w[prefix + "ln_audio.g"], w[prefix + "ln_audio.b"]);
    Tensor<double> q = matmul(h, w[prefix + "audio.wq"]);
    auto attend_frames = [&](const std::vector<OriginRange>& frames,
                             const std::vector<Tensor<double>>& blocks) {
        std::vector<Tensor<double>> outs;
        outs.reserve(frames.size());
        for (size_t f = 0; f < frames.size(); ++f) {
            Tensor<double> e = matmul(blocks[f], w[prefix + "audio.enc"]);
            Tensor<double> k = matmul(e, w[prefix + "audio.wk"]);
            Tensor<double> v = matmul(e, w[prefix + "audio.wv"]);
            outs.push_back(
                attention_core(slice_rows(q, frames[f].begin, frames[f].end), k, v, cfg.heads));
        }
        return matmul(concat_rows(outs), w[prefix + "audio.wo"]);
    };

    Tensor<double> y_target = attend_frames(t_frames, audio.drv);
    std::vector<Tensor<double>> parts;
    if (s.target.begin > 0) parts.push_back(slice_rows(s.x, 0, s.target.begin));
    parts.push_back(add(slice_rows(s.x, s.target.begin, s.target.end), y_target));
    if (s.background.count())
        parts.push_back(slice_rows(s.x, s.background.begin, s.background.end));
    if (s.reference.count()) {
        Tensor<double> xr = slice_rows(s.x, s.reference.begin, s.reference.end);
        parts.push_back(do_ref ? add(xr, attend_frames(r_frames, audio.ref)) : xr);
    }
    return with_x(s, parts.size() == 1 ? parts[0] : concat_rows(parts));
}

LatentState dit_block(const ModelConfig& cfg, const Weights& w, size_t block,
                      const LatentState& s, const Tensor<double>& text, const AudioBlocks& audio,
                      const Tensor<double>& t_features) {
    std::string pre = "block" + std::to_string(block) + ".";
    size_t d = cfg.d;
    Tensor<double> mod6 = linear(t_features, w[pre + "mod.w"], w[pre + "mod.b"]);
    auto part = [&](size_t i) { return slice_cols(mod6, i * d, (i + 1) * d); };

    LatentState cur = reference_self_attention(cfg, w, pre, s, {part(0), part(1), part(2)});
    cur = text_cross_attention(cfg, w, pre, cur, text);
    cur = audio_cross_attention(cfg, w, pre, cur, audio);

    Tensor<double> h = rowwise_scale_shift(layer_norm(cur.x, w[pre + "ln2.g"], w[pre + "ln2.b"]),
                                           part(4), part(3));
    Tensor<double> f = linear(gelu(linear(h, w[pre + "ffn.w1"], w[pre + "ffn.b1"])),
                              w[pre + "ffn.w2"], w[pre + "ffn.b2"]);
    return with_x(cur, add(cur.x, rowwise_gate(f, part(5))));
}

Tensor<double> model_forward_tokens(const ModelConfig& cfg, const Weights& w,
                                    const TokenGrid& z_struct, const Tensor<double>& z_vals,
                                    const ConditioningContext& ctx, double t) {
    cfg.validate();
    if (t < 0.0 || t > 1.0) throw std::runtime_error("model: time must lie in [0, 1]");
    size_t pd = cfg.patch_dim(), d = cfg.d;
    const LatentGeometry& g = cfg.geometry;
    if (z_struct.d != pd) throw std::runtime_error("model: target token width does not match the config");
    if (z_vals.rank() != 2 || z_vals.rows() != z_struct.size() || z_vals.cols() != pd)
        throw std::runtime_error("model: target values do not match the token structure");
    if (z_struct.size() == 0) throw std::runtime_error("model: empty target stream");
    if (ctx.text.size() != cfg.d_text)
        throw std::runtime_error("model: text descriptor width does not match the config");

    TokenGrid motion_grid;
    if (ctx.motion.frames) {
        if (ctx.motion.frames > size_t(kTargetTimeBase))
            throw std::runtime_error("model: too many motion latent frames");
        if (ctx.motion.channels != cfg.channels)
            throw std::runtime_error("model: motion latent channel mismatch");
        motion_grid = patchify(ctx.motion, g, Origin::motion, kMotionTimeBase);
    }
    TokenGrid bg = ctx.background;
    if (cfg.use_token_selection && bg.size() && !ctx.subject_mask.empty())
        bg = mask_background_tokens(bg, ctx.subject_mask.data(), ctx.mask_h, ctx.mask_w, g);
    TokenGrid ref = ctx.reference;
    if (cfg.use_token_selection && ref.size()) ref = select_reference_tokens(ref, ctx.ref_boxes, g);
    const TokenGrid* cond_streams[] = {&motion_grid, &bg, &ref};
    for (const TokenGrid* grid : cond_streams)
        if (grid->size() && grid->d != pd)
            throw std::runtime_error("model: conditioning token width does not match the config");

    // Joint sequence: motion, target, background, reference.
    LatentState s;
    s.motion = {0, motion_grid.size()};
    s.target = {s.motion.end, s.motion.end + z_struct.size()};
    s.background = {s.target.end, s.target.end + bg.size()};
    s.reference = {s.background.end, s.background.end + ref.size()};
    s.coords.reserve(s.reference.end);
    const TokenGrid* all_streams[] = {&motion_grid, &z_struct, &bg, &ref};
    for (const TokenGrid* grid : all_streams)
        s.coords.insert(s.coords.end(), grid->coords.begin(), grid->coords.end());

    std::vector<Tensor<double>> parts;
    auto embed = [&](const Tensor<double>& raw, const std::vector<std::array<long, 3>>& coords) {
        Tensor<double> x = linear(raw, w["embed.w"], w["embed.b"]);
        return add(x, positional_rows(coords, d));
    };
    if (motion_grid.size()) parts.push_back(embed(grid_values(motion_grid), motion_grid.coords));
    parts.push_back(embed(z_vals, z_struct.coords));
    if (bg.size()) parts.push_back(embed(grid_values(bg), bg.coords));
    if (ref.size()) parts.push_back(embed(grid_values(ref), ref.coords));
    s.x = parts.size() == 1 ? parts[0] : concat_rows(parts);

    Tensor<double> text(Shape{1, cfg.d_text},
                        std::vector<double>(ctx.text.begin(), ctx.text.end()));
    AudioBlocks audio;
    audio.drv = audio_frame_blocks(ctx.audio, distinct_frames(z_struct), cfg.audio_tokens,
                                   cfg.d_audio, "model");
    if (cfg.use_ref_audio && ref.size())
        audio.ref = audio_frame_blocks(ctx.ref_audio, distinct_frames(ref), cfg.audio_tokens,
                                       cfg.d_audio, "model");

    Tensor<double> t_features =
        linear(silu(linear(timestep_embedding(t, d), w["temb.w1"], w["temb.b1"])), w["temb.w2"],
               w["temb.b2"]);

    for (size_t b = 0; b < cfg.blocks; ++b) s = dit_block(cfg, w, b, s, text, audio, t_features);

    Tensor<double> xt = slice_rows(s.x, s.target.begin, s.target.end);
    Tensor<double> h = layer_norm(xt, w["final.ln.g"], w["final.ln.b"]);
    Tensor<double> fm = linear(t_features, w["final.mod.w"], w["final.mod.b"]);
    h = rowwise_scale_shift(h, slice_cols(fm, d, 2 * d), slice_cols(fm, 0, d));
    return linear(h, w["head.w"], w["head.b"]);
}

Latent model_forward(const ModelConfig& cfg, const ParamStore& params, const Latent& z_t,
                     const ConditioningContext& ctx, double t) {
    TokenGrid grid = patchify(z_t, cfg.geometry, Origin::target, kTargetTimeBase);
    Weights w(params, nullptr);
    Tensor<double> out = model_forward_tokens(cfg, w, grid, grid_values(grid), ctx, t);
    TokenGrid vgrid = grid;
    const auto& v = out.vec();
    for (size_t i = 0; i < v.size(); ++i) vgrid.tokens[i] = float(v[i]);
    return unpatchify(vgrid, cfg.geometry, z_t.height, z_t.width, z_t.channels);
}

void save_checkpoint(const std::string& dir, const ParamStore& params, const Config& cfg) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "params");
    nlohmann::json j;
    j["config"] = cfg.dump();
    j["seed"] = cfg.seed;
    j["params"] = nlohmann::json::array();
    for (const auto& name : params.names()) {
        const Tensor<double>& t = params.at(name);
        std::string rel = "params/" + name + ".tavr";
        std::vector<float> data(t.size());
        for (size_t i = 0; i < t.size(); ++i) data[i] = float(t.vec()[i]);
        save_tensor((fs::path(dir) / rel).string(), t.shape(), data);
        j["params"].push_back({{"name", name}, {"shape", t.shape()}, {"file", rel}});
    }
    fs::path target = fs::path(dir) / "checkpoint.json";
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw std::runtime_error("checkpoint: cannot open " + tmp.string());
        out << j.dump(2) << "\n";
    }
    fs::rename(tmp, target);
}

ParamStore load_checkpoint(const std::string& dir, Config* cfg_out) {
    namespace fs = std::filesystem;
    fs::path manifest = fs::path(dir) / "checkpoint.json";
    std::ifstream in(manifest);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + manifest.string());
    nlohmann::json j = nlohmann::json::parse(in);
    if (cfg_out) *cfg_out = parse_config_text(j.at("config").get<std::string>());
    ParamStore p;
    for (const auto& entry : j.at("params")) {
        std::string name = entry.at("name").get<std::string>();
        Shape shape = entry.at("shape").get<Shape>();
        auto [file_shape, data] = load_tensor_raw((fs::path(dir) / entry.at("file").get<std::string>()).string());
        if (file_shape != shape)
            throw std::runtime_error("checkpoint: shape mismatch for " + name);
        p.add(name, Tensor<double>(shape, std::vector<double>(data.begin(), data.end())));
    }
    return p;
}

}  // namespace tavr
