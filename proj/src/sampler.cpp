#include "tavr/sampler.hpp"

#include <stdexcept>
#include <string>

#include "tavr/rng.hpp"
#include "tavr/tokenizer.hpp"

namespace tavr {

SamplerConfig sampler_config_from(const Config& cfg) {
    SamplerConfig s;
    s.steps = cfg.sample_steps;
    s.text_scale = cfg.s_text;
    s.audio_scale = cfg.s_audio;
    s.method = cfg.ode_method;
    return s;
}

ConditioningContext drop_text(ConditioningContext ctx) {
    std::fill(ctx.text.begin(), ctx.text.end(), 0.0f);
    return ctx;
}

ConditioningContext drop_driving_audio(ConditioningContext ctx) {
    std::fill(ctx.audio.begin(), ctx.audio.end(), 0.0f);
    return ctx;
}

Latent cfg_velocity(const ModelConfig& cfg, const ParamStore& params, const Latent& z_t,
                    const ConditioningContext& ctx, double t, double text_scale,
                    double audio_scale) {
    ConditioningContext text_only = drop_driving_audio(ctx);
    ConditioningContext uncond = drop_text(text_only);
    Latent v_full = model_forward(cfg, params, z_t, ctx, t);
    Latent v_text = model_forward(cfg, params, z_t, text_only, t);
    Latent v_null = model_forward(cfg, params, z_t, uncond, t);
    // v_null + s_text (v_text - v_null) + s_audio (v_full - v_text), arranged
    // around v_full so unit scales return the full prediction without roundoff.
    Latent v = v_full;
    for (size_t i = 0; i < v.data.size(); ++i) {
        double vf = v_full.data[i], vt = v_text.data[i], vn = v_null.data[i];
        v.data[i] = static_cast<float>(vf + (audio_scale - 1.0) * (vf - vt) +
                                       (text_scale - 1.0) * (vt - vn));
    }
    return v;
}

Latent flow_sample(const VelocityFn& velocity, size_t frames, size_t height, size_t width,
                   size_t channels, uint64_t seed, size_t steps, OdeMethod method) {
    if (steps == 0)
        throw std::runtime_error("flow_sample: steps must be positive");
    Latent z;
    z.frames = frames;
    z.height = height;
    z.width = width;
    z.channels = channels;
    z.data.resize(z.size());
    Rng rng(seed, "flow_init");
    for (auto& x : z.data) x = static_cast<float>(rng.normal());

    for (size_t k = 0; k < steps; ++k) {
        double t_k = 1.0 - static_cast<double>(k) / static_cast<double>(steps);
        double t_next = 1.0 - static_cast<double>(k + 1) / static_cast<double>(steps);
        double h = t_k - t_next;
        Latent v1 = velocity(z, t_k);
        if (v1.data.size() != z.data.size())
            throw std::runtime_error("flow_sample: velocity changed the latent shape");
        if (method == OdeMethod::euler) {
            for (size_t i = 0; i < z.data.size(); ++i)
                z.data[i] = static_cast<float>(static_cast<double>(z.data[i]) -
                                               h * static_cast<double>(v1.data[i]));
        } else {
            Latent zp = z;
            for (size_t i = 0; i < z.data.size(); ++i)
                zp.data[i] = static_cast<float>(static_cast<double>(z.data[i]) -
                                                h * static_cast<double>(v1.data[i]));
            Latent v2 = velocity(zp, t_next);
            if (v2.data.size() != z.data.size())
                throw std::runtime_error("flow_sample: velocity changed the latent shape");
            for (size_t i = 0; i < z.data.size(); ++i)
                z.data[i] = static_cast<float>(
                    static_cast<double>(z.data[i]) -
                    0.5 * h *
                        (static_cast<double>(v1.data[i]) + static_cast<double>(v2.data[i])));
        }
    }
    return z;
}

ClipResult generate_clip(const Config& cfg, const ParamStore& params,
                         const ConditioningContext& ctx, uint64_t seed,
                         const SamplerConfig& sampler) {
    ModelConfig mcfg = model_config_from(cfg);
    VelocityFn vfn = [&](const Latent& z, double t) {
        return cfg_velocity(mcfg, params, z, ctx, t, sampler.text_scale, sampler.audio_scale);
    };
    Latent z = flow_sample(vfn, cfg.lat_frames(), cfg.lat_h(), cfg.lat_w(), cfg.c_lat, seed,
                           sampler.steps, sampler.method);
    CodecSpec codec{cfg.c_s, cfg.c_t, cfg.c_lat};
    size_t out_frames = 0;
    std::vector<float> rgb = decode_video(z, codec, TemporalMode::first_frame_plus, &out_frames);
    ClipResult out;
    out.video.frames = out_frames;
    out.video.height = cfg.world_h;
    out.video.width = cfg.world_w;
    out.video.rgb = std::move(rgb);
    out.latent = std::move(z);
    return out;
}

namespace {

Latent tail_frames(const Latent& z, size_t n) {
    Latent out;
    out.frames = n;
    out.height = z.height;
    out.width = z.width;
    out.channels = z.channels;
    size_t stride = z.height * z.width * z.channels;
    out.data.assign(z.data.end() - static_cast<ptrdiff_t>(n * stride), z.data.end());
    return out;
}

}  // namespace

LongResult generate_long(const Config& cfg, const ParamStore& params,
                         const std::vector<ConditioningContext>& clips, uint64_t seed,
                         const SamplerConfig& sampler) {
    if (clips.empty())
        throw std::runtime_error("generate_long: needs at least one clip context");
    if (clips.size() > 1 && cfg.lat_frames() < 2)
        throw std::runtime_error(
            "generate_long: chaining needs at least two latent frames per clip");
    LongResult out;
    Rng clip_seeds(seed, "clip_seed");
    for (size_t k = 0; k < clips.size(); ++k) {
        ConditioningContext ctx = clips[k];
        if (k > 0) {
            ctx.background = out.anchor;
            ctx.motion = tail_frames(out.clips.back().latent, 2);
        }
        uint64_t clip_seed = k == 0 ? seed : clip_seeds.fork(std::to_string(k)).next_u64();
        out.clips.push_back(generate_clip(cfg, params, ctx, clip_seed, sampler));
        if (k == 0) {
            CodecSpec codec{cfg.c_s, cfg.c_t, cfg.c_lat};
            const Video& v0 = out.clips[0].video;
            Latent bg = encode_video(v0.frame(0), 1, v0.height, v0.width, codec,
                                     TemporalMode::plain);
            LatentGeometry g{cfg.c_s, cfg.c_t, cfg.patch, TemporalMode::first_frame_plus};
            out.anchor = patchify(bg, g, Origin::background, kBackgroundTime);
        }
    }
    return out;
}

}  // namespace tavr
