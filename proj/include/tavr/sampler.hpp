#pragma once

#include <functional>

#include "tavr/config.hpp"
#include "tavr/model.hpp"

namespace tavr {

struct SamplerConfig {
    size_t steps = 24;
    double text_scale = 5.0;
    double audio_scale = 1.8;
    OdeMethod method = OdeMethod::euler;
};

SamplerConfig sampler_config_from(const Config& cfg);

// Conditioning variants for guidance. Both zero feature blocks in place; the
// token layout never changes, so every branch sees the same sequence shape.
ConditioningContext drop_text(ConditioningContext ctx);
ConditioningContext drop_driving_audio(ConditioningContext ctx);

// Guided velocity from three forward passes: unconditional, text only, and
// fully conditioned. Reference tokens and reference audio stay in all three.
Latent cfg_velocity(const ModelConfig& cfg, const ParamStore& params, const Latent& z_t,
                    const ConditioningContext& ctx, double t, double text_scale,
                    double audio_scale);

using VelocityFn = std::function<Latent(const Latent&, double)>;

// Integrates dz/dt = v from t = 1 down to t = 0 on a uniform grid, starting
// from a seeded Gaussian latent of the given geometry.
Latent flow_sample(const VelocityFn& velocity, size_t frames, size_t height, size_t width,
                   size_t channels, uint64_t seed, size_t steps, OdeMethod method);

struct ClipResult {
    Video video;
    Latent latent;
};

ClipResult generate_clip(const Config& cfg, const ParamStore& params,
                         const ConditioningContext& ctx, uint64_t seed,
                         const SamplerConfig& sampler);

struct LongResult {
    std::vector<ClipResult> clips;
    // Background grid reused verbatim by every clip after the first: the
    // first decoded frame of clip zero, re-encoded once and patchified.
    TokenGrid anchor;
};

// Chained generation. Clip k > 0 takes its motion frames from the last two
// latent frames of clip k - 1 before decoding, and its background tokens from
// the anchor. A single clip reduces to generate_clip.
LongResult generate_long(const Config& cfg, const ParamStore& params,
                         const std::vector<ConditioningContext>& clips, uint64_t seed,
                         const SamplerConfig& sampler);

}  // namespace tavr
