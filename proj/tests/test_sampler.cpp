#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>

#include "doctest.h"
#include "tavr/rng.hpp"
#include "tavr/sampler.hpp"
#include "tavr/tokenizer.hpp"

using namespace tavr;

namespace {

Config tiny_config() {
    Config cfg;
    cfg.world_h = 64;
    cfg.world_w = 64;
    cfg.clip_frames = 4;
    cfg.c_s = 8;
    cfg.c_t = 1;
    cfg.c_lat = 3;
    cfg.d = 8;
    cfg.heads = 2;
    cfg.blocks = 1;
    cfg.patch = 2;
    cfg.audio_tokens = 2;
    cfg.d_audio = 4;
    cfg.d_text = 3;
    return cfg;
}

Latent random_latent(size_t frames, size_t h, size_t w, size_t c, Rng& rng) {
    Latent z;
    z.frames = frames;
    z.height = h;
    z.width = w;
    z.channels = c;
    z.data.resize(z.size());
    for (auto& v : z.data) v = static_cast<float>(rng.normal());
    return z;
}

ConditioningContext random_context(const Config& cfg, Rng& rng) {
    ConditioningContext ctx;
    LatentGeometry g{cfg.c_s, cfg.c_t, cfg.patch, TemporalMode::first_frame_plus};
    Latent bg = random_latent(1, cfg.lat_h(), cfg.lat_w(), cfg.c_lat, rng);
    ctx.background = patchify(bg, g, Origin::background, kBackgroundTime);
    Latent ref = random_latent(2, cfg.lat_h(), cfg.lat_w(), cfg.c_lat, rng);
    ctx.reference = patchify(ref, g, Origin::reference, kReferenceTimeBase);
    ctx.ref_boxes = {Box{0, 0, 64, 64}, Box{0, 0, 64, 64}};
    ctx.audio.resize(cfg.lat_frames() * cfg.audio_tokens * cfg.d_audio);
    for (auto& v : ctx.audio) v = static_cast<float>(rng.normal());
    ctx.ref_audio.resize(2 * cfg.audio_tokens * cfg.d_audio);
    for (auto& v : ctx.ref_audio) v = static_cast<float>(rng.normal());
    ctx.text.resize(cfg.d_text);
    for (auto& v : ctx.text) v = static_cast<float>(rng.normal());
    return ctx;
}

ParamStore random_model(const Config& cfg, uint64_t seed, double scale) {
    ParamStore params = init_params(model_config_from(cfg), seed);
    randomize_params(params, seed + 1, scale);
    return params;
}

double rel_l2(const Latent& a, const Latent& b) {
    double num = 0, den = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double d = static_cast<double>(a.data[i]) - b.data[i];
        num += d * d;
        den += static_cast<double>(b.data[i]) * b.data[i];
    }
    return std::sqrt(num / std::max(den, 1e-30));
}

bool bitwise_equal(const std::vector<float>& a, const std::vector<float>& b) {
    return a.size() == b.size() &&
           (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}

}  // namespace

TEST_CASE("conditioning drop helpers zero features and keep layout") {
    Config cfg = tiny_config();
    Rng rng(7, "drop");
    ConditioningContext ctx = random_context(cfg, rng);

    ConditioningContext no_text = drop_text(ctx);
    CHECK(no_text.text.size() == ctx.text.size());
    for (float v : no_text.text) CHECK(v == 0.0f);
    CHECK(bitwise_equal(no_text.audio, ctx.audio));
    CHECK(bitwise_equal(no_text.ref_audio, ctx.ref_audio));
    CHECK(bitwise_equal(no_text.background.tokens, ctx.background.tokens));
    CHECK(bitwise_equal(no_text.reference.tokens, ctx.reference.tokens));

    ConditioningContext no_audio = drop_driving_audio(ctx);
    CHECK(no_audio.audio.size() == ctx.audio.size());
    for (float v : no_audio.audio) CHECK(v == 0.0f);
    CHECK(bitwise_equal(no_audio.ref_audio, ctx.ref_audio));
    CHECK(bitwise_equal(no_audio.text, ctx.text));
}

TEST_CASE("guided velocity matches the combination formula") {
    Config cfg = tiny_config();
    ModelConfig mcfg = model_config_from(cfg);
    ParamStore params = random_model(cfg, 11, 0.05);
    Rng rng(12, "cfg_velocity");
    ConditioningContext ctx = random_context(cfg, rng);
    Latent z = random_latent(cfg.lat_frames(), cfg.lat_h(), cfg.lat_w(), cfg.c_lat, rng);

    Latent v_full = model_forward(mcfg, params, z, ctx, 0.4);
    Latent v_text = model_forward(mcfg, params, z, drop_driving_audio(ctx), 0.4);
    Latent v_null = model_forward(mcfg, params, z, drop_text(drop_driving_audio(ctx)), 0.4);

    double s_text = 5.0, s_audio = 1.8;
    Latent v = cfg_velocity(mcfg, params, z, ctx, 0.4, s_text, s_audio);
    REQUIRE(v.data.size() == v_full.data.size());
    for (size_t i = 0; i < v.data.size(); ++i) {
        double want = v_null.data[i] + s_text * (double(v_text.data[i]) - v_null.data[i]) +
                      s_audio * (double(v_full.data[i]) - v_text.data[i]);
        CHECK(std::abs(v.data[i] - want) <= 1e-5 * (1.0 + std::abs(want)));
    }

    SUBCASE("unit scales return the fully conditioned prediction") {
        Latent unit = cfg_velocity(mcfg, params, z, ctx, 0.4, 1.0, 1.0);
        for (size_t i = 0; i < unit.data.size(); ++i) CHECK(unit.data[i] == v_full.data[i]);
    }

    SUBCASE("guidance branches differ") {
        CHECK(rel_l2(v_text, v_full) > 1e-6);
        CHECK(rel_l2(v_null, v_text) > 1e-6);
    }
}

TEST_CASE("one Euler step under a constant field recovers the endpoint") {
    size_t frames = 3, h = 4, w = 4, c = 2;
    size_t n = frames * h * w * c;

    // Replicate the sampler's seeded start so the test can aim the field at a
    // known endpoint: with v = start - target constantly, z(0) = target.
    Latent start;
    start.frames = frames;
    start.height = h;
    start.width = w;
    start.channels = c;
    start.data.resize(n);
    Rng init(99, "flow_init");
    for (auto& v : start.data) v = static_cast<float>(init.normal());

    Rng rng(100, "target");
    Latent target = random_latent(frames, h, w, c, rng);
    Latent field;
    field.frames = frames;
    field.height = h;
    field.width = w;
    field.channels = c;
    field.data.resize(n);
    for (size_t i = 0; i < n; ++i) field.data[i] = start.data[i] - target.data[i];

    VelocityFn constant = [&](const Latent&, double) { return field; };
    for (size_t steps : {size_t(1), size_t(4)}) {
        for (OdeMethod m : {OdeMethod::euler, OdeMethod::heun}) {
            Latent z = flow_sample(constant, frames, h, w, c, 99, steps, m);
            for (size_t i = 0; i < n; ++i)
                CHECK(std::abs(z.data[i] - target.data[i]) <= 1e-6);
        }
    }
}

TEST_CASE("flow_sample input guards") {
    VelocityFn identity_field = [](const Latent& z, double) { return z; };
    CHECK_THROWS(flow_sample(identity_field, 1, 2, 2, 1, 0, 0, OdeMethod::euler));

    VelocityFn bad_shape = [](const Latent& z, double) {
        Latent v = z;
        v.data.push_back(0.0f);
        return v;
    };
    CHECK_THROWS(flow_sample(bad_shape, 1, 2, 2, 1, 0, 4, OdeMethod::euler));
}

TEST_CASE("sampling is deterministic in the seed") {
    Config cfg = tiny_config();
    cfg.sample_steps = 4;
    ParamStore params = random_model(cfg, 21, 0.05);
    Rng rng(22, "determinism");
    ConditioningContext ctx = random_context(cfg, rng);
    SamplerConfig sampler = sampler_config_from(cfg);

    ClipResult a = generate_clip(cfg, params, ctx, 5, sampler);
    ClipResult b = generate_clip(cfg, params, ctx, 5, sampler);
    CHECK(bitwise_equal(a.latent.data, b.latent.data));
    CHECK(bitwise_equal(a.video.rgb, b.video.rgb));

    ClipResult c = generate_clip(cfg, params, ctx, 6, sampler);
    CHECK_FALSE(bitwise_equal(a.latent.data, c.latent.data));
}

TEST_CASE("generated video is the decoded latent") {
    Config cfg = tiny_config();
    cfg.sample_steps = 2;
    ParamStore params = random_model(cfg, 31, 0.05);
    Rng rng(32, "decode");
    ConditioningContext ctx = random_context(cfg, rng);
    ClipResult r = generate_clip(cfg, params, ctx, 3, sampler_config_from(cfg));

    CHECK(r.latent.frames == cfg.lat_frames());
    CHECK(r.latent.height == cfg.lat_h());
    CHECK(r.latent.width == cfg.lat_w());
    CHECK(r.latent.channels == cfg.c_lat);
    CHECK(r.video.frames == cfg.clip_frames);
    CHECK(r.video.height == cfg.world_h);
    CHECK(r.video.width == cfg.world_w);

    CodecSpec codec{cfg.c_s, cfg.c_t, cfg.c_lat};
    std::vector<float> rgb = decode_video(r.latent, codec, TemporalMode::first_frame_plus);
    CHECK(bitwise_equal(rgb, r.video.rgb));
}

TEST_CASE("coarse grids converge to a fine reference") {
    Config cfg = tiny_config();
    ParamStore params = random_model(cfg, 41, 0.02);
    ModelConfig mcfg = model_config_from(cfg);
    Rng rng(42, "convergence");
    ConditioningContext ctx = random_context(cfg, rng);
    VelocityFn vfn = [&](const Latent& z, double t) {
        return cfg_velocity(mcfg, params, z, ctx, t, 2.0, 1.5);
    };

    Latent ref = flow_sample(vfn, cfg.lat_frames(), cfg.lat_h(), cfg.lat_w(), cfg.c_lat, 9, 256,
                             OdeMethod::euler);
    double prev = 1e9;
    for (size_t steps : {4, 8, 16, 32}) {
        Latent z = flow_sample(vfn, cfg.lat_frames(), cfg.lat_h(), cfg.lat_w(), cfg.c_lat, 9,
                               steps, OdeMethod::euler);
        double err = rel_l2(z, ref);
        CHECK(err < prev);
        prev = err;
    }
    CHECK(prev < 0.05);
}

TEST_CASE("a single chained clip reduces to generate_clip") {
    Config cfg = tiny_config();
    cfg.sample_steps = 3;
    ParamStore params = random_model(cfg, 51, 0.05);
    Rng rng(52, "single");
    ConditioningContext ctx = random_context(cfg, rng);
    SamplerConfig sampler = sampler_config_from(cfg);

    LongResult lr = generate_long(cfg, params, {ctx}, 7, sampler);
    ClipResult single = generate_clip(cfg, params, ctx, 7, sampler);
    REQUIRE(lr.clips.size() == 1);
    CHECK(bitwise_equal(lr.clips[0].latent.data, single.latent.data));
    CHECK(bitwise_equal(lr.clips[0].video.rgb, single.video.rgb));
}

TEST_CASE("chained clips reuse the anchor and the previous motion frames") {
    Config cfg = tiny_config();
    cfg.sample_steps = 2;
    ParamStore params = random_model(cfg, 61, 0.05);
    Rng rng(62, "chain");
    ConditioningContext ctx0 = random_context(cfg, rng);
    ConditioningContext ctx1 = random_context(cfg, rng);
    ConditioningContext ctx2 = random_context(cfg, rng);
    SamplerConfig sampler = sampler_config_from(cfg);

    LongResult lr = generate_long(cfg, params, {ctx0, ctx1, ctx2}, 13, sampler);
    REQUIRE(lr.clips.size() == 3);

    // The anchor is the re-encoded first decoded frame of clip zero.
    CodecSpec codec{cfg.c_s, cfg.c_t, cfg.c_lat};
    LatentGeometry g{cfg.c_s, cfg.c_t, cfg.patch, TemporalMode::first_frame_plus};
    Latent bg = encode_video(lr.clips[0].video.frame(0), 1, cfg.world_h, cfg.world_w, codec,
                             TemporalMode::plain);
    TokenGrid anchor = patchify(bg, g, Origin::background, kBackgroundTime);
    REQUIRE(lr.anchor.size() == anchor.size());
    CHECK(bitwise_equal(lr.anchor.tokens, anchor.tokens));
    CHECK(lr.anchor.coords == anchor.coords);

    // Rebuilding clip 1's context by hand and sampling with the derived seed
    // reproduces the chained clip bitwise.
    ConditioningContext rebuilt = ctx1;
    rebuilt.background = anchor;
    const Latent& prev = lr.clips[0].latent;
    size_t stride = prev.height * prev.width * prev.channels;
    rebuilt.motion.frames = 2;
    rebuilt.motion.height = prev.height;
    rebuilt.motion.width = prev.width;
    rebuilt.motion.channels = prev.channels;
    rebuilt.motion.data.assign(prev.data.end() - 2 * stride, prev.data.end());
    uint64_t seed1 = Rng(13, "clip_seed").fork("1").next_u64();
    ClipResult again = generate_clip(cfg, params, rebuilt, seed1, sampler);
    CHECK(bitwise_equal(again.latent.data, lr.clips[1].latent.data));
    CHECK(bitwise_equal(again.video.rgb, lr.clips[1].video.rgb));

    CHECK_FALSE(bitwise_equal(lr.clips[1].latent.data, lr.clips[2].latent.data));
}

TEST_CASE("chaining rejects degenerate setups") {
    Config cfg = tiny_config();
    ParamStore params = random_model(cfg, 71, 0.05);
    SamplerConfig sampler = sampler_config_from(cfg);
    CHECK_THROWS(generate_long(cfg, params, {}, 1, sampler));

    Config one_frame = cfg;
    one_frame.clip_frames = 1;  // single latent frame, no motion tail to chain
    Rng rng(72, "degenerate");
    ConditioningContext ctx = random_context(one_frame, rng);
    ctx.audio.resize(one_frame.lat_frames() * one_frame.audio_tokens * one_frame.d_audio);
    CHECK_THROWS(generate_long(one_frame, params, {ctx, ctx}, 1, sampler));
}
