#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "tavr/evalkit.hpp"
#include "tavr/rng.hpp"
#include "tavr/tokenizer.hpp"

using namespace tavr;

namespace {

std::vector<double> unit_row(Rng& rng, size_t dim) {
    std::vector<double> r(dim);
    double n = 0;
    for (auto& v : r) {
        v = rng.normal();
        n += v * v;
    }
    n = std::sqrt(n);
    for (auto& v : r) v /= n;
    return r;
}

EmbeddingSequence random_embed(Rng& rng, size_t frames, size_t dim = 16) {
    EmbeddingSequence e;
    for (size_t i = 0; i < frames; ++i) e.rows.push_back(unit_row(rng, dim));
    return e;
}

// Independent reference: exhaustive best-match means, maxima summed in
// sorted order.
double chamfer_oracle(const EmbeddingSequence& a, const EmbeddingSequence& b) {
    auto side = [](const EmbeddingSequence& x, const EmbeddingSequence& y) {
        std::vector<double> best;
        for (const auto& rx : x.rows) {
            double m = -2;
            for (const auto& ry : y.rows) {
                double dot = 0;
                for (size_t k = 0; k < rx.size(); ++k) dot += rx[k] * ry[k];
                if (dot > m) m = dot;
            }
            best.push_back(m);
        }
        std::sort(best.begin(), best.end());
        double s = 0;
        for (double v : best) s += v;
        return s / double(best.size());
    };
    return 0.5 * (side(a, b) + side(b, a));
}

Video render_case(const IdentitySpec& id, const SceneSpec& scene, size_t frames, uint64_t seed) {
    Rng rng(seed, "render_case");
    std::vector<double> env = synth_envelope(frames, rng);
    return render_video(id, scene, 64, 64, env, seed);
}

}  // namespace

TEST_CASE("chamfer similarity basics") {
    Rng rng(3, "chamfer");
    EmbeddingSequence a = random_embed(rng, 6);
    CHECK(chamfer_similarity(a, a) == doctest::Approx(1.0).epsilon(1e-6));

    EmbeddingSequence x, y;
    std::vector<double> e1(16, 0.0), e2(16, 0.0);
    e1[0] = 1.0;
    e2[1] = 1.0;
    x.rows = {e1};
    y.rows = {e2};
    CHECK(chamfer_similarity(x, y) == 0.0);

    EmbeddingSequence b = random_embed(rng, 8);
    EmbeddingSequence a5 = random_embed(rng, 5);
    CHECK(chamfer_similarity(a5, b) == chamfer_oracle(a5, b));
    CHECK(chamfer_similarity(a5, b, ChamferMode::a_to_b) +
              chamfer_similarity(a5, b, ChamferMode::b_to_a) ==
          doctest::Approx(2.0 * chamfer_similarity(a5, b)).epsilon(1e-15));

    CHECK_THROWS(chamfer_similarity(EmbeddingSequence{}, a));
    CHECK_THROWS(chamfer_similarity(a, EmbeddingSequence{}));

    EmbeddingSequence bad = a;
    bad.rows[0][0] += 0.01;
    CHECK_THROWS(chamfer_similarity(bad, a));

    EmbeddingSequence narrow;
    narrow.rows = {std::vector<double>(4, 0.5)};
    CHECK_THROWS(chamfer_similarity(a, narrow));
}

TEST_CASE("chamfer similarity is symmetric and permutation invariant exactly") {
    Rng rng(4, "chamfer_sym");
    EmbeddingSequence a = random_embed(rng, 7);
    EmbeddingSequence b = random_embed(rng, 5);
    double base = chamfer_similarity(a, b);
    CHECK(chamfer_similarity(b, a) == base);

    std::mt19937 gen(11);
    for (int trial = 0; trial < 5; ++trial) {
        EmbeddingSequence pa = a, pb = b;
        std::shuffle(pa.rows.begin(), pa.rows.end(), gen);
        std::shuffle(pb.rows.begin(), pb.rows.end(), gen);
        CHECK(chamfer_similarity(pa, pb) == base);
    }
}

TEST_CASE("masked psnr formula, cap, and mask invariance") {
    Rng rng(5, "psnr");
    size_t h = 16, w = 16, frames = 2;
    Video a;
    a.frames = frames;
    a.height = h;
    a.width = w;
    a.rgb.resize(frames * h * w * 3);
    for (auto& v : a.rgb) v = float(rng.uniform());

    std::vector<float> mask(h * w, 0.0f);
    for (size_t p = 0; p < h * w; ++p) mask[p] = (p % 3 == 0) ? 1.0f : 0.0f;

    CHECK(masked_psnr(a, a, mask) == 100.0);

    // Uniform +0.1 outside the mask: MSE 0.01, 20 dB.
    Video b = a;
    for (size_t t = 0; t < frames; ++t)
        for (size_t p = 0; p < h * w; ++p) {
            if (mask[p] > 0.5f) continue;
            for (size_t c = 0; c < 3; ++c) b.rgb[(t * h * w + p) * 3 + c] += 0.1f;
        }
    CHECK(masked_psnr(a, b, mask) == doctest::Approx(20.0).epsilon(1e-4));

    // Random case against a direct pixel-loop oracle.
    Video r = a;
    for (auto& v : r.rgb) v = float(rng.uniform());
    double sq = 0;
    size_t count = 0;
    for (size_t t = 0; t < frames; ++t)
        for (size_t p = 0; p < h * w; ++p) {
            if (mask[p] > 0.5f) continue;
            ++count;
            for (size_t c = 0; c < 3; ++c) {
                double d = double(a.rgb[(t * h * w + p) * 3 + c]) - r.rgb[(t * h * w + p) * 3 + c];
                sq += d * d;
            }
        }
    double want = std::min(100.0, 10.0 * std::log10(double(count * 3) / sq));
    CHECK(masked_psnr(a, r, mask) == doctest::Approx(want).epsilon(1e-12));

    // Pixels under the mask never matter.
    Video m = r;
    for (size_t t = 0; t < frames; ++t)
        for (size_t p = 0; p < h * w; ++p)
            if (mask[p] > 0.5f)
                for (size_t c = 0; c < 3; ++c) m.rgb[(t * h * w + p) * 3 + c] = 0.77f;
    CHECK(masked_psnr(a, m, mask) == masked_psnr(a, r, mask));

    CHECK_THROWS(masked_psnr(a, b, std::vector<float>(h * w, 1.0f)));
    CHECK_THROWS(masked_psnr(a, b, std::vector<float>(h * w - 1, 0.0f)));
    Video wrong = a;
    wrong.frames = 1;
    CHECK_THROWS(masked_psnr(a, wrong, mask));
}

TEST_CASE("pair curation matches the exhaustive argmin oracle") {
    Rng rng(6, "curate");
    auto ids = sample_distinct_identities(rng, 6);
    std::vector<CurationItem> items;
    for (size_t i = 0; i < ids.size(); ++i) {
        size_t scenes = (i == 5) ? 1 : 3;  // one identity contributes a single video
        for (size_t j = 0; j < scenes; ++j) {
            CurationItem it;
            it.id = "v" + std::to_string(i) + std::to_string(j);
            it.video = render_case(ids[i], sample_scene(rng), 6, 1000 + i * 10 + j);
            it.embed = embed_video(it.video);
            items.push_back(std::move(it));
        }
    }

    auto pairs = curate_pairs(items);
    REQUIRE(pairs.size() == 5);
    for (size_t i = 0; i < pairs.size(); ++i) {
        const auto& p = pairs[i];
        CHECK(p.ref_id.substr(1, 1) == std::to_string(i));
        CHECK(p.target_id.substr(1, 1) == std::to_string(i));
        CHECK(p.ref_id < p.target_id);
        CHECK(p.identity == "v" + std::to_string(i) + "0");
        CHECK(p.similarity >= 0.85);

        // Exhaustive argmin over the identity's three videos.
        std::vector<const CurationItem*> group;
        for (const auto& it : items)
            if (it.id.substr(1, 1) == std::to_string(i)) group.push_back(&it);
        double best = 1e18;
        std::string ra, rb;
        for (size_t a = 0; a < group.size(); ++a)
            for (size_t b = a + 1; b < group.size(); ++b) {
                double ps = masked_psnr(group[a]->video, group[b]->video,
                                        union_subject_mask(group[a]->video, group[b]->video));
                if (ps < best) {
                    best = ps;
                    ra = group[a]->id;
                    rb = group[b]->id;
                }
            }
        CHECK(p.ref_id == ra);
        CHECK(p.target_id == rb);
        CHECK(p.psnr == doctest::Approx(best).epsilon(1e-12));
    }

    SUBCASE("output ignores input order") {
        std::mt19937 gen(17);
        for (int trial = 0; trial < 3; ++trial) {
            auto shuffled = items;
            std::shuffle(shuffled.begin(), shuffled.end(), gen);
            auto again = curate_pairs(shuffled);
            REQUIRE(again.size() == pairs.size());
            for (size_t i = 0; i < pairs.size(); ++i) {
                CHECK(again[i].ref_id == pairs[i].ref_id);
                CHECK(again[i].target_id == pairs[i].target_id);
                CHECK(again[i].psnr == pairs[i].psnr);
            }
        }
    }

    SUBCASE("duplicate ids are rejected") {
        auto dup = items;
        dup[1].id = dup[0].id;
        CHECK_THROWS(curate_pairs(dup));
    }
}

TEST_CASE("equal-psnr ties pick the lexicographically smallest pair") {
    Rng rng(7, "ties");
    Video v;
    v.frames = 1;
    v.height = 8;
    v.width = 8;
    v.rgb.resize(8 * 8 * 3, 0.25f);
    v.mask.resize(8 * 8, 0.0f);
    std::vector<double> shared = unit_row(rng, 16);
    std::vector<CurationItem> items;
    for (const char* id : {"c", "a", "b"}) {
        CurationItem it;
        it.id = id;
        it.video = v;  // identical videos: every pair caps at 100 dB
        it.embed.rows = {shared};
        items.push_back(std::move(it));
    }
    auto pairs = curate_pairs(items);
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].ref_id == "a");
    CHECK(pairs[0].target_id == "b");
    CHECK(pairs[0].psnr == 100.0);
    CHECK(pairs[0].identity == "a");
}

TEST_CASE("identity eval scores against reference and target") {
    Rng rng(8, "identity_eval");
    auto ids = sample_distinct_identities(rng, 2);
    SceneSpec s1 = sample_scene(rng), s2 = sample_scene(rng);
    Video target = render_case(ids[0], s1, 6, 500);
    Video reference = render_case(ids[0], s2, 6, 501);

    IdentityScore s = identity_eval(target, reference, target);
    CHECK(s.id_target == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(s.id_ref >= 0.85);
    CHECK(s.id_ref <= 1.0);

    Video other = render_case(ids[1], s1, 6, 502);
    IdentityScore cross = identity_eval(other, reference, target);
    CHECK(cross.id_ref < s.id_ref);

    SUBCASE("orthogonal embeddings give zero") {
        EmbedFn fake = [&](const Video& video) {
            EmbeddingSequence e;
            std::vector<double> r(16, 0.0);
            r[&video == &target ? 0 : (&video == &reference ? 1 : 2)] = 1.0;
            e.rows = {r};
            return e;
        };
        Video gen;
        gen.frames = 1;
        IdentityScore z = identity_eval(gen, reference, target, fake);
        CHECK(z.id_ref == 0.0);
        CHECK(z.id_target == 0.0);
    }

    SUBCASE("three-frame case matches the double-loop oracle") {
        EmbeddingSequence eg, er, et;
        Rng r2(9, "threeframe");
        eg = random_embed(r2, 3);
        er = random_embed(r2, 4);
        et = random_embed(r2, 2);
        std::vector<const EmbeddingSequence*> table = {&eg, &er, &et};
        size_t next = 0;
        EmbedFn fake = [&](const Video&) { return *table[next++]; };
        Video dummy;
        dummy.frames = 1;
        IdentityScore z = identity_eval(dummy, dummy, dummy, fake);
        CHECK(z.id_ref == chamfer_oracle(eg, er));
        CHECK(z.id_target == chamfer_oracle(eg, et));
    }
}

TEST_CASE("mouth readout correlates with the driving envelope") {
    Rng id_rng(10, "mouth_id");
    auto ids = sample_distinct_identities(id_rng, 1);
    SceneSpec scene = sample_scene(id_rng);
    Rng env_rng(16, "mouth");
    std::vector<double> env = synth_envelope(24, env_rng);
    Video v = render_video(ids[0], scene, 64, 64, env, 77);

    CHECK(mouth_audio_corr(v, env) > 0.95);

    std::vector<double> rev(env.rbegin(), env.rend());
    CHECK(mouth_audio_corr(v, rev) < -0.5);

    CHECK_THROWS(mouth_audio_corr(v, std::vector<double>(24, 0.4)));
    CHECK_THROWS(mouth_audio_corr(v, std::vector<double>(23, 0.4)));
    Video no_boxes = v;
    no_boxes.boxes.clear();
    CHECK_THROWS(mouth_audio_corr(no_boxes, env));
}

TEST_CASE("estimated subject boxes track the renderer") {
    Rng rng(11, "boxes");
    auto ids = sample_distinct_identities(rng, 2);
    for (size_t i = 0; i < ids.size(); ++i) {
        SceneSpec scene = sample_scene(rng);
        std::vector<double> env = synth_envelope(8, rng);
        Video v = render_video(ids[i], scene, 64, 64, env, 300 + i);
        std::vector<float> bg = scene_background(scene, 64, 64);
        auto est = estimate_subject_boxes(v, bg);
        REQUIRE(est.size() == v.frames);
        for (size_t t = 0; t < v.frames; ++t) {
            CHECK(std::abs(est[t].x0 - v.boxes[t].x0) < 2.0);
            CHECK(std::abs(est[t].y0 - v.boxes[t].y0) < 2.0);
            CHECK(std::abs(est[t].x1 - v.boxes[t].x1) < 2.0);
            CHECK(std::abs(est[t].y1 - v.boxes[t].y1) < 2.0);
            auto a = oracle_embed(v.frame(t), 64, 64, v.boxes[t]);
            auto b = oracle_embed(v.frame(t), 64, 64, est[t]);
            double dot = 0;
            for (size_t k = 0; k < a.size(); ++k) dot += a[k] * b[k];
            CHECK(dot > 0.99);
        }
        Video blank;
        blank.frames = 1;
        blank.height = 64;
        blank.width = 64;
        blank.rgb = bg;  // no subject: falls back to the full frame
        auto fb = estimate_subject_boxes(blank, bg);
        CHECK(fb[0].x0 == 0.0f);
        CHECK(fb[0].x1 == 64.0f);
    }
    CHECK_THROWS(estimate_subject_boxes(Video{}, std::vector<float>(3, 0.0f)));
}

TEST_CASE("clip evaluation scores a ground-truth clip highly") {
    Config cfg;
    Sample s = make_sample(cfg, 19, "eval", 0, DataMode::cross_scene, 8);

    EvalReport r = evaluate_clip(cfg, s.target, s);
    CHECK(r.id_target == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(r.id_ref >= 0.85);
    CHECK(r.mouth_corr > 0.95);
    CHECK(r.tokens > 0);
    CHECK(r.flops > 0);

    // Without ground-truth boxes the estimator path should land close.
    Video stripped = s.target;
    stripped.boxes.clear();
    EvalReport e = evaluate_clip(cfg, stripped, s);
    CHECK(e.id_target > 0.98);
    CHECK(e.mouth_corr > 0.9);
}

TEST_CASE("reference length sweep emits requested rows deterministically") {
    Config cfg;
    cfg.blocks = 1;
    cfg.sample_steps = 2;
    ParamStore params = init_params(model_config_from(cfg), 23);
    randomize_params(params, 24, 0.05);
    SamplerConfig sampler = sampler_config_from(cfg);
    sampler.steps = 2;

    std::vector<uint64_t> contexts = {0, 1};
    std::vector<size_t> lengths = {8, 4};
    auto rows = reference_length_sweep(cfg, params, contexts, lengths, sampler);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].length == 8);
    CHECK(rows[1].length == 4);
    for (const auto& r : rows) {
        CHECK(r.id_ref >= -1.0);
        CHECK(r.id_ref <= 1.0);
        CHECK(r.id_target >= -1.0);
        CHECK(r.id_target <= 1.0);
    }

    auto again = reference_length_sweep(cfg, params, contexts, lengths, sampler);
    for (size_t i = 0; i < rows.size(); ++i) {
        CHECK(again[i].id_ref == rows[i].id_ref);
        CHECK(again[i].id_target == rows[i].id_target);
        CHECK(again[i].mouth_corr == rows[i].mouth_corr);
    }

    auto single = reference_length_sweep(cfg, params, contexts, {4}, sampler);
    REQUIRE(single.size() == 1);
    CHECK(single[0].length == 4);

    std::string csv = sweep_csv(rows);
    CHECK(csv.rfind("length,id_ref,id_target,mouth_corr\n", 0) == 0);
    CHECK(csv.find("\n8,") != std::string::npos);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);

    CHECK_THROWS(reference_length_sweep(cfg, params, {}, lengths, sampler));
}
