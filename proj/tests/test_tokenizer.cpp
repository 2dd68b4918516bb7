#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <cstring>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "tavr/rng.hpp"
#include "tavr/tokenizer.hpp"
#include "tavr/toyworld.hpp"

using namespace tavr;

namespace {

Latent random_latent(size_t frames, size_t height, size_t width, size_t channels, Rng& rng) {
    Latent z;
    z.frames = frames;
    z.height = height;
    z.width = width;
    z.channels = channels;
    z.data.resize(z.size());
    for (float& v : z.data) v = float(rng.uniform(-1.0, 1.0));
    return z;
}

// Index of the original token with the given coords, or SIZE_MAX.
size_t find_coord(const TokenGrid& grid, const std::array<long, 3>& c) {
    for (size_t i = 0; i < grid.size(); ++i)
        if (grid.coords[i] == c) return i;
    return SIZE_MAX;
}

// Checks that every token of `sub` is a verbatim copy of the token with the
// same coords in `full`, i.e. selection touched membership only.
size_t value_mismatches(const TokenGrid& sub, const TokenGrid& full) {
    size_t bad = 0;
    for (size_t i = 0; i < sub.size(); ++i) {
        size_t j = find_coord(full, sub.coords[i]);
        if (j == SIZE_MAX || sub.origin[i] != full.origin[j] ||
            std::memcmp(sub.token(i), full.token(j), sub.d * sizeof(float)) != 0)
            ++bad;
    }
    return bad;
}

struct MacCounter {
    long long macs = 0;
};

std::vector<double> matmul_counted(const std::vector<double>& a, size_t n, size_t k,
                                   const std::vector<double>& b, size_t m, MacCounter& mc) {
    std::vector<double> out(n * m, 0.0);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < m; ++j) {
            double s = 0;
            for (size_t q = 0; q < k; ++q) {
                s += a[i * k + q] * b[q * m + j];
                ++mc.macs;
            }
            out[i * m + j] = s;
        }
    return out;
}

// Runs the two-step attention layer on random data, counting every scalar
// multiply-add in the projections and the attention products. Softmax is not
// counted, matching the cost model's terms.
long long counted_two_step_attention(const TokenBudget& b, size_t d, Rng& rng) {
    size_t n = b.n_total, nq1 = b.n_target + b.n_motion + b.n_bg, nref = b.n_ref;
    auto rand_mat = [&rng](size_t r, size_t c) {
        std::vector<double> m(r * c);
        for (double& v : m) v = rng.normal() * 0.1;
        return m;
    };
    std::vector<double> x = rand_mat(n, d);
    std::vector<double> wq = rand_mat(d, d), wk = rand_mat(d, d), wv = rand_mat(d, d),
                        wo = rand_mat(d, d);

    MacCounter mc;
    std::vector<double> q = matmul_counted(x, n, d, wq, d, mc);
    std::vector<double> k = matmul_counted(x, n, d, wk, d, mc);
    std::vector<double> v = matmul_counted(x, n, d, wv, d, mc);

    auto attend = [&](size_t q_off, size_t nq, size_t k_off, size_t nk) {
        std::vector<double> qs(q.begin() + q_off * d, q.begin() + (q_off + nq) * d);
        std::vector<double> kt(d * nk), vs(v.begin() + k_off * d, v.begin() + (k_off + nk) * d);
        for (size_t i = 0; i < nk; ++i)
            for (size_t j = 0; j < d; ++j) kt[j * nk + i] = k[(k_off + i) * d + j];
        std::vector<double> scores = matmul_counted(qs, nq, d, kt, nk, mc);
        for (size_t i = 0; i < nq; ++i) {
            double mx = scores[i * nk];
            for (size_t j = 1; j < nk; ++j) mx = std::max(mx, scores[i * nk + j]);
            double z = 0;
            for (size_t j = 0; j < nk; ++j) z += scores[i * nk + j] = std::exp(scores[i * nk + j] - mx);
            for (size_t j = 0; j < nk; ++j) scores[i * nk + j] /= z;
        }
        return matmul_counted(scores, nq, nk, vs, d, mc);
    };

    // Token layout: target+motion+bg rows first, reference rows last. Step 1
    // attends those first rows over everything, step 2 is reference-only.
    std::vector<double> out(n * d);
    std::vector<double> o1 = attend(0, nq1, 0, n);
    std::copy(o1.begin(), o1.end(), out.begin());
    if (nref) {
        std::vector<double> o2 = attend(nq1, nref, nq1, nref);
        std::copy(o2.begin(), o2.end(), out.begin() + nq1 * d);
    }
    matmul_counted(out, n, d, wo, d, mc);
    return mc.macs;
}

}  // namespace

TEST_CASE("patchify: coords, flattening order, and exact round trip") {
    LatentGeometry g;
    g.p = 2;

    Rng rng(500, "patchify");
    Latent z = random_latent(1, 4, 4, 3, rng);
    TokenGrid grid = patchify(z, g, Origin::target, 0);
    REQUIRE(grid.size() == 4);
    CHECK(grid.d == 12);
    CHECK(grid.coords[0] == std::array<long, 3>{0, 0, 0});
    CHECK(grid.coords[1] == std::array<long, 3>{0, 0, 1});
    CHECK(grid.coords[2] == std::array<long, 3>{0, 1, 0});
    CHECK(grid.coords[3] == std::array<long, 3>{0, 1, 1});
    for (Origin o : grid.origin) CHECK(o == Origin::target);

    // Encode the position into each value and read one token back.
    for (size_t y = 0; y < 4; ++y)
        for (size_t x = 0; x < 4; ++x)
            for (size_t c = 0; c < 3; ++c) z.data[(y * 4 + x) * 3 + c] = float(y * 100 + x * 10 + c);
    grid = patchify(z, g, Origin::target, 0);
    const float* tok = grid.token(3);  // patch (row 1, col 1) covers cells y,x in {2,3}
    size_t k = 0;
    for (size_t py = 2; py <= 3; ++py)
        for (size_t px = 2; px <= 3; ++px)
            for (size_t c = 0; c < 3; ++c) CHECK(tok[k++] == float(py * 100 + px * 10 + c));

    // Count formula and exact round trip over a few shapes.
    for (int trial = 0; trial < 6; ++trial) {
        Rng r = rng.fork("shape" + std::to_string(trial));
        size_t frames = 1 + r.index(4), ch = 1 + r.index(4);
        size_t h = g.p * (1 + r.index(5)), w = g.p * (1 + r.index(5));
        Latent in = random_latent(frames, h, w, ch, r);
        TokenGrid tg = patchify(in, g, Origin::reference, kReferenceTimeBase);
        CHECK(tg.size() == frames * (h / g.p) * (w / g.p));
        CHECK(tg.d == g.p * g.p * ch);

        std::set<std::array<long, 3>> uniq(tg.coords.begin(), tg.coords.end());
        CHECK(uniq.size() == tg.size());

        Latent back = unpatchify(tg, g, h, w, ch);
        REQUIRE(back.data.size() == in.data.size());
        size_t diff = 0;
        for (size_t i = 0; i < in.data.size(); ++i) diff += in.data[i] != back.data[i];
        CHECK(diff == 0);
    }

    CHECK_THROWS(patchify(random_latent(1, 3, 4, 2, rng), g, Origin::target, 0));
}

TEST_CASE("positional embedding: base pattern, equal coords, in-place add") {
    for (size_t d : {12u, 16u, 64u}) {
        std::vector<double> e = positional_embedding(0, 0, 0, d);
        for (size_t i = 0; i < d; i += 2) {
            CHECK(e[i] == 0.0);
            CHECK(e[i + 1] == 1.0);
        }
    }
    CHECK_THROWS(positional_embedding(0, 0, 0, 7));
    CHECK_THROWS(positional_embedding(0, 0, 0, 4));

    // Two tokens with the same coords pick up the same embedding.
    TokenGrid grid;
    grid.d = 12;
    grid.tokens.assign(24, 1.5f);
    grid.coords = {{3, 1, 2}, {3, 1, 2}};
    grid.origin = {Origin::reference, Origin::reference};
    add_positional(grid);
    std::vector<double> e = positional_embedding(3, 1, 2, 12);
    for (size_t k = 0; k < 12; ++k) {
        CHECK(grid.token(0)[k] == grid.token(1)[k]);
        CHECK(grid.token(0)[k] == doctest::Approx(1.5 + e[k]));
    }
}

TEST_CASE("positional embedding: distinct over an 8x8x8 coordinate cube") {
    const size_t d = 16;
    std::vector<std::vector<double>> embs;
    embs.reserve(512);
    for (long t = 0; t < 8; ++t)
        for (long r = 0; r < 8; ++r)
            for (long c = 0; c < 8; ++c) embs.push_back(positional_embedding(t, r, c, d));

    size_t collisions = 0;
    for (size_t i = 0; i < embs.size(); ++i)
        for (size_t j = i + 1; j < embs.size(); ++j) {
            double mx = 0;
            for (size_t k = 0; k < d; ++k) mx = std::max(mx, std::abs(embs[i][k] - embs[j][k]));
            collisions += mx < 1e-9;
        }
    CHECK(collisions == 0);
}

TEST_CASE("reference selection: matches a direct containment scan, values intact") {
    LatentGeometry g;
    g.c_s = 4;
    g.p = 2;  // 8 pixels per patch, latent 16x16 cells -> 64x64 pixels
    Rng rng(510, "ref_sel");
    Latent z = random_latent(3, 16, 16, 2, rng);
    TokenGrid grid = patchify(z, g, Origin::reference, kReferenceTimeBase);
    REQUIRE(grid.size() == 3 * 8 * 8);

    // Full-frame boxes keep everything, in order.
    std::vector<Box> full(3, Box{0, 0, 64, 64});
    TokenGrid all = select_reference_tokens(grid, full, g);
    CHECK(all.size() == grid.size());
    CHECK(all.coords == grid.coords);
    CHECK(value_mismatches(all, grid) == 0);

    for (int trial = 0; trial < 15; ++trial) {
        Rng r = rng.fork("t" + std::to_string(trial));
        std::vector<Box> boxes;
        for (int f = 0; f < 3; ++f) {
            Box b;
            b.x0 = float(r.uniform(0.0, 55.0));
            b.x1 = float(r.uniform(b.x0 + 8.0, 64.0));  // at least one patch centre wide
            b.y0 = float(r.uniform(0.0, 55.0));
            b.y1 = float(r.uniform(b.y0 + 8.0, 64.0));
            boxes.push_back(b);
        }
        TokenGrid sel = select_reference_tokens(grid, boxes, g);

        std::vector<std::array<long, 3>> expect;
        for (size_t i = 0; i < grid.size(); ++i) {
            const Box& b = boxes[size_t(grid.coords[i][0] - kReferenceTimeBase)];
            double cx = (double(grid.coords[i][2]) + 0.5) * 8.0;
            double cy = (double(grid.coords[i][1]) + 0.5) * 8.0;
            if (cx >= b.x0 && cx <= b.x1 && cy >= b.y0 && cy <= b.y1)
                expect.push_back(grid.coords[i]);
        }
        CHECK(sel.coords == expect);
        CHECK(value_mismatches(sel, grid) == 0);
    }

    std::vector<Box> empty(3, Box{1, 1, 2, 2});
    CHECK_THROWS(select_reference_tokens(grid, empty, g));
    std::vector<Box> missing(2, Box{0, 0, 64, 64});
    CHECK_THROWS(select_reference_tokens(grid, missing, g));
    TokenGrid wrong = patchify(z, g, Origin::target, kTargetTimeBase);
    CHECK_THROWS(select_reference_tokens(wrong, full, g));
}

TEST_CASE("background masking: matches a patch coverage scan") {
    LatentGeometry g;
    g.c_s = 4;
    g.p = 2;  // 8 pixels per patch
    Rng rng(520, "bg_mask");
    Latent z = random_latent(1, 16, 16, 3, rng);
    TokenGrid grid = patchify(z, g, Origin::background, kBackgroundTime);
    REQUIRE(grid.size() == 64);

    std::vector<float> mask(64 * 64, 0.0f);
    TokenGrid kept = mask_background_tokens(grid, mask.data(), 64, 64, g);
    CHECK(kept.size() == grid.size());
    CHECK(kept.coords == grid.coords);

    mask.assign(64 * 64, 1.0f);
    kept = mask_background_tokens(grid, mask.data(), 64, 64, g);
    CHECK(kept.size() == 0);

    for (int trial = 0; trial < 15; ++trial) {
        Rng r = rng.fork("t" + std::to_string(trial));
        mask.assign(64 * 64, 0.0f);
        size_t rects = 1 + r.index(3);
        for (size_t q = 0; q < rects; ++q) {
            size_t x0 = r.index(50), y0 = r.index(50);
            size_t x1 = std::min<size_t>(64, x0 + 6 + r.index(30));
            size_t y1 = std::min<size_t>(64, y0 + 6 + r.index(30));
            for (size_t y = y0; y < y1; ++y)
                for (size_t x = x0; x < x1; ++x) mask[y * 64 + x] = 1.0f;
        }
        kept = mask_background_tokens(grid, mask.data(), 64, 64, g);

        std::vector<std::array<long, 3>> expect;
        for (size_t i = 0; i < grid.size(); ++i) {
            size_t px0 = size_t(grid.coords[i][2]) * 8, py0 = size_t(grid.coords[i][1]) * 8;
            bool covered = true;
            for (size_t y = py0; y < py0 + 8; ++y)
                for (size_t x = px0; x < px0 + 8; ++x) covered &= mask[y * 64 + x] > 0.5f;
            if (!covered) expect.push_back(grid.coords[i]);
        }
        CHECK(kept.coords == expect);
        CHECK(value_mismatches(kept, grid) == 0);
    }

    TokenGrid wrong = patchify(z, g, Origin::motion, kMotionTimeBase);
    CHECK_THROWS(mask_background_tokens(wrong, mask.data(), 64, 64, g));
}

TEST_CASE("token accounting: published shape, toy shape, and error cases") {
    LatentGeometry paper;
    paper.c_s = 8;
    paper.c_t = 4;
    paper.p = 2;
    TokenBudget b = count_tokens(81, 480, 896, paper, 20, 0);
    CHECK(b.n_target == 35280);
    CHECK(b.n_bg == 1680);
    CHECK(b.n_ref == 8400);
    CHECK(b.n_motion == 0);
    CHECK(b.n_total == 45360);

    TokenBudget noref = count_tokens(81, 480, 896, paper, 0, 0);
    CHECK(noref.n_ref == 0);
    CHECK(noref.n_total == noref.n_target + noref.n_bg);

    LatentGeometry toy;  // defaults: c_s=8, c_t=1, p=2
    TokenBudget t = count_tokens(8, 64, 64, toy, 4, 0);
    CHECK(t.n_target == 128);
    CHECK(t.n_bg == 16);
    CHECK(t.n_ref == 64);
    CHECK(t.n_total == 208);

    CHECK_THROWS(count_tokens(82, 480, 896, paper, 20, 0));   // (T-1) not a multiple of c_t
    CHECK_THROWS(count_tokens(81, 480, 896, paper, 21, 0));   // T_ref not a multiple of c_t
    CHECK_THROWS(count_tokens(81, 480, 896, paper, 20, 3));   // motion frames likewise
    CHECK_THROWS(count_tokens(81, 500, 896, paper, 20, 0));   // height not divisible by c_s*p
    CHECK_THROWS(count_tokens(81, 480, 896, paper, 20, 0, 8401, SIZE_MAX));
}

TEST_CASE("token accounting: agrees with the produced grids for random configs") {
    Rng rng(530, "budget_pipe");
    const size_t cs_opts[] = {2, 4, 8}, ct_opts[] = {1, 2, 4};
    for (int trial = 0; trial < 50; ++trial) {
        Rng r = rng.fork("cfg" + std::to_string(trial));
        LatentGeometry g;
        g.c_s = cs_opts[r.index(3)];
        g.c_t = ct_opts[r.index(3)];
        g.p = 1 + r.index(2);
        size_t px = g.c_s * g.p;
        size_t H = px * (1 + r.index(4)), W = px * (1 + r.index(4));
        size_t T = 1 + g.c_t * r.index(5);
        size_t T_ref = g.c_t * r.index(4);
        size_t T_motion = g.c_t * r.index(3);
        size_t ch = 1 + r.index(4);

        Latent zt = random_latent(latent_frame_count(T, g.c_t, TemporalMode::first_frame_plus),
                                  H / g.c_s, W / g.c_s, ch, r);
        Latent zb = random_latent(1, H / g.c_s, W / g.c_s, ch, r);
        Latent zr = random_latent(latent_frame_count(T_ref, g.c_t, TemporalMode::plain), H / g.c_s,
                                  W / g.c_s, ch, r);
        Latent zm = random_latent(latent_frame_count(T_motion, g.c_t, TemporalMode::plain),
                                  H / g.c_s, W / g.c_s, ch, r);
        TokenGrid gt = patchify(zt, g, Origin::target, kTargetTimeBase);
        TokenGrid gb = patchify(zb, g, Origin::background, kBackgroundTime);
        TokenGrid gr = patchify(zr, g, Origin::reference, kReferenceTimeBase);
        TokenGrid gm = patchify(zm, g, Origin::motion, kMotionTimeBase);

        TokenBudget b = count_tokens(T, H, W, g, T_ref, T_motion);
        CHECK(b.n_target == gt.size());
        CHECK(b.n_bg == gb.size());
        CHECK(b.n_ref == gr.size());
        CHECK(b.n_motion == gm.size());
        CHECK(b.n_total == gt.size() + gb.size() + gr.size() + gm.size());

        // With selection: boxes wide enough to keep at least one centre.
        std::vector<Box> boxes;
        for (size_t f = 0; f < zr.frames; ++f) {
            Box bx;
            bx.x0 = float(r.uniform(0.0, double(W - px)));
            bx.x1 = float(r.uniform(bx.x0 + double(px), double(W)));
            bx.y0 = float(r.uniform(0.0, double(H - px)));
            bx.y1 = float(r.uniform(bx.y0 + double(px), double(H)));
            boxes.push_back(bx);
        }
        TokenGrid sel = select_reference_tokens(gr, boxes, g);
        std::vector<float> mask(H * W, 0.0f);
        for (size_t y = 0; y < H / 2; ++y)
            for (size_t x = 0; x < W; ++x) mask[y * W + x] = 1.0f;
        TokenGrid keptbg = mask_background_tokens(gb, mask.data(), H, W, g);

        TokenBudget bs = count_tokens(T, H, W, g, T_ref, T_motion, sel.size(), keptbg.size());
        CHECK(bs.n_total == gt.size() + gm.size() + sel.size() + keptbg.size());
    }
}

TEST_CASE("token selection on a rendered scene strictly shrinks the budget") {
    Rng rng(540, "select_scene");
    Rng id_rng = rng.fork("id"), sc_rng = rng.fork("sc"), env_rng = rng.fork("env");
    IdentitySpec id = sample_identity(id_rng);
    SceneSpec sc = sample_scene(sc_rng);
    std::vector<double> env = synth_envelope(8, env_rng);
    Video v = render_video(id, sc, 64, 64, env, 17);
    Video ref_v = render_video(id, sc, 64, 64, {0.2, 0.5, 0.8, 0.3}, 91);

    CodecSpec codec{8, 1, 4};
    LatentGeometry g;  // c_s=8, c_t=1, p=2 matches the codec
    Latent zt = encode_video(v, codec, TemporalMode::first_frame_plus);
    Latent zr = encode_video(ref_v, codec, TemporalMode::plain);
    std::vector<float> plate = background_plate(v);
    Latent zb = encode_video(plate.data(), 1, 64, 64, codec, TemporalMode::plain);

    TokenGrid gt = patchify(zt, g, Origin::target, kTargetTimeBase);
    TokenGrid gr = patchify(zr, g, Origin::reference, kReferenceTimeBase);
    TokenGrid gb = patchify(zb, g, Origin::background, kBackgroundTime);
    REQUIRE(gt.size() == 128);
    REQUIRE(gr.size() == 64);
    REQUIRE(gb.size() == 16);

    // The temporal streams never share a coordinate.
    long t_max_target = 0;
    for (const auto& c : gt.coords) t_max_target = std::max(t_max_target, c[0]);
    CHECK(t_max_target < kBackgroundTime);
    for (const auto& c : gr.coords) CHECK(c[0] >= kReferenceTimeBase);
    for (const auto& c : gb.coords) CHECK(c[0] == kBackgroundTime);

    for (const Box& b : ref_v.boxes) {
        CHECK(b.x0 > 0);
        CHECK(b.x1 < 64);
        CHECK(b.y0 > 0);
        CHECK(b.y1 < 64);
    }
    TokenGrid sel = select_reference_tokens(gr, ref_v.boxes, g);
    CHECK(sel.size() >= 4);  // at least one token per reference frame survives
    CHECK(sel.size() < gr.size());

    std::vector<float> um = union_mask(v);
    TokenGrid keptbg = mask_background_tokens(gb, um.data(), 64, 64, g);
    CHECK(keptbg.size() <= gb.size());

    TokenBudget b = count_tokens(8, 64, 64, g, 4, 0, sel.size(), keptbg.size());
    CHECK(b.n_total == 128 + sel.size() + keptbg.size());
    CHECK(b.n_total < 208);
}

TEST_CASE("attention cost: instrumented counter, published total, monotonicity") {
    LatentGeometry toy;
    Rng rng(550, "flops");

    TokenBudget t1 = count_tokens(8, 64, 64, toy, 4, 0);
    Rng r1 = rng.fork("a");
    CHECK(flops_ref_self_attn(t1, 16) == double(2 * counted_two_step_attention(t1, 16, r1)));

    TokenBudget t2 = count_tokens(8, 64, 64, toy, 4, 2);  // with motion conditioning
    Rng r2 = rng.fork("b");
    CHECK(flops_ref_self_attn(t2, 16) == double(2 * counted_two_step_attention(t2, 16, r2)));

    // Post-selection budget still matches the counter.
    TokenBudget t3 = count_tokens(8, 64, 64, toy, 4, 2, 17, 9);
    Rng r3 = rng.fork("c");
    CHECK(flops_ref_self_attn(t3, 16) == double(2 * counted_two_step_attention(t3, 16, r3)));

    LatentGeometry paper;
    paper.c_s = 8;
    paper.c_t = 4;
    paper.p = 2;
    TokenBudget pb = count_tokens(81, 480, 896, paper, 20, 0);
    double f = flops_ref_self_attn(pb, 5120);
    CHECK(std::abs(f - 45.30e12) / 45.30e12 < 0.01);

    // Without reference or background tokens the layer is plain self-attention.
    TokenBudget plain;
    plain.n_target = 100;
    plain.n_total = 100;
    CHECK(flops_ref_self_attn(plain, 64) ==
          8.0 * 100 * 64 * 64 + 4.0 * 100 * 100 * 64);

    for (int trial = 0; trial < 20; ++trial) {
        Rng r = rng.fork("mono" + std::to_string(trial));
        TokenBudget base;
        base.n_target = r.index(200);
        base.n_bg = r.index(50);
        base.n_ref = r.index(100);
        base.n_motion = r.index(50);
        base.n_total = base.n_target + base.n_bg + base.n_ref + base.n_motion;
        size_t d = 8 * (1 + r.index(8));
        double f0 = flops_ref_self_attn(base, d);
        for (int field = 0; field < 4; ++field) {
            TokenBudget up = base;
            size_t delta = 1 + r.index(20);
            (field == 0 ? up.n_target
             : field == 1 ? up.n_bg
             : field == 2 ? up.n_ref
                          : up.n_motion) += delta;
            up.n_total += delta;
            CHECK(flops_ref_self_attn(up, d) >= f0);
        }
    }
}
