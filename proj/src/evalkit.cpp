#include "tavr/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "tavr/rng.hpp"
#include "tavr/tokenizer.hpp"

namespace tavr {

EmbeddingSequence embed_video(const Video& v) {
    if (v.boxes.size() != v.frames)
        throw std::runtime_error("embed_video: needs one face box per frame");
    EmbeddingSequence e;
    e.rows.reserve(v.frames);
    for (size_t t = 0; t < v.frames; ++t)
        e.rows.push_back(oracle_embed(v.frame(t), v.height, v.width, v.boxes[t]));
    return e;
}

namespace {

void check_rows(const EmbeddingSequence& e, size_t dim) {
    for (const auto& r : e.rows) {
        if (r.size() != dim)
            throw std::runtime_error("chamfer_similarity: embedding widths differ");
        double n = 0;
        for (double x : r) n += x * x;
        if (std::abs(std::sqrt(n) - 1.0) > 1e-6)
            throw std::runtime_error("chamfer_similarity: embedding row is not unit length");
    }
}

// Mean over rows of a of the best cosine match in b. The per-row maxima are
// summed in sorted order so the result ignores frame permutations exactly.
double one_sided(const EmbeddingSequence& a, const EmbeddingSequence& b) {
    std::vector<double> best;
    best.reserve(a.rows.size());
    for (const auto& ra : a.rows) {
        double m = -2.0;
        for (const auto& rb : b.rows) {
            double dot = 0;
            for (size_t k = 0; k < ra.size(); ++k) dot += ra[k] * rb[k];
            m = std::max(m, dot);
        }
        best.push_back(m);
    }
    std::sort(best.begin(), best.end());
    double sum = 0;
    for (double v : best) sum += v;
    return sum / double(best.size());
}

}  // namespace

double chamfer_similarity(const EmbeddingSequence& a, const EmbeddingSequence& b,
                          ChamferMode mode) {
    if (a.rows.empty() || b.rows.empty())
        throw std::runtime_error("chamfer_similarity: empty embedding sequence");
    check_rows(a, a.rows[0].size());
    check_rows(b, a.rows[0].size());
    switch (mode) {
        case ChamferMode::a_to_b: return one_sided(a, b);
        case ChamferMode::b_to_a: return one_sided(b, a);
        default: return 0.5 * (one_sided(a, b) + one_sided(b, a));
    }
}

double masked_psnr(const Video& a, const Video& b, const std::vector<float>& union_subject_mask) {
    if (a.frames != b.frames || a.height != b.height || a.width != b.width)
        throw std::runtime_error("masked_psnr: video shapes differ");
    if (union_subject_mask.size() != a.height * a.width)
        throw std::runtime_error("masked_psnr: mask shape mismatch");

    double sq = 0;
    size_t count = 0;
    for (size_t t = 0; t < a.frames; ++t) {
        const float* fa = a.frame(t);
        const float* fb = b.frame(t);
        for (size_t p = 0; p < a.frame_pixels(); ++p) {
            if (union_subject_mask[p] > 0.5f) continue;
            for (size_t c = 0; c < 3; ++c) {
                double d = double(fa[p * 3 + c]) - fb[p * 3 + c];
                sq += d * d;
            }
            ++count;
        }
    }
    if (count == 0)
        throw std::runtime_error("masked_psnr: mask covers every pixel");
    double mse = sq / double(count * 3);
    if (mse <= 0) return 100.0;
    return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

std::vector<float> union_subject_mask(const Video& a, const Video& b) {
    std::vector<float> ua = union_mask(a), ub = union_mask(b);
    if (ua.size() != ub.size())
        throw std::runtime_error("union_subject_mask: mask shapes differ");
    for (size_t i = 0; i < ua.size(); ++i) ua[i] = std::max(ua[i], ub[i]);
    return ua;
}

std::vector<BenchmarkPair> curate_pairs(const std::vector<CurationItem>& items, double tau_id) {
    std::vector<size_t> order(items.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t i, size_t j) { return items[i].id < items[j].id; });
    for (size_t k = 1; k < order.size(); ++k)
        if (items[order[k - 1]].id == items[order[k]].id)
            throw std::runtime_error("curate_pairs: duplicate video id " + items[order[k]].id);

    // Union-find over the similarity graph; canonical id order makes the
    // grouping and every tie break independent of the input order.
    std::vector<size_t> parent(order.size());
    std::iota(parent.begin(), parent.end(), 0);
    std::function<size_t(size_t)> find = [&](size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (size_t i = 0; i < order.size(); ++i)
        for (size_t j = i + 1; j < order.size(); ++j) {
            double sim = chamfer_similarity(items[order[i]].embed, items[order[j]].embed);
            if (sim >= tau_id) parent[find(j)] = find(i);
        }

    std::vector<std::vector<size_t>> groups(order.size());
    for (size_t k = 0; k < order.size(); ++k) groups[find(k)].push_back(k);

    std::vector<BenchmarkPair> out;
    for (const auto& g : groups) {
        if (g.size() < 2) continue;
        BenchmarkPair best;
        bool have = false;
        for (size_t i = 0; i < g.size(); ++i)
            for (size_t j = i + 1; j < g.size(); ++j) {
                const CurationItem& a = items[order[g[i]]];
                const CurationItem& b = items[order[g[j]]];
                double psnr = masked_psnr(a.video, b.video, union_subject_mask(a.video, b.video));
                if (!have || psnr < best.psnr) {
                    best.ref_id = a.id;
                    best.target_id = b.id;
                    best.psnr = psnr;
                    best.similarity = chamfer_similarity(a.embed, b.embed);
                    have = true;
                }
            }
        best.identity = items[order[g[0]]].id;
        out.push_back(best);
    }
    return out;
}

IdentityScore identity_eval(const Video& generated, const Video& reference, const Video& target,
                            const EmbedFn& embedder) {
    EmbeddingSequence eg = embedder(generated);
    IdentityScore s;
    s.id_ref = chamfer_similarity(eg, embedder(reference));
    s.id_target = chamfer_similarity(eg, embedder(target));
    return s;
}

double mouth_audio_corr(const Video& generated, const std::vector<double>& envelope) {
    if (generated.boxes.size() != generated.frames)
        throw std::runtime_error("mouth_audio_corr: needs one face box per frame");
    if (envelope.size() != generated.frames)
        throw std::runtime_error("mouth_audio_corr: envelope length must match the frame count");

    std::vector<double> ap(generated.frames);
    for (size_t t = 0; t < generated.frames; ++t)
        ap[t] = mouth_aperture(generated.frame(t), generated.height, generated.width,
                               generated.boxes[t]);

    double n = double(envelope.size());
    double me = std::accumulate(envelope.begin(), envelope.end(), 0.0) / n;
    double ma = std::accumulate(ap.begin(), ap.end(), 0.0) / n;
    double se = 0, sa = 0, sea = 0;
    for (size_t t = 0; t < envelope.size(); ++t) {
        double de = envelope[t] - me, da = ap[t] - ma;
        se += de * de;
        sa += da * da;
        sea += de * da;
    }
    if (se <= 1e-18)
        throw std::runtime_error("mouth_audio_corr: constant envelope has no correlation");
    // A frozen mouth carries no sync evidence; score it as uncorrelated
    // rather than failing the whole evaluation run.
    if (sa <= 1e-18) return 0.0;
    return sea / std::sqrt(se * sa);
}

std::vector<Box> estimate_subject_boxes(const Video& v, const std::vector<float>& clean_bg) {
    if (clean_bg.size() != v.frame_pixels() * 3)
        throw std::runtime_error("estimate_subject_boxes: background shape mismatch");

    // Inverts the renderer's layout: the painted footprint spans the face
    // outline horizontally, the hair arc on top and the chin at the bottom.
    constexpr double kDiffThreshold = 0.05;
    constexpr double kOutline = 1.1;
    constexpr double kHair = 1.12;
    constexpr double kPad = 1.5;

    std::vector<Box> boxes(v.frames);
    for (size_t t = 0; t < v.frames; ++t) {
        const float* frame = v.frame(t);
        double x0 = 1e9, y0 = 1e9, x1 = -1e9, y1 = -1e9;
        bool any = false;
        for (size_t y = 0; y < v.height; ++y)
            for (size_t x = 0; x < v.width; ++x) {
                size_t o = (y * v.width + x) * 3;
                double d = std::max({std::abs(double(frame[o]) - clean_bg[o]),
                                     std::abs(double(frame[o + 1]) - clean_bg[o + 1]),
                                     std::abs(double(frame[o + 2]) - clean_bg[o + 2])});
                if (d <= kDiffThreshold) continue;
                any = true;
                x0 = std::min(x0, x + 0.5);
                y0 = std::min(y0, y + 0.5);
                x1 = std::max(x1, x + 0.5);
                y1 = std::max(y1, y + 0.5);
            }
        if (!any) {
            boxes[t] = Box{0, 0, float(v.width), float(v.height)};
            continue;
        }
        double cx = 0.5 * (x0 + x1);
        double rx = 0.5 * (x1 - x0) - kOutline;
        double ry = (y1 - y0 - kOutline) / (1.0 + kHair);
        double cy = y1 - kOutline - ry;
        boxes[t] = Box{float(cx - rx - kPad), float(cy - ry - kPad), float(cx + rx + kPad),
                       float(cy + ry + kPad)};
    }
    return boxes;
}

EvalReport evaluate_clip(const Config& cfg, const Video& generated, const Sample& sample) {
    Video gen = generated;
    if (gen.boxes.size() != gen.frames)
        gen.boxes = estimate_subject_boxes(
            gen, scene_background(sample.target_scene, gen.height, gen.width));

    EmbeddingSequence eg = embed_video(gen);
    EvalReport r;
    r.id_ref = chamfer_similarity(eg, embed_video(sample.reference));
    r.id_target = chamfer_similarity(eg, embed_video(sample.target));
    r.mouth_corr = mouth_audio_corr(gen, sample.envelope);

    LatentGeometry g{cfg.c_s, cfg.c_t, cfg.patch, TemporalMode::first_frame_plus};
    TokenBudget b = count_tokens(cfg.clip_frames, cfg.world_h, cfg.world_w, g,
                                 sample.reference.frames, 0);
    r.tokens = b.n_total;
    r.flops = flops_ref_self_attn(b, cfg.d) * double(cfg.blocks);
    return r;
}

std::vector<SweepRow> reference_length_sweep(const Config& cfg, const ParamStore& params,
                                             const std::vector<uint64_t>& context_indices,
                                             const std::vector<size_t>& lengths,
                                             const SamplerConfig& sampler) {
    if (context_indices.empty())
        throw std::runtime_error("reference_length_sweep: no evaluation contexts");
    std::vector<SweepRow> rows;
    rows.reserve(lengths.size());
    Rng gen_seeds(cfg.seed, "sweep_gen");
    for (size_t length : lengths) {
        SweepRow row;
        row.length = length;
        for (uint64_t idx : context_indices) {
            Sample s = make_sample(cfg, cfg.seed, "eval", idx, DataMode::cross_scene, length);
            ConditioningContext ctx = sample_context(cfg, s, false);
            // The generation seed depends only on the context, so every length
            // sees the same initial noise and the reference is the lone delta.
            uint64_t seed = gen_seeds.fork(std::to_string(idx)).next_u64();
            ClipResult clip = generate_clip(cfg, params, ctx, seed, sampler);
            EvalReport r = evaluate_clip(cfg, clip.video, s);
            row.id_ref += r.id_ref;
            row.id_target += r.id_target;
            row.mouth_corr += r.mouth_corr;
        }
        double n = double(context_indices.size());
        row.id_ref /= n;
        row.id_target /= n;
        row.mouth_corr /= n;
        rows.push_back(row);
    }
    return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::string out = "length,id_ref,id_target,mouth_corr\n";
    char buf[128];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.6f,%.6f\n", r.length, r.id_ref, r.id_target,
                      r.mouth_corr);
        out += buf;
    }
    return out;
}

}  // namespace tavr
