#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tavr/config.hpp"
#include "tavr/dataset.hpp"
#include "tavr/model.hpp"
#include "tavr/sampler.hpp"
#include "tavr/toyworld.hpp"

namespace tavr {

// Per-frame identity embeddings; every row is a unit vector.
struct EmbeddingSequence {
    std::vector<std::vector<double>> rows;
    size_t size() const { return rows.size(); }
};

// Embeds every frame with the appearance oracle. The video must carry one
// face box per frame.
EmbeddingSequence embed_video(const Video& v);

enum class ChamferMode { symmetric, a_to_b, b_to_a };

// Mean-of-best-match cosine similarity between two frame sets. The symmetric
// default averages both directions; the one-sided modes exist for
// sensitivity studies.
double chamfer_similarity(const EmbeddingSequence& a, const EmbeddingSequence& b,
                          ChamferMode mode = ChamferMode::symmetric);

// PSNR restricted to pixels outside the union subject mask ([h][w], nonzero =
// subject), over all frames of both videos. Range-[0,1] data, capped at
// 100 dB.
double masked_psnr(const Video& a, const Video& b, const std::vector<float>& union_subject_mask);

// Union of the two videos' own per-frame subject masks.
std::vector<float> union_subject_mask(const Video& a, const Video& b);

struct CurationItem {
    std::string id;
    Video video;  // per-frame masks required
    EmbeddingSequence embed;
};

struct BenchmarkPair {
    std::string ref_id, target_id;  // ref_id < target_id
    std::string identity;           // smallest id in the identity group
    double psnr = 0;
    double similarity = 0;
};

// Groups items by pairwise Chamfer similarity >= tau_id, then keeps exactly
// the minimum-PSNR pair per group (most background variety). Ties break
// lexicographically; groups of one contribute nothing. The result is
// independent of the input order.
std::vector<BenchmarkPair> curate_pairs(const std::vector<CurationItem>& items,
                                        double tau_id = 0.85);

using EmbedFn = std::function<EmbeddingSequence(const Video&)>;

struct IdentityScore {
    double id_ref = 0, id_target = 0;
};

IdentityScore identity_eval(const Video& generated, const Video& reference, const Video& target,
                            const EmbedFn& embedder = embed_video);

// Pearson correlation between the per-frame mouth opening readout and the
// driving envelope. The video must carry one face box per frame.
double mouth_audio_corr(const Video& generated, const std::vector<double>& envelope);

// Per-frame subject boxes recovered by differencing against the clean
// background texture ([h][w][3]), for videos that come without ground-truth
// boxes.
std::vector<Box> estimate_subject_boxes(const Video& v, const std::vector<float>& clean_bg);

struct SweepRow {
    size_t length = 0;
    double id_ref = 0, id_target = 0, mouth_corr = 0;
};

// Generates each evaluation context at every requested reference length and
// averages the identity and lip-sync scores per length. Rows come back in the
// requested order.
std::vector<SweepRow> reference_length_sweep(const Config& cfg, const ParamStore& params,
                                             const std::vector<uint64_t>& context_indices,
                                             const std::vector<size_t>& lengths,
                                             const SamplerConfig& sampler);

std::string sweep_csv(const std::vector<SweepRow>& rows);

struct EvalReport {
    double id_ref = 0, id_target = 0, mouth_corr = 0;
    size_t tokens = 0;  // joint sequence length of one forward pass
    double flops = 0;   // attention-layer FLOPs per forward at that length
};

// Scores one generated clip against its source sample.
EvalReport evaluate_clip(const Config& cfg, const Video& generated, const Sample& sample);

}  // namespace tavr
