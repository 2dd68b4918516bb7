#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tavr/dataset.hpp"
#include "tavr/model.hpp"

namespace tavr {

// One optimal-transport flow sample: z_t = (1-t) z_0 + t eps, y = eps - z_0.
struct FlowSample {
    Latent z_0, eps, z_t, y;
    double t = 0;
};

// Interpolates a given noise draw at a given timestep.
FlowSample flow_sample_at(const Latent& z_0, const Latent& eps, double t);

// t uniform in (0, 1) by default; the flag switches to logit-normal.
FlowSample make_flow_sample(const Latent& z_0, Rng& rng, bool logit_normal_t = false);

// Mean squared error over all target-token elements.
Tensor<double> loss_mse(const Tensor<double>& prediction, const Tensor<double>& y);

// Masked squared-error gap between the policy and the frozen model, with the
// same mean reduction as loss_mse (masked-out zeros stay in the mean).
Tensor<double> dpo_delta(const Tensor<double>& pred_policy, const Tensor<double>& pred_frozen,
                         const Tensor<double>& y, const Tensor<double>& m);

// softplus((beta/2) (delta_w - delta_l)) averaged over the pair batch.
Tensor<double> loss_dpo(const std::vector<Tensor<double>>& delta_w,
                        const std::vector<Tensor<double>>& delta_l, double beta);

Tensor<double> loss_rl(const Tensor<double>& mse, const Tensor<double>& dpo, double lambda_mse,
                       double lambda_dpo);

// Linear ramp 0 -> lr over the warmup, constant afterwards.
double lr_at(size_t step, const Config& cfg);

// Scales grad to max_norm when its L2 norm exceeds it; returns the pre-clip norm.
double clip_grad_norm(std::vector<double>& grad, double max_norm);

// Adaptive moments with decoupled weight decay.
struct AdamW {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double weight_decay = 0.01;
    size_t steps_taken = 0;
    std::vector<double> m, v;

    explicit AdamW(size_t n, double weight_decay = 0.01);
    void step(std::vector<double>& params, const std::vector<double>& grad, double lr);
};

// Per-token foreground flags for a target grid: 1 when the token's pixel
// footprint overlaps the subject mask at all.
std::vector<float> token_foreground_mask(const TokenGrid& grid, const float* subject_mask,
                                         size_t height, size_t width, const LatentGeometry& g);

// Expands per-token flags to a [n, patch_dim] mask tensor.
Tensor<double> expand_token_mask(const std::vector<float>& flags, size_t patch_dim);

// Everything preference-pair construction needs to know about one context.
struct DpoContext {
    ConditioningContext ctx;
    TokenGrid target_struct;     // token layout of the target stream
    Latent gt_latent;            // ground-truth clean latent
    std::vector<float> fg_mask;  // pixel-space subject mask
    size_t mask_h = 0, mask_w = 0;
};

struct PreferencePair {
    size_t context = 0;  // index into the context list
    Latent winner, loser;
    std::vector<float> mask;  // per-token foreground flags
    double score_w = 0, score_l = 0;
};

// sample(ctx, seed) generates one clean latent; score(latent, context) is its
// identity similarity against the ground truth. Each context contributes its
// (best, worst) generation iff the score gap meets the margin; the
// masked_real variant instead pairs the ground-truth latent as the winner
// with the worst generation.
using SampleFn = std::function<Latent(const ConditioningContext&, uint64_t)>;
using ScoreFn = std::function<double(const Latent&, const DpoContext&)>;
std::vector<PreferencePair> build_preference_pairs(const std::vector<DpoContext>& contexts,
                                                   const SampleFn& sample, const ScoreFn& score,
                                                   const Config& cfg);

// Runs the configured stage end to end: generates batches, optimizes, and
// writes checkpoint + metrics.jsonl + manifest under out_dir. Stages 1 and 2
// start fresh when init_checkpoint is empty; stage 3 requires the stage-2
// checkpoint and also uses it as the frozen reference model.
void train_stage(const Config& cfg, const std::string& out_dir,
                 const std::string& init_checkpoint = "");

}  // namespace tavr
