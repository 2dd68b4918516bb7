#include "tavr/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "tavr/evalkit.hpp"
#include "tavr/manifest.hpp"
#include "tavr/ops.hpp"
#include "tavr/rng.hpp"
#include "tavr/sampler.hpp"
#include "tavr/threading.hpp"
#include "tavr/tokenizer.hpp"

namespace tavr {

FlowSample flow_sample_at(const Latent& z_0, const Latent& eps, double t) {
    if (eps.size() != z_0.size())
        throw std::runtime_error("flow_sample_at: noise shape mismatch");
    FlowSample fs;
    fs.z_0 = z_0;
    fs.eps = eps;
    fs.t = t;
    fs.z_t = z_0;
    fs.y = z_0;
    for (size_t i = 0; i < z_0.data.size(); ++i) {
        fs.z_t.data[i] = static_cast<float>((1.0 - t) * static_cast<double>(z_0.data[i]) +
                                            t * static_cast<double>(eps.data[i]));
        fs.y.data[i] = eps.data[i] - z_0.data[i];
    }
    return fs;
}

FlowSample make_flow_sample(const Latent& z_0, Rng& rng, bool logit_normal_t) {
    double t = logit_normal_t ? 1.0 / (1.0 + std::exp(-rng.normal())) : rng.uniform();
    Latent eps = z_0;
    for (auto& v : eps.data) v = static_cast<float>(rng.normal());
    return flow_sample_at(z_0, eps, t);
}

Tensor<double> loss_mse(const Tensor<double>& prediction, const Tensor<double>& y) {
    return mse(prediction, y);
}

Tensor<double> dpo_delta(const Tensor<double>& pred_policy, const Tensor<double>& pred_frozen,
                         const Tensor<double>& y, const Tensor<double>& m) {
    Tensor<double> pol = mean_all(square(mul(m, sub(y, pred_policy))));
    Tensor<double> froz = mean_all(square(mul(m, sub(y, pred_frozen))));
    return sub(pol, froz);
}

Tensor<double> loss_dpo(const std::vector<Tensor<double>>& delta_w,
                        const std::vector<Tensor<double>>& delta_l, double beta) {
    if (delta_w.empty() || delta_w.size() != delta_l.size())
        throw std::runtime_error("loss_dpo: needs matching nonempty delta batches");
    Tensor<double> acc;
    for (size_t i = 0; i < delta_w.size(); ++i) {
        Tensor<double> term = softplus(scale(sub(delta_w[i], delta_l[i]), beta / 2.0));
        acc = i == 0 ? term : add(acc, term);
    }
    return scale(acc, 1.0 / double(delta_w.size()));
}

Tensor<double> loss_rl(const Tensor<double>& mse_term, const Tensor<double>& dpo_term,
                       double lambda_mse, double lambda_dpo) {
    return add(scale(mse_term, lambda_mse), scale(dpo_term, lambda_dpo));
}

double lr_at(size_t step, const Config& cfg) {
    if (cfg.warmup > 0 && step < cfg.warmup)
        return cfg.lr * double(step) / double(cfg.warmup);
    return cfg.lr;
}

double clip_grad_norm(std::vector<double>& grad, double max_norm) {
    double sq = 0;
    for (double g : grad) sq += g * g;
    double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0) {
        double s = max_norm / norm;
        for (double& g : grad) g *= s;
    }
    return norm;
}

AdamW::AdamW(size_t n, double weight_decay_in) {
    weight_decay = weight_decay_in;
    m.assign(n, 0.0);
    v.assign(n, 0.0);
}

void AdamW::step(std::vector<double>& params, const std::vector<double>& grad, double lr) {
    if (params.size() != m.size() || grad.size() != m.size())
        throw std::runtime_error("AdamW::step: size mismatch");
    ++steps_taken;
    double bc1 = 1.0 - std::pow(beta1, double(steps_taken));
    double bc2 = 1.0 - std::pow(beta2, double(steps_taken));
    for (size_t i = 0; i < params.size(); ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        double mhat = m[i] / bc1;
        double vhat = v[i] / bc2;
        params[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * params[i]);
    }
}

std::vector<float> token_foreground_mask(const TokenGrid& grid, const float* subject_mask,
                                         size_t height, size_t width, const LatentGeometry& g) {
    if (subject_mask == nullptr)
        throw std::runtime_error("token_foreground_mask: missing subject mask");
    size_t patch_px = g.p * g.c_s;
    std::vector<float> flags(grid.size(), 0.0f);
    for (size_t i = 0; i < grid.size(); ++i) {
        size_t py = size_t(grid.coords[i][1]) * patch_px;
        size_t px = size_t(grid.coords[i][2]) * patch_px;
        bool fg = false;
        for (size_t y = py; y < std::min(py + patch_px, height) && !fg; ++y)
            for (size_t x = px; x < std::min(px + patch_px, width); ++x)
                if (subject_mask[y * width + x] > 0.5f) {
                    fg = true;
                    break;
                }
        flags[i] = fg ? 1.0f : 0.0f;
    }
    return flags;
}

Tensor<double> expand_token_mask(const std::vector<float>& flags, size_t patch_dim) {
    Tensor<double> m(Shape{flags.size(), patch_dim}, std::vector<double>(flags.size() * patch_dim));
    for (size_t i = 0; i < flags.size(); ++i)
        for (size_t j = 0; j < patch_dim; ++j) m.vec()[i * patch_dim + j] = flags[i];
    return m;
}

std::vector<PreferencePair> build_preference_pairs(const std::vector<DpoContext>& contexts,
                                                   const SampleFn& sample, const ScoreFn& score,
                                                   const Config& cfg) {
    if (cfg.dpo_gens < 2)
        throw std::runtime_error("build_preference_pairs: needs at least 2 generations per context");
    LatentGeometry g{cfg.c_s, cfg.c_t, cfg.patch, TemporalMode::first_frame_plus};
    Rng seeds(cfg.seed, "dpo_gen");
    std::vector<PreferencePair> out;
    for (size_t ci = 0; ci < contexts.size(); ++ci) {
        const DpoContext& c = contexts[ci];
        std::vector<float> flags = token_foreground_mask(c.target_struct, c.fg_mask.data(),
                                                         c.mask_h, c.mask_w, g);
        if (std::none_of(flags.begin(), flags.end(), [](float f) { return f > 0.5f; }))
            throw std::runtime_error("build_preference_pairs: subject mask selects no tokens");
        if (cfg.dpo_variant == DpoVariant::unmasked)
            std::fill(flags.begin(), flags.end(), 1.0f);

        std::vector<Latent> gens(cfg.dpo_gens);
        std::vector<double> scores(cfg.dpo_gens);
        for (size_t gi = 0; gi < cfg.dpo_gens; ++gi) {
            uint64_t seed =
                seeds.fork(std::to_string(ci) + "." + std::to_string(gi)).next_u64();
            gens[gi] = sample(c.ctx, seed);
            scores[gi] = score(gens[gi], c);
        }
        size_t best = 0, worst = 0;
        for (size_t gi = 1; gi < cfg.dpo_gens; ++gi) {
            if (scores[gi] > scores[best]) best = gi;
            if (scores[gi] < scores[worst]) worst = gi;
        }

        PreferencePair p;
        p.context = ci;
        p.mask = flags;
        if (cfg.dpo_variant == DpoVariant::masked_real) {
            p.winner = c.gt_latent;
            p.score_w = score(c.gt_latent, c);
        } else {
            p.winner = gens[best];
            p.score_w = scores[best];
        }
        p.loser = gens[worst];
        p.score_l = scores[worst];
        if (p.score_w - p.score_l >= cfg.pair_margin) out.push_back(std::move(p));
    }
    return out;
}

namespace {

struct ParamViews {
    Tensor<double> leaf;
    std::map<std::string, Tensor<double>> views;
};

ParamViews make_views(const ParamStore& store, const std::vector<double>& flat,
                      Tape<double>* tape) {
    ParamViews pv;
    Tensor<double> flat_t(Shape{flat.size(), 1}, flat);
    pv.leaf = tape ? tape->leaf(flat_t) : flat_t;
    size_t off = 0;
    for (const auto& name : store.names()) {
        const Tensor<double>& p = store.at(name);
        pv.views[name] = reshape(slice_rows(pv.leaf, off, off + p.size()), p.shape());
        off += p.size();
    }
    return pv;
}

struct PreparedItem {
    TokenGrid z_struct;
    Tensor<double> z_vals, y_vals;
    ConditioningContext ctx;
    double t = 0;
};

PreparedItem prepare_flow_item(const Config& cfg, const Sample& s, const Rng& slot_rng) {
    LatentGeometry g{cfg.c_s, cfg.c_t, cfg.patch, TemporalMode::first_frame_plus};
    bool with_motion = slot_rng.fork("motion").uniform() < cfg.motion_prob;
    ConditioningContext ctx = sample_context(cfg, s, with_motion);
    if (slot_rng.fork("drop_text").uniform() < cfg.cond_dropout)
        std::fill(ctx.text.begin(), ctx.text.end(), 0.0f);
    if (slot_rng.fork("drop_audio").uniform() < cfg.cond_dropout)
        std::fill(ctx.audio.begin(), ctx.audio.end(), 0.0f);

    Latent z0 = sample_target_latent(cfg, s);
    Rng flow_rng = slot_rng.fork("flow");
    FlowSample fs = make_flow_sample(z0, flow_rng, cfg.t_logit_normal);

    PreparedItem item;
    item.z_struct = patchify(fs.z_t, g, Origin::target, kTargetTimeBase);
    item.z_vals = grid_values(item.z_struct);
    item.y_vals = grid_values(patchify(fs.y, g, Origin::target, kTargetTimeBase));
    item.ctx = std::move(ctx);
    item.t = fs.t;
    return item;
}

// One DPO pair with the branch forward inputs for a shared (t, eps) draw.
struct PreparedPair {
    PreparedItem winner, loser;
    Tensor<double> mask;  // [n, patch_dim]
};

PreparedPair prepare_pair(const Config& cfg, const DpoContext& c, const PreferencePair& p,
                          const Rng& pick_rng) {
    LatentGeometry g{cfg.c_s, cfg.c_t, cfg.patch, TemporalMode::first_frame_plus};
    Rng flow_rng = pick_rng.fork("flow");
    double t = cfg.t_logit_normal ? 1.0 / (1.0 + std::exp(-flow_rng.normal()))
                                  : flow_rng.uniform();
    Latent eps = p.winner;
    for (auto& v : eps.data) v = static_cast<float>(flow_rng.normal());

    PreparedPair pp;
    for (int side = 0; side < 2; ++side) {
        const Latent& z0 = side == 0 ? p.winner : p.loser;
        FlowSample fs = flow_sample_at(z0, eps, t);
        PreparedItem item;
        item.z_struct = patchify(fs.z_t, g, Origin::target, kTargetTimeBase);
        item.z_vals = grid_values(item.z_struct);
        item.y_vals = grid_values(patchify(fs.y, g, Origin::target, kTargetTimeBase));
        item.ctx = c.ctx;
        item.t = t;
        (side == 0 ? pp.winner : pp.loser) = std::move(item);
    }
    pp.mask = expand_token_mask(p.mask, cfg.patch_dim());
    return pp;
}

uint64_t sample_index(const Config& cfg, const Rng& slot_rng, size_t step, size_t slot) {
    if (cfg.data_samples == 0) return step * cfg.batch + slot;  // endless fresh stream
    return slot_rng.fork("index").index(cfg.data_samples);
}

}  // namespace

void train_stage(const Config& cfg, const std::string& out_dir,
                 const std::string& init_checkpoint) {
    if (cfg.stage < 1 || cfg.stage > 3)
        throw ValidationError("train_stage: stage must be 1, 2, or 3");
    if (cfg.beta <= 0) throw ValidationError("train_stage: beta must be positive");
    if (cfg.lambda_mse < 0 || cfg.lambda_dpo < 0)
        throw ValidationError("train_stage: loss weights must be nonnegative");
    ModelConfig mcfg = model_config_from(cfg);
    mcfg.validate();

    ParamStore params;
    if (init_checkpoint.empty()) {
        if (cfg.stage == 3)
            throw ValidationError("train_stage: stage 3 needs the stage-2 checkpoint");
        params = init_params(mcfg, cfg.seed);
    } else {
        params = load_checkpoint(init_checkpoint);
        ParamStore fresh = init_params(mcfg, cfg.seed);
        if (fresh.names() != params.names())
            throw ValidationError("train_stage: checkpoint does not match the model layout");
        for (const auto& name : fresh.names())
            if (fresh.at(name).shape() != params.at(name).shape())
                throw ValidationError("train_stage: checkpoint shape mismatch at " + name);
    }

    DataMode mode = cfg.stage == 1 ? DataMode::same_scene : DataMode::cross_scene;
    size_t flow_batch = cfg.stage == 3 ? cfg.dpo_anchor_batch : cfg.batch;
    bool with_dpo = cfg.stage == 3 && cfg.lambda_dpo != 0.0;

    // Stage 3 crosses the policy against a frozen copy of its starting point
    // and scores preference pairs generated by that same frozen model.
    ParamStore frozen = params;
    std::vector<DpoContext> dpo_contexts;
    std::vector<Sample> dpo_samples;
    std::vector<PreferencePair> pairs;
    if (with_dpo) {
        LatentGeometry g{cfg.c_s, cfg.c_t, cfg.patch, TemporalMode::first_frame_plus};
        std::vector<EmbeddingSequence> target_embeds(cfg.dpo_contexts);
        for (size_t i = 0; i < cfg.dpo_contexts; ++i) {
            Sample s = make_sample(cfg, cfg.seed, "dpo", i, DataMode::cross_scene);
            DpoContext c;
            c.ctx = sample_context(cfg, s, false);
            c.gt_latent = sample_target_latent(cfg, s);
            c.target_struct = patchify(c.gt_latent, g, Origin::target, kTargetTimeBase);
            c.fg_mask = s.fg_mask;
            c.mask_h = cfg.world_h;
            c.mask_w = cfg.world_w;
            target_embeds[i] = embed_video(s.target);
            dpo_samples.push_back(std::move(s));
            dpo_contexts.push_back(std::move(c));
        }
        SamplerConfig sampler = sampler_config_from(cfg);
        SampleFn sample_fn = [&](const ConditioningContext& ctx, uint64_t seed) {
            return generate_clip(cfg, frozen, ctx, seed, sampler).latent;
        };
        ScoreFn score_fn = [&](const Latent& lat, const DpoContext& c) {
            size_t ci = size_t(&c - dpo_contexts.data());
            CodecSpec codec{cfg.c_s, cfg.c_t, cfg.c_lat};
            Video gen;
            gen.frames = 0;
            std::vector<float> rgb =
                decode_video(lat, codec, TemporalMode::first_frame_plus, &gen.frames);
            gen.height = cfg.world_h;
            gen.width = cfg.world_w;
            gen.rgb = std::move(rgb);
            gen.boxes = estimate_subject_boxes(
                gen, scene_background(dpo_samples[ci].target_scene, gen.height, gen.width));
            return chamfer_similarity(embed_video(gen), target_embeds[ci]);
        };
        pairs = build_preference_pairs(dpo_contexts, sample_fn, score_fn, cfg);
        if (pairs.empty())
            throw std::runtime_error("train_stage: no preference pair met the margin");
    }

    std::filesystem::create_directories(out_dir);
    std::ofstream metrics(std::filesystem::path(out_dir) / "metrics.jsonl");
    if (!metrics) throw std::runtime_error("train_stage: cannot write metrics in " + out_dir);
    std::string started = utc_now_iso8601();

    std::vector<double> frozen_flat = with_dpo ? flatten_params(frozen) : std::vector<double>{};
    std::vector<double> flat = flatten_params(params);
    AdamW opt(flat.size(), cfg.weight_decay);
    Rng item_streams(cfg.seed, "train_item");
    Rng pick_streams(cfg.seed, "dpo_pick");

    for (size_t step = 0; step < cfg.steps; ++step) {
        // Batch assembly is keyed by (step, slot), so worker order is moot.
        std::vector<PreparedItem> items(flow_batch);
        parallel_for(flow_batch, [&](size_t slot) {
            Rng slot_rng =
                item_streams.fork(std::to_string(step) + "." + std::to_string(slot));
            uint64_t idx = sample_index(cfg, slot_rng, step, slot);
            Sample s = make_sample(cfg, cfg.seed, "train", idx, mode);
            items[slot] = prepare_flow_item(cfg, s, slot_rng);
        });
        std::vector<PreparedPair> step_pairs;
        if (with_dpo) {
            step_pairs.resize(cfg.dpo_pair_batch);
            parallel_for(cfg.dpo_pair_batch, [&](size_t k) {
                Rng pick =
                    pick_streams.fork(std::to_string(step) + "." + std::to_string(k));
                const PreferencePair& p = pairs[pick.fork("pair").index(pairs.size())];
                step_pairs[k] = prepare_pair(cfg, dpo_contexts[p.context], p, pick);
            });
        }

        Tape<double> tape;
        ParamViews pv = make_views(params, flat, &tape);
        Weights w(pv.views, &tape);

        Tensor<double> mse_acc;
        for (size_t slot = 0; slot < flow_batch; ++slot) {
            const PreparedItem& it = items[slot];
            Tensor<double> pred =
                model_forward_tokens(mcfg, w, it.z_struct, it.z_vals, it.ctx, it.t);
            Tensor<double> term = loss_mse(pred, it.y_vals);
            mse_acc = slot == 0 ? term : add(mse_acc, term);
        }
        Tensor<double> mse_term = scale(mse_acc, 1.0 / double(flow_batch));

        Tensor<double> total = mse_term;
        double dpo_value = 0.0;
        if (with_dpo) {
            ParamViews fv = make_views(frozen, frozen_flat, nullptr);
            Weights fw(fv.views, nullptr);
            std::vector<Tensor<double>> dw, dl;
            for (const PreparedPair& pp : step_pairs) {
                auto branch = [&](const PreparedItem& it) {
                    Tensor<double> pol =
                        model_forward_tokens(mcfg, w, it.z_struct, it.z_vals, it.ctx, it.t);
                    Tensor<double> froz =
                        model_forward_tokens(mcfg, fw, it.z_struct, it.z_vals, it.ctx, it.t);
                    return dpo_delta(pol, froz, it.y_vals, pp.mask);
                };
                dw.push_back(branch(pp.winner));
                dl.push_back(branch(pp.loser));
            }
            Tensor<double> dpo_term = loss_dpo(dw, dl, cfg.beta);
            dpo_value = dpo_term.item();
            total = loss_rl(mse_term, dpo_term, cfg.lambda_mse, cfg.lambda_dpo);
        }

        tape.backward(total);
        std::vector<double> grad = tape.grad(pv.leaf).vec();
        double gnorm = clip_grad_norm(grad, cfg.grad_clip);
        double lr = lr_at(step, cfg);
        opt.step(flat, grad, lr);

        nlohmann::json line = {{"step", step},
                               {"loss", total.item()},
                               {"mse", mse_term.item()},
                               {"lr", lr},
                               {"grad_norm", gnorm},
                               {"seed", cfg.seed}};
        if (with_dpo) line["dpo"] = dpo_value;
        metrics << line.dump() << "\n";
    }
    metrics.close();

    unflatten_params(params, flat);
    save_checkpoint((std::filesystem::path(out_dir) / "checkpoint").string(), params, cfg);

    RunManifest manifest;
    manifest.command = "train";
    manifest.config_text = cfg.dump();
    manifest.seed = cfg.seed;
    manifest.started_at = started;
    manifest.finished_at = utc_now_iso8601();
    manifest.add_output(out_dir, "metrics.jsonl");
    manifest.add_output(out_dir, "checkpoint/checkpoint.json");
    manifest.write(out_dir);
}

}  // namespace tavr
