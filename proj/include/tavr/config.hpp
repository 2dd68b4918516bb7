#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace tavr {

// Raised for bad user input (config files, CLI flags). The CLI maps this to
// exit code 1; everything else exits 2.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class DpoVariant { masked, unmasked, masked_real };
enum class OdeMethod { euler, heun };

struct Config {
    uint64_t seed = 1;

    // World
    size_t world_h = 64, world_w = 64;
    size_t clip_frames = 8;       // frames per generated clip
    size_t source_frames = 28;    // frames rendered per source video
    size_t d_text = 4;

    // Latent codec
    size_t c_s = 8, c_t = 1, c_lat = 4;

    // Model
    size_t d = 64, heads = 4, blocks = 2, patch = 2;
    size_t audio_tokens = 4;      // audio tokens per frame
    size_t d_audio = 8;
    bool use_ref_audio = true;
    bool token_selection = true;

    // Training
    int stage = 1;
    size_t steps = 2000;
    size_t batch = 8;
    double lr = 1e-3;
    size_t warmup = 50;
    double weight_decay = 0.01;
    double grad_clip = 1.0;
    double beta = 500.0;
    double lambda_mse = 1.0;
    double lambda_dpo = 2.0;
    DpoVariant dpo_variant = DpoVariant::masked;
    double pair_margin = 0.2;
    double cond_dropout = 0.1;
    double motion_prob = 0.5;
    bool t_logit_normal = false;  // flow timestep distribution; default uniform

    // Data
    size_t data_samples = 1024;
    size_t ref_min = 12, ref_max = 20;

    // Preference pair building
    size_t dpo_contexts = 40;
    size_t dpo_gens = 2;
    size_t dpo_pair_batch = 2;
    size_t dpo_anchor_batch = 4;

    // Sampler
    size_t sample_steps = 24;
    OdeMethod ode_method = OdeMethod::euler;
    double s_text = 5.0;
    double s_audio = 1.8;

    // Derived geometry
    size_t lat_h() const { return world_h / c_s; }
    size_t lat_w() const { return world_w / c_s; }
    size_t lat_frames() const { return 1 + (clip_frames - 1) / c_t; }  // target clip convention
    size_t patch_rows() const { return lat_h() / patch; }
    size_t patch_cols() const { return lat_w() / patch; }
    size_t patch_dim() const { return patch * patch * c_lat; }
    size_t tokens_per_latent_frame() const { return patch_rows() * patch_cols(); }

    void validate() const;
    std::string dump() const;  // canonical key = value text, sorted by key
};

// Named presets: "toy" (the defaults above) and "paper_scale" (the published
// configuration, for accounting and documentation, far too large to train here).
Config preset_config(const std::string& name);

// key = value lines; '#' starts a comment. Unknown keys are an error.
void apply_config_line(Config& cfg, const std::string& line);
Config parse_config_text(const std::string& text, Config base = Config());
Config load_config_file(const std::string& path, Config base = Config());

std::string to_string(DpoVariant v);
std::string to_string(OdeMethod m);

}  // namespace tavr
