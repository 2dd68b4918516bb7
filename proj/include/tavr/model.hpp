#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "tavr/config.hpp"
#include "tavr/ops.hpp"
#include "tavr/tokenizer.hpp"
#include "tavr/toyworld.hpp"

namespace tavr {

struct ModelConfig {
    size_t d = 64;
    size_t heads = 4;
    size_t blocks = 2;
    size_t audio_tokens = 4;  // audio tokens per latent frame
    size_t d_audio = 8;
    size_t d_text = 4;
    size_t channels = 4;  // latent channels entering patchify
    LatentGeometry geometry;
    bool use_ref_audio = true;
    bool use_token_selection = true;

    size_t patch_dim() const { return geometry.p * geometry.p * channels; }
    void validate() const;
};

ModelConfig model_config_from(const Config& cfg);

// Named parameters in a stable insertion order; the order defines the layout
// of flattened vectors and the optimizer state.
class ParamStore {
public:
    void add(const std::string& name, Tensor<double> value);
    void set(const std::string& name, Tensor<double> value);  // shape must match
    const Tensor<double>& at(const std::string& name) const;
    bool has(const std::string& name) const { return values_.count(name) != 0; }
    const std::vector<std::string>& names() const { return names_; }
    size_t scalar_count() const;

private:
    std::vector<std::string> names_;
    std::map<std::string, Tensor<double>> values_;
};

// Square-ish matrices start orthogonal, attention/FFN output projections and
// all modulation tables start at zero so every block begins as the identity.
ParamStore init_params(const ModelConfig& cfg, uint64_t seed);

// Overwrites every parameter with small random values. Gradient tests use
// this so the zero-initialized projections do not hide entire paths.
void randomize_params(ParamStore& store, uint64_t seed, double scale = 0.1);

std::vector<double> flatten_params(const ParamStore& store);
void unflatten_params(ParamStore& store, const std::vector<double>& flat);

// Per-forward view of a store: tape != nullptr lifts every parameter to a
// tape leaf so gradients can be pulled; otherwise values pass through as-is.
class Weights {
public:
    Weights(const ParamStore& store, Tape<double>* tape);
    // Pre-built view, e.g. parameter tensors sliced out of one flat vector
    // that already sits on a tape.
    Weights(std::map<std::string, Tensor<double>> view, Tape<double>* tape);
    const Tensor<double>& operator[](const std::string& name) const;
    Tape<double>* tape() const { return tape_; }

private:
    std::map<std::string, Tensor<double>> view_;
    Tape<double>* tape_;
};

struct OriginRange {
    size_t begin = 0, end = 0;
    size_t count() const { return end - begin; }
};

// Joint token sequence in the fixed row order motion, target, background,
// reference; rows within each range are sorted by (t, row, col).
struct LatentState {
    Tensor<double> x;  // [n, d]
    std::vector<std::array<long, 3>> coords;
    OriginRange motion, target, background, reference;
    size_t rows() const { return coords.size(); }
};

// Maximal runs of equal temporal coordinate within the range, in order.
std::vector<OriginRange> frame_ranges(const LatentState& s, const OriginRange& r);

// Everything the model is conditioned on. Grids hold raw (unselected) tokens;
// model_forward applies box/mask selection itself when the config asks for it.
struct ConditioningContext {
    std::vector<float> audio;      // [target latent frame][audio_tokens][d_audio]
    std::vector<float> ref_audio;  // [reference latent frame][audio_tokens][d_audio]
    std::vector<float> text;       // [d_text]
    TokenGrid background;          // one latent frame of background tokens
    TokenGrid reference;           // reference stream tokens
    std::vector<Box> ref_boxes;    // one per reference latent frame
    std::vector<float> subject_mask;  // [mask_h][mask_w], nonzero = subject
    size_t mask_h = 0, mask_w = 0;
    Latent motion;  // empty, or up to two latent frames prepended to the target stream
};

// Mean-pools per-video-frame audio feature blocks into per-latent-frame
// blocks under the given temporal grouping.
std::vector<float> group_audio(const std::vector<float>& per_frame, size_t frames, size_t tokens,
                               size_t d_audio, size_t c_t, TemporalMode mode);

// Optional adaptive modulation around a sublayer; empty tensors mean neutral
// (no shift, no scale, unit gate).
struct Modulation {
    Tensor<double> shift, scale, gate;
};

// Per-latent-frame audio key/value source blocks, [audio_tokens, d_audio] each.
struct AudioBlocks {
    std::vector<Tensor<double>> drv;
    std::vector<Tensor<double>> ref;
};

Tensor<double> timestep_embedding(double t, size_t d);

// Two-step attention: motion+target+background rows attend over every row
// including reference; reference rows attend only among themselves with the
// same projections.
LatentState reference_self_attention(const ModelConfig& cfg, const Weights& w,
                                     const std::string& prefix, const LatentState& s,
                                     const Modulation& mod = {});

// Non-reference rows attend to the single projected text token.
LatentState text_cross_attention(const ModelConfig& cfg, const Weights& w,
                                 const std::string& prefix, const LatentState& s,
                                 const Tensor<double>& text);

// Target rows of latent frame t attend to frame t's audio tokens; reference
// rows likewise against reference audio when use_ref_audio is set, and bypass
// the block untouched otherwise. Background and motion rows never participate.
LatentState audio_cross_attention(const ModelConfig& cfg, const Weights& w,
                                  const std::string& prefix, const LatentState& s,
                                  const AudioBlocks& audio);

LatentState dit_block(const ModelConfig& cfg, const Weights& w, size_t block,
                      const LatentState& s, const Tensor<double>& text, const AudioBlocks& audio,
                      const Tensor<double>& t_features);

// Full velocity prediction: assembles the joint sequence from z_t and the
// context, runs the blocks, and projects target rows back to patch space.
// z_struct supplies coords; z_vals supplies the values (possibly on a tape).
Tensor<double> model_forward_tokens(const ModelConfig& cfg, const Weights& w,
                                    const TokenGrid& z_struct, const Tensor<double>& z_vals,
                                    const ConditioningContext& ctx, double t);

// Convenience wrapper without a tape: latent in, velocity latent out.
Latent model_forward(const ModelConfig& cfg, const ParamStore& params, const Latent& z_t,
                     const ConditioningContext& ctx, double t);

// Lifts a grid's values to a rank-2 double tensor [n, d].
Tensor<double> grid_values(const TokenGrid& grid);

void save_checkpoint(const std::string& dir, const ParamStore& params, const Config& cfg);
ParamStore load_checkpoint(const std::string& dir, Config* cfg_out = nullptr);

}  // namespace tavr
