#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "tavr/toyworld.hpp"

namespace tavr {

enum class Origin { target, background, reference, motion };

// Temporal coordinate bases per stream. Motion latent frames sit at t = 0,1,
// the target stream starts right after, the background frame and the
// reference stream live on a disjoint range so no two streams ever share a
// temporal position.
inline constexpr long kMotionTimeBase = 0;
inline constexpr long kTargetTimeBase = 2;
inline constexpr long kBackgroundTime = 63;
inline constexpr long kReferenceTimeBase = 64;

struct LatentGeometry {
    size_t c_s = 8;  // spatial compression, pixels per latent cell
    size_t c_t = 1;  // temporal compression, frames per latent frame
    size_t p = 2;    // patch size in latent cells
    TemporalMode target_convention = TemporalMode::first_frame_plus;
};

// Tokens in (t, row, col) lexicographic order; within a token the patch is
// flattened (cell row, cell col, channel) row-major.
struct TokenGrid {
    size_t d = 0;
    std::vector<float> tokens;                 // [n][d]
    std::vector<std::array<long, 3>> coords;   // (t, row, col)
    std::vector<Origin> origin;
    size_t size() const { return coords.size(); }
    const float* token(size_t i) const { return tokens.data() + i * d; }
};

struct TokenBudget {
    size_t n_target = 0, n_bg = 0, n_ref = 0, n_motion = 0, n_total = 0;
};

// Cuts each latent frame into non-overlapping p x p patches; token values are
// the raw flattened patches (a learned projection, when present, is applied by
// the model on top).
TokenGrid patchify(const Latent& z, const LatentGeometry& g, Origin origin, long t_base);

// Inverse of patchify for identity projection; restores the latent block.
Latent unpatchify(const TokenGrid& grid, const LatentGeometry& g, size_t lat_height,
                  size_t lat_width, size_t channels);

// Factorized sinusoidal embedding of (t, row, col). Row and col each take the
// largest even width not exceeding 3d/8, the temporal part takes the rest.
std::vector<double> positional_embedding(long t, long row, long col, size_t d);

// Adds positional_embedding(coord, grid.d) to every token in place.
TokenGrid& add_positional(TokenGrid& grid);

// Keeps reference tokens whose patch-center pixel falls inside that latent
// frame's box. Boxes are in pixel coordinates, one per reference latent frame
// in temporal order.
TokenGrid select_reference_tokens(const TokenGrid& grid, const std::vector<Box>& boxes,
                                  const LatentGeometry& g);

// Drops background tokens whose patch footprint lies entirely inside the
// subject mask ([height][width], nonzero = subject).
TokenGrid mask_background_tokens(const TokenGrid& grid, const float* subject_mask, size_t height,
                                 size_t width, const LatentGeometry& g);

// Analytic token accounting for a generation shape. T/H/W are pixel-space
// target dimensions, T_ref/T_motion pixel-space conditioning frame counts
// (plain temporal division). kept_ref/kept_bg, when not SIZE_MAX, replace the
// unselected reference/background counts with post-selection ones.
TokenBudget count_tokens(size_t T, size_t H, size_t W, const LatentGeometry& g, size_t T_ref,
                         size_t T_motion, size_t kept_ref = SIZE_MAX, size_t kept_bg = SIZE_MAX);

// Cost of one reference self-attention layer in FLOPs (multiply-add = 2):
// projections 8*n_total*d^2, first-step attention 4*n_q1*n_kv1*d with
// n_q1 = n_target+n_motion+n_bg and n_kv1 = n_total, second-step
// reference-only attention 4*n_ref^2*d.
double flops_ref_self_attn(const TokenBudget& b, size_t d);

}  // namespace tavr
