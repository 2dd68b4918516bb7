#include "tavr/tokenizer.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace tavr {

TokenGrid patchify(const Latent& z, const LatentGeometry& g, Origin origin, long t_base) {
    if (g.p == 0 || z.height % g.p || z.width % g.p)
        throw std::runtime_error("patchify: patch size must divide the latent extents");
    size_t rows = z.height / g.p, cols = z.width / g.p;
    size_t d = g.p * g.p * z.channels;

    TokenGrid grid;
    grid.d = d;
    grid.tokens.reserve(z.frames * rows * cols * d);
    grid.coords.reserve(z.frames * rows * cols);
    grid.origin.reserve(z.frames * rows * cols);
    for (size_t t = 0; t < z.frames; ++t)
        for (size_t r = 0; r < rows; ++r)
            for (size_t c = 0; c < cols; ++c) {
                for (size_t py = 0; py < g.p; ++py)
                    for (size_t px = 0; px < g.p; ++px) {
                        const float* cell =
                            z.data.data() +
                            ((t * z.height + r * g.p + py) * z.width + c * g.p + px) * z.channels;
                        grid.tokens.insert(grid.tokens.end(), cell, cell + z.channels);
                    }
                grid.coords.push_back({t_base + long(t), long(r), long(c)});
                grid.origin.push_back(origin);
            }
    return grid;
}

Latent unpatchify(const TokenGrid& grid, const LatentGeometry& g, size_t lat_height,
                  size_t lat_width, size_t channels) {
    if (g.p == 0 || lat_height % g.p || lat_width % g.p)
        throw std::runtime_error("unpatchify: patch size must divide the latent extents");
    if (grid.d != g.p * g.p * channels)
        throw std::runtime_error("unpatchify: token width does not match patch geometry");
    size_t rows = lat_height / g.p, cols = lat_width / g.p;
    if (grid.size() % (rows * cols))
        throw std::runtime_error("unpatchify: token count does not fill whole frames");
    size_t frames = grid.size() / (rows * cols);

    Latent z;
    z.frames = frames;
    z.height = lat_height;
    z.width = lat_width;
    z.channels = channels;
    z.data.resize(frames * lat_height * lat_width * channels);
    long t0 = frames ? grid.coords[0][0] : 0;
    for (size_t i = 0; i < grid.size(); ++i) {
        long t = grid.coords[i][0] - t0, r = grid.coords[i][1], c = grid.coords[i][2];
        if (t < 0 || size_t(t) >= frames || r < 0 || size_t(r) >= rows || c < 0 || size_t(c) >= cols)
            throw std::runtime_error("unpatchify: token coordinate out of range");
        const float* tok = grid.token(i);
        for (size_t py = 0; py < g.p; ++py)
            for (size_t px = 0; px < g.p; ++px) {
                float* cell = z.data.data() +
                              ((size_t(t) * lat_height + size_t(r) * g.p + py) * lat_width +
                               size_t(c) * g.p + px) *
                                  channels;
                for (size_t ch = 0; ch < channels; ++ch)
                    cell[ch] = tok[(py * g.p + px) * channels + ch];
            }
    }
    return z;
}

namespace {

// One sinusoidal block: (sin, cos) pairs at geometrically spaced frequencies.
void sinusoid_block(long pos, size_t m, double* out) {
    for (size_t i = 0; i < m / 2; ++i) {
        double freq = std::pow(10000.0, -2.0 * double(i) / double(m));
        double a = double(pos) * freq;
        out[2 * i] = std::sin(a);
        out[2 * i + 1] = std::cos(a);
    }
}

}  // namespace

std::vector<double> positional_embedding(long t, long row, long col, size_t d) {
    if (d % 2) throw std::runtime_error("positional_embedding: width must be even");
    size_t d_row = (3 * d / 8) & ~size_t(1);
    size_t d_t = d - 2 * d_row;
    if (d_row < 2 || d_t < 2)
        throw std::runtime_error("positional_embedding: width too small to factorize");
    std::vector<double> e(d);
    sinusoid_block(t, d_t, e.data());
    sinusoid_block(row, d_row, e.data() + d_t);
    sinusoid_block(col, d_row, e.data() + d_t + d_row);
    return e;
}

TokenGrid& add_positional(TokenGrid& grid) {
    for (size_t i = 0; i < grid.size(); ++i) {
        std::vector<double> e =
            positional_embedding(grid.coords[i][0], grid.coords[i][1], grid.coords[i][2], grid.d);
        float* tok = grid.tokens.data() + i * grid.d;
        for (size_t k = 0; k < grid.d; ++k) tok[k] = float(tok[k] + e[k]);
    }
    return grid;
}

namespace {

TokenGrid keep_tokens(const TokenGrid& grid, const std::vector<char>& keep) {
    TokenGrid out;
    out.d = grid.d;
    for (size_t i = 0; i < grid.size(); ++i) {
        if (!keep[i]) continue;
        const float* tok = grid.token(i);
        out.tokens.insert(out.tokens.end(), tok, tok + grid.d);
        out.coords.push_back(grid.coords[i]);
        out.origin.push_back(grid.origin[i]);
    }
    return out;
}

}  // namespace

TokenGrid select_reference_tokens(const TokenGrid& grid, const std::vector<Box>& boxes,
                                  const LatentGeometry& g) {
    long t0 = kReferenceTimeBase;
    std::vector<char> keep(grid.size(), 0);
    for (size_t i = 0; i < grid.size(); ++i) {
        if (grid.origin[i] != Origin::reference)
            throw std::runtime_error("select_reference_tokens: grid holds non-reference tokens");
        long frame = grid.coords[i][0] - t0;
        if (frame < 0 || size_t(frame) >= boxes.size())
            throw std::runtime_error("select_reference_tokens: frame " + std::to_string(frame) +
                                     " has no box");
        const Box& b = boxes[size_t(frame)];
        double scale = double(g.c_s);
        double cx = (double(grid.coords[i][2]) + 0.5) * double(g.p) * scale;
        double cy = (double(grid.coords[i][1]) + 0.5) * double(g.p) * scale;
        keep[i] = cx >= b.x0 && cx <= b.x1 && cy >= b.y0 && cy <= b.y1;
    }
    TokenGrid out = keep_tokens(grid, keep);
    if (grid.size() && out.size() == 0)
        throw std::runtime_error("select_reference_tokens: boxes select no tokens");
    return out;
}

TokenGrid mask_background_tokens(const TokenGrid& grid, const float* subject_mask, size_t height,
                                 size_t width, const LatentGeometry& g) {
    size_t patch_px = g.p * g.c_s;
    std::vector<char> keep(grid.size(), 0);
    for (size_t i = 0; i < grid.size(); ++i) {
        if (grid.origin[i] != Origin::background)
            throw std::runtime_error("mask_background_tokens: grid holds non-background tokens");
        size_t x0 = size_t(grid.coords[i][2]) * patch_px, y0 = size_t(grid.coords[i][1]) * patch_px;
        if (x0 + patch_px > width || y0 + patch_px > height)
            throw std::runtime_error("mask_background_tokens: patch outside the mask extent");
        bool all_subject = true;
        for (size_t y = y0; y < y0 + patch_px && all_subject; ++y)
            for (size_t x = x0; x < x0 + patch_px; ++x)
                if (subject_mask[y * width + x] <= 0.5f) {
                    all_subject = false;
                    break;
                }
        keep[i] = !all_subject;
    }
    return keep_tokens(grid, keep);
}

namespace {

size_t latent_frames_or_throw(size_t frames, size_t c_t, TemporalMode mode, const char* what) {
    if (frames == 0) return 0;
    if (mode == TemporalMode::first_frame_plus) {
        if ((frames - 1) % c_t)
            throw std::runtime_error(std::string(what) +
                                     ": frame count not 1 + k*c_t under first_frame_plus");
        return 1 + (frames - 1) / c_t;
    }
    if (frames % c_t)
        throw std::runtime_error(std::string(what) + ": frame count not divisible by c_t");
    return frames / c_t;
}

}  // namespace

TokenBudget count_tokens(size_t T, size_t H, size_t W, const LatentGeometry& g, size_t T_ref,
                         size_t T_motion, size_t kept_ref, size_t kept_bg) {
    size_t px = g.c_s * g.p;
    if (H % px || W % px)
        throw std::runtime_error("count_tokens: frame extent not divisible by c_s*p");
    size_t per_frame = (H / px) * (W / px);
    size_t t_lat = latent_frames_or_throw(T, g.c_t, g.target_convention, "count_tokens target");
    size_t r_lat = latent_frames_or_throw(T_ref, g.c_t, TemporalMode::plain, "count_tokens reference");
    size_t m_lat = latent_frames_or_throw(T_motion, g.c_t, TemporalMode::plain, "count_tokens motion");

    TokenBudget b;
    b.n_target = t_lat * per_frame;
    b.n_bg = kept_bg == SIZE_MAX ? per_frame : kept_bg;
    b.n_ref = kept_ref == SIZE_MAX ? r_lat * per_frame : kept_ref;
    b.n_motion = m_lat * per_frame;
    if (b.n_bg > per_frame || (kept_ref != SIZE_MAX && b.n_ref > r_lat * per_frame))
        throw std::runtime_error("count_tokens: kept counts exceed the unselected grid");
    b.n_total = b.n_target + b.n_bg + b.n_ref + b.n_motion;
    return b;
}

double flops_ref_self_attn(const TokenBudget& b, size_t d) {
    double dd = double(d);
    double n_q1 = double(b.n_target + b.n_motion + b.n_bg);
    double n_kv1 = double(b.n_total);
    return 8.0 * double(b.n_total) * dd * dd + 4.0 * n_q1 * n_kv1 * dd +
           4.0 * double(b.n_ref) * double(b.n_ref) * dd;
}

}  // namespace tavr
