#include "tavr/toyworld.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tavr {

namespace {

struct Rgb {
    double r, g, b;
};

// Everything the rasteriser needs for one frame, in pixel units.
struct FaceGeometry {
    double cx, cy, rx, ry;
    double eye_dx, eye_dy, eye_r;
    double mouth_cy, mouth_rx, mouth_ry;
    double outline_w;
    Rgb face, hair;
    double hair_cut;  // hair occupies y < hair_cut within the enlarged ellipse
};

constexpr Rgb kEyeColor{0.22, 0.10, 0.12};
constexpr Rgb kMouthColor{0.66, 0.12, 0.14};
constexpr Rgb kOutlineColor{0.34, 0.15, 0.19};
constexpr double kBoxPad = 1.5;
constexpr double kHairScale = 1.12;
constexpr double kMouthRxFrac = 0.30;   // nominal mouth half-width as a fraction of rx
constexpr double kMouthRyFrac = 0.22;   // fully open mouth half-height as a fraction of ry
constexpr double kMouthFloor = 0.03;    // closed-mouth residual opening

// The mouth detector integrates max(0, r - g - b). Every colour in the world
// except the mouth sits exactly on the r = g + b plane, so the detector field
// is zero outside the mouth and linear under any blend, pooling, or
// interpolation. Antialiasing, the codec, and the readout all preserve the
// painted mouth area exactly.
constexpr double kMouthPeak = kMouthColor.r - kMouthColor.g - kMouthColor.b;

FaceGeometry face_geometry(const IdentitySpec& id, double cx, double cy, double scale, double aperture) {
    FaceGeometry g;
    g.cx = cx;
    g.cy = cy;
    g.rx = (12.0 + 4.5 * id.face_w) * scale;
    g.ry = (14.0 + 4.5 * id.face_h) * scale;
    g.eye_dx = (0.28 + 0.17 * id.eyes) * g.rx;
    g.eye_dy = -0.30 * g.ry;
    g.eye_r = (0.9 + 1.3 * id.eye_size) * scale + 0.3;
    g.mouth_cy = cy + 0.45 * g.ry;
    g.mouth_rx = kMouthRxFrac * g.rx * (0.97 + 0.06 * id.mouth_w);
    g.mouth_ry = (kMouthFloor + (1.0 - kMouthFloor) * aperture) * kMouthRyFrac * g.ry;
    g.outline_w = 1.1;

    double v = 0.55 + 0.30 * id.tone;       // face brightness
    double m = 0.35 + 0.30 * id.hue;        // green/blue balance
    g.face = {v, v * m, v * (1.0 - m)};     // r == g + b by construction
    double gv = 0.45 + 0.30 * id.hair;
    g.hair = {gv, 0.52 * gv, 0.48 * gv};
    g.hair_cut = cy - 0.35 * g.ry;
    return g;
}

bool in_ellipse(double x, double y, double cx, double cy, double rx, double ry) {
    double dx = (x - cx) / rx, dy = (y - cy) / ry;
    return dx * dx + dy * dy <= 1.0;
}

// Classifies one sub-pixel sample. Returns false for background.
bool subject_sample(const FaceGeometry& g, double x, double y, Rgb* out) {
    double ex1 = g.cx - g.eye_dx, ex2 = g.cx + g.eye_dx, ey = g.cy + g.eye_dy;
    if (in_ellipse(x, y, ex1, ey, g.eye_r, g.eye_r) || in_ellipse(x, y, ex2, ey, g.eye_r, g.eye_r)) {
        *out = kEyeColor;
        return true;
    }
    if (g.mouth_ry > 0 && in_ellipse(x, y, g.cx, g.mouth_cy, g.mouth_rx, g.mouth_ry)) {
        *out = kMouthColor;
        return true;
    }
    bool in_face = in_ellipse(x, y, g.cx, g.cy, g.rx, g.ry);
    if (y < g.hair_cut && in_ellipse(x, y, g.cx, g.cy, g.rx * kHairScale, g.ry * kHairScale)) {
        *out = g.hair;
        return true;
    }
    if (in_face) {
        *out = g.face;
        return true;
    }
    if (in_ellipse(x, y, g.cx, g.cy, g.rx + g.outline_w, g.ry + g.outline_w)) {
        *out = kOutlineColor;
        return true;
    }
    return false;
}

// Smooth low-frequency texture, also on the r = g + b plane.
Rgb background_at(const SceneSpec& sc, double x, double y, size_t h, size_t w) {
    double u = x / double(w), v = y / double(h);
    double g_field =
        0.5 + 0.5 * std::sin(2 * M_PI * ((0.3 + 0.8 * sc.tex_a) * u + 0.5 * sc.tex_b * v + sc.tex_c));
    double b_field =
        0.5 + 0.5 * std::sin(2 * M_PI * ((0.3 + 0.8 * sc.tex_b) * v - 0.45 * sc.tex_c * u + sc.tex_a));
    double gg = sc.light * (0.12 + 0.38 * g_field);
    double bb = sc.light * (0.12 + 0.38 * b_field);
    return {gg + bb, gg, bb};
}

constexpr int kSub = 4;  // 4x4 supersampling inside the subject's bounding area

}  // namespace

IdentitySpec sample_identity(Rng& rng) {
    // Traits snap to an 8-level grid: 8^8 distinct identities, yet random
    // draws almost never land close-but-unequal, which keeps embeddings of
    // different identities separated by a clear margin.
    auto level = [&rng] { return std::floor(rng.uniform() * 8.0) / 7.0; };
    IdentitySpec id;
    id.hue = level();
    id.tone = level();
    id.face_w = level();
    id.face_h = level();
    id.eyes = level();
    id.mouth_w = level();
    id.hair = level();
    id.eye_size = level();
    return id;
}

SceneSpec sample_scene(Rng& rng) {
    SceneSpec sc;
    sc.tex_a = rng.uniform();
    sc.tex_b = rng.uniform();
    sc.tex_c = rng.uniform();
    sc.light = rng.uniform(0.45, 1.0);
    return sc;
}

std::vector<IdentitySpec> sample_distinct_identities(Rng& rng, size_t n) {
    // Rejection sampling against a canonical render keeps every accepted pair
    // below cosine 0.8, so downstream identity grouping cannot confuse them.
    const SceneSpec canon{0.25, 0.60, 0.10, 0.80};
    auto signature = [&canon](const IdentitySpec& id) {
        Video v = render_video(id, canon, 64, 64, {0.4}, 7);
        return oracle_embed(v.frame(0), 64, 64, v.boxes[0]);
    };
    std::vector<IdentitySpec> ids;
    std::vector<std::vector<double>> sigs;
    size_t attempts = 0, limit = 200 * n + 200;
    while (ids.size() < n) {
        if (++attempts > limit)
            throw std::runtime_error("sample_distinct_identities: rejection limit exceeded");
        IdentitySpec id = sample_identity(rng);
        std::vector<double> s = signature(id);
        bool ok = true;
        for (const auto& t : sigs) {
            double dot = 0;
            for (size_t k = 0; k < s.size(); ++k) dot += s[k] * t[k];
            if (dot > 0.8) {
                ok = false;
                break;
            }
        }
        if (!ok) continue;
        ids.push_back(id);
        sigs.push_back(std::move(s));
    }
    return ids;
}

Video render_video(const IdentitySpec& id, const SceneSpec& scene, size_t height, size_t width,
                   const std::vector<double>& aperture, uint64_t motion_seed) {
    size_t frames = aperture.size();
    if (frames == 0) throw std::runtime_error("render_video: empty aperture track");
    double scale = double(std::min(height, width)) / 64.0;

    Video v;
    v.frames = frames;
    v.height = height;
    v.width = width;
    v.rgb.resize(frames * height * width * 3);
    v.mask.resize(frames * height * width);
    v.boxes.resize(frames);

    // Static background, rendered once per video.
    std::vector<float> bg = scene_background(scene, height, width);

    // Bounded head drift: two incommensurate sinusoids per axis, max 2 px.
    Rng drift(motion_seed, "head_drift");
    double f1x = drift.uniform(0.5, 1.2), f2x = drift.uniform(1.3, 2.4);
    double p1x = drift.uniform(), p2x = drift.uniform();
    double f1y = drift.uniform(0.5, 1.2), f2y = drift.uniform(1.3, 2.4);
    double p1y = drift.uniform(), p2y = drift.uniform();
    auto drift_at = [frames](double f1, double f2, double p1, double p2, size_t t) {
        double u = double(t) / double(frames);
        return 2.0 * (0.6 * std::sin(2 * M_PI * (f1 * u + p1)) + 0.4 * std::sin(2 * M_PI * (f2 * u + p2)));
    };

    for (size_t t = 0; t < frames; ++t) {
        float* frame = v.rgb.data() + t * height * width * 3;
        float* fmask = v.mask.data() + t * height * width;
        std::copy(bg.begin(), bg.end(), frame);

        double cx = width / 2.0 + drift_at(f1x, f2x, p1x, p2x, t);
        double cy = height / 2.0 + drift_at(f1y, f2y, p1y, p2y, t);
        FaceGeometry g = face_geometry(id, cx, cy, scale, aperture[t]);

        v.boxes[t] = {float(cx - g.rx - kBoxPad), float(cy - g.ry - kBoxPad),
                      float(cx + g.rx + kBoxPad), float(cy + g.ry + kBoxPad)};

        // The subject (hair included) fits inside this pixel rectangle.
        double reach_x = g.rx * kHairScale + g.outline_w + 1.0;
        double reach_y = g.ry * kHairScale + g.outline_w + 1.0;
        long px0 = std::max(0L, long(std::floor(cx - reach_x)));
        long px1 = std::min(long(width) - 1, long(std::ceil(cx + reach_x)));
        long py0 = std::max(0L, long(std::floor(cy - reach_y)));
        long py1 = std::min(long(height) - 1, long(std::ceil(cy + reach_y)));
        if (px0 == 0 || py0 == 0 || px1 == long(width) - 1 || py1 == long(height) - 1)
            throw std::runtime_error("render_video: subject reached the frame border");

        for (long y = py0; y <= py1; ++y)
            for (long x = px0; x <= px1; ++x) {
                double rs = 0, gs = 0, bs = 0;
                int hits = 0;
                for (int sy = 0; sy < kSub; ++sy)
                    for (int sx = 0; sx < kSub; ++sx) {
                        double fx = x + (sx + 0.5) / kSub;
                        double fy = y + (sy + 0.5) / kSub;
                        Rgb c;
                        if (subject_sample(g, fx, fy, &c)) {
                            ++hits;
                        } else {
                            c = background_at(scene, fx, fy, height, width);
                        }
                        rs += c.r;
                        gs += c.g;
                        bs += c.b;
                    }
                size_t o = (size_t(y) * width + size_t(x)) * 3;
                const double inv = 1.0 / (kSub * kSub);
                frame[o] = float(rs * inv);
                frame[o + 1] = float(gs * inv);
                frame[o + 2] = float(bs * inv);
                fmask[size_t(y) * width + size_t(x)] = hits * 2 >= kSub * kSub ? 1.0f : 0.0f;
            }
    }
    return v;
}

std::vector<float> scene_background(const SceneSpec& scene, size_t height, size_t width) {
    std::vector<float> bg(height * width * 3);
    for (size_t y = 0; y < height; ++y)
        for (size_t x = 0; x < width; ++x) {
            Rgb c = background_at(scene, x + 0.5, y + 0.5, height, width);
            size_t o = (y * width + x) * 3;
            bg[o] = float(c.r);
            bg[o + 1] = float(c.g);
            bg[o + 2] = float(c.b);
        }
    return bg;
}

std::vector<float> background_plate(const Video& v) {
    std::vector<float> plate(v.frame(0), v.frame(0) + v.frame_pixels() * 3);
    std::vector<float> um = union_mask(v);
    for (size_t i = 0; i < um.size(); ++i)
        if (um[i] > 0.5f) plate[i * 3] = plate[i * 3 + 1] = plate[i * 3 + 2] = 0.0f;
    return plate;
}

std::vector<float> union_mask(const Video& v) {
    std::vector<float> um(v.frame_pixels(), 0.0f);
    for (size_t t = 0; t < v.frames; ++t) {
        const float* m = v.frame_mask(t);
        for (size_t i = 0; i < um.size(); ++i) um[i] = std::max(um[i], m[i]);
    }
    return um;
}

std::vector<double> synth_envelope(size_t frames, Rng& rng) {
    std::vector<double> e(frames);
    double cur = rng.uniform();
    for (size_t t = 0; t < frames; ++t) {
        e[t] = cur;
        double next = cur + rng.uniform(-0.28, 0.28);
        if (next < 0) next = -next;
        if (next > 1) next = 2 - next;  // reflection keeps the step bound intact
        cur = next;
    }
    return e;
}

std::vector<float> envelope_features(const std::vector<double>& envelope, size_t tokens_per_frame,
                                     size_t d_audio) {
    size_t frames = envelope.size();
    size_t block = tokens_per_frame * d_audio;
    // Fixed map, independent of the run seed: the same envelope always yields
    // the same features, like a frozen pretrained audio encoder would.
    Rng rng(0xA0D10, "envelope_feature_map");
    std::vector<double> wmap(4 * block);
    for (auto& w : wmap) w = rng.normal() * 0.5;

    std::vector<float> out(frames * block);
    for (size_t t = 0; t < frames; ++t) {
        double win[4] = {envelope[t == 0 ? 0 : t - 1], envelope[t],
                         envelope[t + 1 < frames ? t + 1 : frames - 1], 1.0};
        for (size_t j = 0; j < block; ++j) {
            double acc = 0;
            for (int k = 0; k < 4; ++k) acc += wmap[k * block + j] * win[k];
            out[t * block + j] = float(acc);
        }
    }
    return out;
}

namespace {

struct RegionStats {
    double sum_r = 0, sum_g = 0, sum_b = 0;
    double n = 0;
    double dark = 0;
    double sat = 0;
    double colored = 0;
    double dark_x_sum = 0, dark_x2_sum = 0;
};

// Boundary pixels count by their fractional overlap with the region and the
// dark/colored responses ramp instead of thresholding, so descriptors vary
// smoothly as the subject drifts across the pixel grid.
RegionStats scan_region(const float* frame, size_t h, size_t w, double x0, double y0, double x1,
                        double y1) {
    RegionStats s;
    long ix0 = std::max(0L, long(std::floor(x0)));
    long ix1 = std::min(long(w) - 1, long(std::ceil(x1)) - 1);
    long iy0 = std::max(0L, long(std::floor(y0)));
    long iy1 = std::min(long(h) - 1, long(std::ceil(y1)) - 1);
    for (long y = iy0; y <= iy1; ++y) {
        double wy = std::min(double(y) + 1, y1) - std::max(double(y), y0);
        if (wy <= 0) continue;
        for (long x = ix0; x <= ix1; ++x) {
            double wx = std::min(double(x) + 1, x1) - std::max(double(x), x0);
            if (wx <= 0) continue;
            double cov = wx * wy;
            const float* p = frame + (size_t(y) * w + size_t(x)) * 3;
            double r = p[0], g = p[1], b = p[2];
            double lum = (r + g + b) / 3.0;
            s.sum_r += cov * r;
            s.sum_g += cov * g;
            s.sum_b += cov * b;
            s.n += cov;
            double mx = std::max({r, g, b}), mn = std::min({r, g, b});
            s.sat += cov * (mx - mn);
            s.colored += cov * std::clamp((mx - mn - 0.06) / 0.04, 0.0, 1.0);
            double dk = cov * std::clamp((0.26 - lum) / 0.08, 0.0, 1.0);
            if (dk > 0) {
                double px = x + 0.5;
                s.dark += dk;
                s.dark_x_sum += dk * px;
                s.dark_x2_sum += dk * px * px;
            }
        }
    }
    return s;
}

// Population statistics of the raw descriptor, measured once over a 400
// identity sweep and frozen. Raw features are z-scored against these so no
// single dimension dominates the cosine geometry; the scale floor keeps
// near-constant dimensions from amplifying noise on degraded frames.
constexpr double kFeatCenter[16] = {0.62796, 0.31577, 0.31218, 0.57132, 0.08309, 0.16621,
                                    0.40114, 0.47102, 0.02114, 0.11073, 0.50000, 0.42337,
                                    0.35620, 0.81218, 0.50359, 1.00000};
constexpr double kFeatScale[16] = {0.07179, 0.05894, 0.05656, 0.07096, 0.04515, 0.03000,
                                   0.06327, 0.06665, 0.03000, 0.03000, 0.03000, 0.04595,
                                   0.04810, 0.05656, 0.09051, 0.03000};

}  // namespace

std::vector<double> raw_face_features(const float* frame, size_t height, size_t width, const Box& box) {
    double bw = std::max(4.0, double(box.width()));
    double bh = std::max(4.0, double(box.height()));
    double x0 = box.x0, y0 = box.y0, x1 = box.x1, y1 = box.y1;
    double cx = (x0 + x1) / 2, cy = (y0 + y1) / 2;
    double rx = std::max(1.0, bw / 2 - kBoxPad), ry = std::max(1.0, bh / 2 - kBoxPad);

    // Every region below stays strictly inside the subject for all identity
    // and drift draws, so no background pixel ever reaches a descriptor.

    // Face band: central area holding skin and eyes, clear of mouth and corners.
    RegionStats u = scan_region(frame, height, width, x0 + 0.22 * bw, y0 + 0.25 * bh,
                                x1 - 0.22 * bw, y0 + 0.58 * bh);
    // Hair strip above the eye line.
    RegionStats hb = scan_region(frame, height, width, cx - 0.30 * rx, cy - 0.90 * ry,
                                 cx + 0.30 * rx, cy - 0.55 * ry);
    // Cheek patches either side of the mouth.
    RegionStats ob = scan_region(frame, height, width, cx - 0.75 * rx, cy + 0.10 * ry,
                                 cx - 0.45 * rx, cy + 0.40 * ry);
    {
        RegionStats ob2 = scan_region(frame, height, width, cx + 0.45 * rx, cy + 0.10 * ry,
                                      cx + 0.75 * rx, cy + 0.40 * ry);
        ob.sum_r += ob2.sum_r;
        ob.sum_g += ob2.sum_g;
        ob.sum_b += ob2.sum_b;
        ob.n += ob2.n;
    }
    // Central vertical strip: hair, brow, eyes; stops above the mouth so the
    // descriptor does not move with the speech aperture.
    double sx0 = cx - 0.28 * rx, sx1 = cx + 0.28 * rx;
    double sy0 = cy - 1.05 * ry, sy1 = cy + 0.20 * ry;
    RegionStats st = scan_region(frame, height, width, sx0, sy0, sx1, sy1);

    double un = std::max(1.0, u.n);
    double stn = std::max(1.0, st.n);
    double mean_r = u.sum_r / un, mean_g = u.sum_g / un, mean_b = u.sum_b / un;

    double eye_spread = 0;
    if (u.dark >= 2) {
        double mx = u.dark_x_sum / u.dark;
        double var = u.dark_x2_sum / u.dark - mx * mx;
        eye_spread = std::sqrt(std::max(0.0, var)) / bw;
    }

    // Luminance moments over the strip, with fractional boundary coverage.
    double m00 = 0, m10 = 0, m01 = 0, m20 = 0, m02 = 0, m11 = 0;
    {
        long ix0 = std::max(0L, long(std::floor(sx0)));
        long ix1 = std::min(long(width) - 1, long(std::ceil(sx1)) - 1);
        long iy0 = std::max(0L, long(std::floor(sy0)));
        long iy1 = std::min(long(height) - 1, long(std::ceil(sy1)) - 1);
        for (long y = iy0; y <= iy1; ++y) {
            double wy = std::min(double(y) + 1, sy1) - std::max(double(y), sy0);
            if (wy <= 0) continue;
            for (long x = ix0; x <= ix1; ++x) {
                double wx = std::min(double(x) + 1, sx1) - std::max(double(x), sx0);
                if (wx <= 0) continue;
                const float* p = frame + (size_t(y) * width + size_t(x)) * 3;
                double lum = wx * wy * (p[0] + p[1] + p[2]) / 3.0;
                double nx = (x + 0.5 - x0) / bw, ny = (y + 0.5 - y0) / bh;
                m00 += lum;
                m10 += lum * nx;
                m01 += lum * ny;
                m20 += lum * nx * nx;
                m02 += lum * ny * ny;
                m11 += lum * nx * ny;
            }
        }
    }
    double cx_m = m00 > 0 ? m10 / m00 : 0, cy_m = m00 > 0 ? m01 / m00 : 0;
    double mu20 = m00 > 0 ? m20 / m00 - cx_m * cx_m : 0;
    double mu02 = m00 > 0 ? m02 / m00 - cy_m * cy_m : 0;
    double mu11 = m00 > 0 ? m11 / m00 - cx_m * cy_m : 0;

    return {
        mean_r,
        mean_g,
        mean_b,
        0.5 * bh / bw,
        u.dark / un,
        eye_spread,
        (hb.sum_r + hb.sum_g + hb.sum_b) / (3.0 * std::max(1.0, hb.n)),
        (ob.sum_r + ob.sum_g + ob.sum_b) / (3.0 * std::max(1.0, ob.n)),
        4.0 * mu20,
        4.0 * mu02,
        4.0 * mu11 + 0.5,
        (st.sum_r + st.sum_g + st.sum_b) / (3.0 * stn),
        u.sat / un,
        mean_r - mean_g + 0.5,
        mean_g - mean_b + 0.5,
        st.colored / stn,
    };
}

std::vector<double> oracle_embed(const float* frame, size_t height, size_t width, const Box& box) {
    std::vector<double> f = raw_face_features(frame, height, width, box);
    for (size_t i = 0; i < f.size(); ++i) f[i] = (f[i] - kFeatCenter[i]) / kFeatScale[i];
    double nrm = 0;
    for (double v : f) nrm += v * v;
    nrm = std::sqrt(std::max(nrm, 1e-12));
    for (auto& v : f) v /= nrm;
    return f;
}

double mouth_aperture(const float* frame, size_t height, size_t width, const Box& box) {
    double bw = box.width(), bh = box.height();
    if (bw <= 2 * kBoxPad || bh <= 2 * kBoxPad) return 0.0;
    double rx = bw / 2 - kBoxPad, ry = bh / 2 - kBoxPad;
    double cx = (box.x0 + box.x1) / 2, cy = (box.y0 + box.y1) / 2;
    double mouth_cy = cy + 0.45 * ry;
    double mrx = kMouthRxFrac * rx, mry = kMouthRyFrac * ry;

    // Generous pad: everything around the mouth reads zero under the detector,
    // so a wide window changes nothing on crisp frames but catches all the
    // mass a lossy round trip smears outward (cell offset plus decode tent).
    double pad = 14.0;
    double sum = 0;
    long ix0 = std::max(0L, long(std::floor(cx - mrx - pad)));
    long ix1 = std::min(long(width) - 1, long(std::ceil(cx + mrx + pad)));
    long iy0 = std::max(0L, long(std::floor(mouth_cy - mry - pad)));
    long iy1 = std::min(long(height) - 1, long(std::ceil(mouth_cy + mry + pad)));
    for (long y = iy0; y <= iy1; ++y)
        for (long x = ix0; x <= ix1; ++x) {
            const float* p = frame + (size_t(y) * width + size_t(x)) * 3;
            sum += std::max(0.0, double(p[0]) - double(p[1]) - double(p[2]));
        }
    double raw = sum / (kMouthPeak * M_PI * mrx * mry);
    return std::clamp((raw - kMouthFloor) / (1.0 - kMouthFloor), 0.0, 1.0);
}

// ---- Latent codec ----------------------------------------------------------

namespace {

// Orthonormal channel lift 3 -> c_lat, fixed for the lifetime of the format.
std::vector<double> channel_lift(size_t c_lat) {
    if (c_lat < 3) throw std::runtime_error("codec: latent channel count must be at least 3");
    Rng rng(0xC0DEC, "channel_lift");
    std::vector<std::vector<double>> cols(3, std::vector<double>(c_lat));
    for (auto& col : cols)
        for (auto& v : col) v = rng.normal();
    // Modified Gram-Schmidt on the three columns.
    for (size_t i = 0; i < 3; ++i) {
        for (size_t j = 0; j < i; ++j) {
            double dot = 0;
            for (size_t k = 0; k < c_lat; ++k) dot += cols[i][k] * cols[j][k];
            for (size_t k = 0; k < c_lat; ++k) cols[i][k] -= dot * cols[j][k];
        }
        double nrm = 0;
        for (size_t k = 0; k < c_lat; ++k) nrm += cols[i][k] * cols[i][k];
        nrm = std::sqrt(nrm);
        if (nrm < 1e-6) throw std::runtime_error("codec: degenerate channel lift");
        for (size_t k = 0; k < c_lat; ++k) cols[i][k] /= nrm;
    }
    std::vector<double> q(c_lat * 3);  // [k][c]
    for (size_t k = 0; k < c_lat; ++k)
        for (size_t c = 0; c < 3; ++c) q[k * 3 + c] = cols[c][k];
    return q;
}

}  // namespace

size_t latent_frame_count(size_t video_frames, size_t c_t, TemporalMode mode) {
    if (mode == TemporalMode::plain) {
        if (video_frames % c_t) throw std::runtime_error("codec: frame count not divisible by temporal factor");
        return video_frames / c_t;
    }
    if ((video_frames - 1) % c_t)
        throw std::runtime_error("codec: frame count minus one not divisible by temporal factor");
    return 1 + (video_frames - 1) / c_t;
}

std::vector<std::pair<size_t, size_t>> temporal_groups(size_t video_frames, size_t c_t, TemporalMode mode) {
    size_t n = latent_frame_count(video_frames, c_t, mode);
    std::vector<std::pair<size_t, size_t>> groups;
    groups.reserve(n);
    if (mode == TemporalMode::first_frame_plus) {
        groups.emplace_back(0, 1);
        for (size_t j = 1; j < n; ++j) groups.emplace_back(1 + (j - 1) * c_t, c_t);
    } else {
        for (size_t j = 0; j < n; ++j) groups.emplace_back(j * c_t, c_t);
    }
    return groups;
}

Latent encode_video(const float* rgb, size_t frames, size_t height, size_t width,
                    const CodecSpec& codec, TemporalMode mode) {
    if (height % codec.c_s || width % codec.c_s)
        throw std::runtime_error("codec: frame size not divisible by spatial factor");
    auto groups = temporal_groups(frames, codec.c_t, mode);
    std::vector<double> q = channel_lift(codec.c_lat);

    Latent z;
    z.frames = groups.size();
    z.height = height / codec.c_s;
    z.width = width / codec.c_s;
    z.channels = codec.c_lat;
    z.data.resize(z.size());

    for (size_t j = 0; j < groups.size(); ++j) {
        auto [t0, len] = groups[j];
        for (size_t gy = 0; gy < z.height; ++gy)
            for (size_t gx = 0; gx < z.width; ++gx) {
                double pooled[3] = {0, 0, 0};
                for (size_t t = t0; t < t0 + len; ++t)
                    for (size_t y = gy * codec.c_s; y < (gy + 1) * codec.c_s; ++y)
                        for (size_t x = gx * codec.c_s; x < (gx + 1) * codec.c_s; ++x) {
                            const float* p = rgb + ((t * height + y) * width + x) * 3;
                            pooled[0] += p[0];
                            pooled[1] += p[1];
                            pooled[2] += p[2];
                        }
                double inv = 1.0 / double(len * codec.c_s * codec.c_s);
                for (int c = 0; c < 3; ++c) pooled[c] *= inv;
                float* out = z.data.data() + ((j * z.height + gy) * z.width + gx) * z.channels;
                for (size_t k = 0; k < z.channels; ++k)
                    out[k] = float(q[k * 3 + 0] * pooled[0] + q[k * 3 + 1] * pooled[1] +
                                   q[k * 3 + 2] * pooled[2]);
            }
    }
    return z;
}

Latent encode_video(const Video& v, const CodecSpec& codec, TemporalMode mode) {
    return encode_video(v.rgb.data(), v.frames, v.height, v.width, codec, mode);
}

std::vector<float> decode_video(const Latent& z, const CodecSpec& codec, TemporalMode mode,
                                size_t* out_frames) {
    std::vector<double> q = channel_lift(codec.c_lat);
    size_t height = z.height * codec.c_s, width = z.width * codec.c_s;
    size_t frames = mode == TemporalMode::plain ? z.frames * codec.c_t : 1 + (z.frames - 1) * codec.c_t;
    auto groups = temporal_groups(frames, codec.c_t, mode);

    // Per latent frame: unmix the channels at each cell, then replicate the
    // cell color over its c_s x c_s block and its temporal group.
    std::vector<float> rgb(frames * height * width * 3);
    std::vector<double> cell(z.height * z.width * 3);
    for (size_t j = 0; j < groups.size(); ++j) {
        for (size_t gy = 0; gy < z.height; ++gy)
            for (size_t gx = 0; gx < z.width; ++gx) {
                const float* in = z.data.data() + ((j * z.height + gy) * z.width + gx) * z.channels;
                double* out = cell.data() + (gy * z.width + gx) * 3;
                for (int c = 0; c < 3; ++c) {
                    double acc = 0;
                    for (size_t k = 0; k < z.channels; ++k) acc += q[k * 3 + c] * in[k];
                    out[c] = acc;
                }
            }
        auto [t0, len] = groups[j];
        for (size_t y = 0; y < height; ++y)
            for (size_t x = 0; x < width; ++x) {
                const double* rec = cell.data() + ((y / codec.c_s) * z.width + x / codec.c_s) * 3;
                for (size_t t = t0; t < t0 + len; ++t) {
                    float* p = rgb.data() + ((t * height + y) * width + x) * 3;
                    p[0] = float(rec[0]);
                    p[1] = float(rec[1]);
                    p[2] = float(rec[2]);
                }
            }
    }
    if (out_frames) *out_frames = frames;
    return rgb;
}

}  // namespace tavr
