#pragma once

#include <cstdint>
#include <vector>

#include "tavr/rng.hpp"
#include "tavr/tensor.hpp"

namespace tavr {

// All appearance traits live in [0,1]; sample_identity draws them on a coarse
// grid so random identities are either equal or clearly distinct.
struct IdentitySpec {
    double hue = 0.5;      // face colour hue
    double tone = 0.5;     // face brightness
    double face_w = 0.5;   // head width
    double face_h = 0.5;   // head height
    double eyes = 0.5;     // eye spacing
    double mouth_w = 0.5;  // mouth width (small modulation around a fixed fraction)
    double hair = 0.5;      // hair lightness
    double eye_size = 0.5;  // eye radius
};

struct SceneSpec {
    double tex_a = 0.5, tex_b = 0.5, tex_c = 0.5;  // background texture phases
    double light = 1.0;                            // background lighting in [0.45, 1]
};

struct Box {
    float x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    float width() const { return x1 - x0; }
    float height() const { return y1 - y0; }
};

// Frames are [t][y][x][rgb] in [0,1]; masks are [t][y][x] in {0,1}.
struct Video {
    size_t frames = 0, height = 0, width = 0;
    std::vector<float> rgb;
    std::vector<float> mask;
    std::vector<Box> boxes;

    const float* frame(size_t t) const { return rgb.data() + t * height * width * 3; }
    const float* frame_mask(size_t t) const { return mask.data() + t * height * width; }
    size_t frame_pixels() const { return height * width; }
};

IdentitySpec sample_identity(Rng& rng);
SceneSpec sample_scene(Rng& rng);

// Identities whose appearance descriptors are pairwise well separated, for
// building evaluation benchmarks; plain sample_identity draws can land
// arbitrarily close to each other.
std::vector<IdentitySpec> sample_distinct_identities(Rng& rng, size_t n);

// Renders one subject over a static textured background. aperture[t] in [0,1]
// drives the mouth opening; motion_seed drives a small bounded head drift.
// The subject, including its drift, always stays inside the frame.
Video render_video(const IdentitySpec& id, const SceneSpec& scene, size_t height, size_t width,
                   const std::vector<double>& aperture, uint64_t motion_seed);

// Background plate: the first frame with the union subject region zeroed.
std::vector<float> background_plate(const Video& v);

// The scene's background texture alone, [height][width][3].
std::vector<float> scene_background(const SceneSpec& scene, size_t height, size_t width);
// Union of the per-frame subject masks, [y][x].
std::vector<float> union_mask(const Video& v);

// Smooth envelope in [0,1] with |e[t+1] - e[t]| <= 0.35.
std::vector<double> synth_envelope(size_t frames, Rng& rng);

// Per-frame audio feature block: a fixed seeded linear map of the local
// envelope window, [t][token][channel].
std::vector<float> envelope_features(const std::vector<double>& envelope, size_t tokens_per_frame,
                                     size_t d_audio);

// 16-dimensional unit-norm appearance descriptor of the boxed face region.
// Pure pixel arithmetic; used as the evaluation identity oracle.
std::vector<double> oracle_embed(const float* frame, size_t height, size_t width, const Box& box);
// The uncalibrated descriptor behind oracle_embed, exposed for calibration.
std::vector<double> raw_face_features(const float* frame, size_t height, size_t width, const Box& box);

// Estimated mouth opening in [0,1] from the boxed region alone.
double mouth_aperture(const float* frame, size_t height, size_t width, const Box& box);

// ---- Latent codec ----------------------------------------------------------

// Temporal grouping of video frames into latent frames.
//   plain:            frames/c_t groups of c_t
//   first_frame_plus: frame 0 alone, then (frames-1)/c_t groups of c_t
enum class TemporalMode { plain, first_frame_plus };

struct Latent {
    size_t frames = 0, height = 0, width = 0, channels = 0;
    std::vector<float> data;  // [t][y][x][c]
    size_t size() const { return frames * height * width * channels; }
};

struct CodecSpec {
    size_t c_s = 8, c_t = 1, c_lat = 4;
};

size_t latent_frame_count(size_t video_frames, size_t c_t, TemporalMode mode);
std::vector<std::pair<size_t, size_t>> temporal_groups(size_t video_frames, size_t c_t, TemporalMode mode);

// Block-average pooling over space and time, then a fixed orthonormal channel
// lift 3 -> c_lat. decode is the exact right-inverse of the channel lift with
// nearest-neighbour upsampling, so encode(decode(z)) == z up to pooling.
Latent encode_video(const float* rgb, size_t frames, size_t height, size_t width,
                    const CodecSpec& codec, TemporalMode mode);
Latent encode_video(const Video& v, const CodecSpec& codec, TemporalMode mode);
std::vector<float> decode_video(const Latent& z, const CodecSpec& codec, TemporalMode mode,
                                size_t* out_frames = nullptr);

}  // namespace tavr
