#pragma once

#include <string>
#include <vector>

#include "tavr/config.hpp"
#include "tavr/model.hpp"
#include "tavr/toyworld.hpp"

namespace tavr {

// same_scene: reference frames come from the target's own video.
// cross_scene: reference frames come from a second video of the same
// identity in a different scene, with its own motion and audio.
enum class DataMode { same_scene, cross_scene };

struct Sample {
    IdentitySpec identity;
    SceneSpec target_scene, ref_scene;
    Video target;     // clip_frames window
    Video reference;  // selected reference frames
    Video motion;     // the 2*c_t frames immediately before the window
    std::vector<float> bg_plate;  // [H][W][3], first window frame, subject zeroed
    std::vector<float> fg_mask;   // [H][W], union subject mask over the window
    std::vector<double> envelope;      // per target frame
    std::vector<float> audio;          // [T][tokens][d_audio]
    std::vector<double> ref_envelope;  // per reference frame
    std::vector<float> ref_audio;      // [T_ref][tokens][d_audio]
    std::vector<float> text;           // scene descriptor
};

Video slice_video(const Video& v, size_t t0, size_t len);

// ref_len 0 draws the reference length uniformly from [data.ref_min, data.ref_max].
Sample make_sample(const Config& cfg, uint64_t seed, const std::string& split, uint64_t index,
                   DataMode mode, size_t ref_len = 0);
std::vector<Sample> make_dataset(const Config& cfg, uint64_t seed, const std::string& split,
                                 size_t count, DataMode mode, size_t ref_len = 0);

void save_dataset(const std::string& dir, const std::vector<Sample>& samples);
std::vector<Sample> load_dataset(const std::string& dir);

std::string to_string(DataMode m);
DataMode data_mode_from_string(const std::string& s);

// Builds the model conditioning from a dataset sample. Audio features are
// pooled to latent-frame rate; include_motion attaches the pre-window frames.
ConditioningContext sample_context(const Config& cfg, const Sample& s, bool include_motion);

// Ground-truth target latent (first-frame-plus temporal grouping).
Latent sample_target_latent(const Config& cfg, const Sample& s);

}  // namespace tavr
