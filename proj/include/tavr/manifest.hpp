#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tavr {

// One per CLI run, written atomically to <out>/run_manifest.json. Carries
// wall-clock timestamps, so reproducibility checks compare every output
// except this file.
struct RunManifest {
    std::string command;
    std::string config_text;
    uint64_t seed = 0;
    std::string started_at;
    std::string finished_at;
    std::vector<std::pair<std::string, uint64_t>> outputs;  // path (relative), bytes

    void add_output(const std::string& dir, const std::string& rel_path);
    void write(const std::string& dir) const;
};

std::string utc_now_iso8601();

}  // namespace tavr
