#include "tavr/manifest.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace tavr {

std::string utc_now_iso8601() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void RunManifest::add_output(const std::string& dir, const std::string& rel_path) {
    auto full = std::filesystem::path(dir) / rel_path;
    uint64_t bytes = std::filesystem::exists(full) ? std::filesystem::file_size(full) : 0;
    outputs.emplace_back(rel_path, bytes);
}

void RunManifest::write(const std::string& dir) const {
    nlohmann::json j;
    j["command"] = command;
    j["config"] = config_text;
    j["seed"] = seed;
    j["started_at"] = started_at;
    j["finished_at"] = finished_at;
    j["outputs"] = nlohmann::json::array();
    for (const auto& [path, bytes] : outputs) j["outputs"].push_back({{"path", path}, {"bytes", bytes}});

    auto target = std::filesystem::path(dir) / "run_manifest.json";
    auto tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw std::runtime_error("manifest: cannot open " + tmp.string());
        out << j.dump(2) << "\n";
    }
    std::filesystem::rename(tmp, target);
}

}  // namespace tavr
