#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace fewshot {

// Written atomically at the end of every CLI command. Re-running a command
// whose manifest shows identical input hashes is a no-op without --force.
struct RunManifest {
    std::string command;
    std::string config_snapshot_json;
    std::map<std::string, std::string> input_hashes;
    std::vector<std::string> output_paths;
    double wall_clock_seconds = 0.0;
    int exit_status = 0;

    std::string to_json() const;
    static RunManifest from_json(const std::string& text);

    void write(const std::filesystem::path& path) const;
    // True if a manifest exists at `path` with the same command and input
    // hashes, zero exit status, and all named outputs still present.
    static bool matches_existing(const std::filesystem::path& path, const std::string& command,
                                 const std::map<std::string, std::string>& input_hashes);
};

}  // namespace fewshot
