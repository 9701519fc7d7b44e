#include "fewshot/manifest.hpp"

#include "fewshot/util.hpp"
#include "json.hpp"

namespace fewshot {

std::string RunManifest::to_json() const {
    nlohmann::ordered_json j;
    j["command"] = command;
    j["config"] = config_snapshot_json.empty()
                      ? nlohmann::json::object()
                      : nlohmann::json::parse(config_snapshot_json);
    j["input_hashes"] = input_hashes;
    j["outputs"] = output_paths;
    j["wall_clock_seconds"] = wall_clock_seconds;
    j["exit_status"] = exit_status;
    return j.dump(2) + "\n";
}

RunManifest RunManifest::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    RunManifest m;
    m.command = j.value("command", "");
    m.config_snapshot_json = j.value("config", nlohmann::json::object()).dump();
    const nlohmann::json hashes = j.value("input_hashes", nlohmann::json::object());
    for (auto& [k, v] : hashes.items()) m.input_hashes[k] = v.get<std::string>();
    const nlohmann::json outputs = j.value("outputs", nlohmann::json::array());
    for (auto& p : outputs) m.output_paths.push_back(p.get<std::string>());
    m.wall_clock_seconds = j.value("wall_clock_seconds", 0.0);
    m.exit_status = j.value("exit_status", 0);
    return m;
}

void RunManifest::write(const std::filesystem::path& path) const {
    write_file_atomic(path, to_json());
}

bool RunManifest::matches_existing(const std::filesystem::path& path, const std::string& command,
                                   const std::map<std::string, std::string>& input_hashes) {
    if (!std::filesystem::exists(path)) return false;
    RunManifest m;
    try {
        m = from_json(read_file(path));
    } catch (const std::exception&) {
        return false;
    }
    if (m.command != command || m.exit_status != 0 || m.input_hashes != input_hashes) return false;
    for (const auto& p : m.output_paths)
        if (!std::filesystem::exists(p)) return false;
    return true;
}

}  // namespace fewshot
