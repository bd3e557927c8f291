#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace cli {

// A subcommand's configuration: the JSON config file with --set overrides and global flags applied.
struct RunConfig {
    std::string subcommand;
    nlohmann::json values = nlohmann::json::object();
    std::filesystem::path base_dir;  // relative paths in the config resolve against this
    std::filesystem::path output_dir;
    int64_t seed = 0;
    int workers = 1;

    bool has(const std::string & key) const { return values.contains(key) && !values.at(key).is_null(); }
    // Throws config_error naming the key when it is missing.
    const nlohmann::json & at(const std::string & key) const;
    std::filesystem::path path(const std::string & key) const;
    std::filesystem::path resolve(const std::filesystem::path & p) const;

    // A section given inline or as a path to a JSON file. Returns the JSON and the directory its
    // own relative paths resolve against.
    std::pair<nlohmann::json, std::filesystem::path> section(const std::string & key) const;
};

struct GlobalFlags {
    std::optional<std::filesystem::path> config;
    std::optional<int64_t> seed;
    std::optional<int> workers;
    std::optional<std::filesystem::path> output_dir;
    std::vector<std::string> overrides;  // "dotted.key=value"
};

// Applies "a.b=value"; value is parsed as JSON and falls back to a plain string.
void apply_override(nlohmann::json & config, const std::string & assignment);

RunConfig resolve_run_config(const std::string & subcommand, const GlobalFlags & flags);

// Writes <output_dir>/resolved_config.json and returns its path.
std::filesystem::path write_resolved_config(const RunConfig & run);

}  // namespace cli
