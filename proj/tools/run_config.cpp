#include "run_config.hpp"

#include "latent_align/error.hpp"
#include "latent_align/util.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using latent_align::config_error;

namespace cli {

const json & RunConfig::at(const std::string & key) const {
    if (!has(key)) throw config_error(subcommand + ": config key '" + key + "' is required");
    return values.at(key);
}

fs::path RunConfig::resolve(const fs::path & p) const {
    if (p.is_absolute() || base_dir.empty()) return p;
    return base_dir / p;
}

fs::path RunConfig::path(const std::string & key) const {
    const auto & v = at(key);
    if (!v.is_string()) throw config_error(subcommand + ": config key '" + key + "' must be a path string");
    return resolve(v.get<std::string>());
}

std::pair<json, fs::path> RunConfig::section(const std::string & key) const {
    const auto & v = at(key);
    if (v.is_object()) return {v, base_dir};
    if (!v.is_string()) throw config_error(subcommand + ": '" + key + "' must be an object or a path to a JSON file");
    const auto file = resolve(v.get<std::string>());
    if (!fs::exists(file)) throw config_error(subcommand + ": " + key + " config '" + file.string() + "' not found");
    try {
        return {json::parse(latent_align::read_text_file(file)), file.parent_path()};
    } catch (const json::exception & e) {
        throw config_error(key + " config '" + file.string() + "' is not valid JSON: " + e.what());
    }
}

void apply_override(json & config, const std::string & assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw config_error("--set expects key=value, got '" + assignment + "'");
    }
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::exception &) {
        value = raw;
    }
    json * node = &config;
    size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw config_error("--set key '" + key + "' has an empty component");
        if (!node->is_object()) throw config_error("--set key '" + key + "' descends into a non-object value");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        node = &(*node)[part];
        if (node->is_null()) *node = json::object();
        start = dot + 1;
    }
}

RunConfig resolve_run_config(const std::string & subcommand, const GlobalFlags & flags) {
    RunConfig run;
    run.subcommand = subcommand;
    if (flags.config) {
        if (!fs::exists(*flags.config)) throw config_error("config file '" + flags.config->string() + "' not found");
        try {
            run.values = json::parse(latent_align::read_text_file(*flags.config));
        } catch (const json::exception & e) {
            throw config_error("config file '" + flags.config->string() + "' is not valid JSON: " + e.what());
        }
        if (!run.values.is_object()) throw config_error("config file must hold a JSON object");
        run.base_dir = fs::absolute(*flags.config).parent_path();
    } else {
        run.base_dir = fs::current_path();
    }
    for (const auto & o : flags.overrides) apply_override(run.values, o);

    try {
        if (flags.seed) run.values["seed"] = *flags.seed;
        if (flags.workers) run.values["workers"] = *flags.workers;
        run.seed = run.values.value("seed", int64_t{0});
        run.workers = run.values.value("workers", 1);
    } catch (const json::exception & e) {
        throw config_error(std::string("seed and workers must be integers: ") + e.what());
    }
    if (run.workers < 1) throw config_error("workers must be >= 1");

    if (flags.output_dir) {
        run.output_dir = fs::absolute(*flags.output_dir);
    } else if (run.has("output_dir")) {
        run.output_dir = run.path("output_dir");
    } else {
        run.output_dir = fs::absolute(fs::path("out") / subcommand);
    }
    run.values["output_dir"] = run.output_dir.string();
    return run;
}

fs::path write_resolved_config(const RunConfig & run) {
    std::error_code ec;
    fs::create_directories(run.output_dir, ec);
    if (ec) throw latent_align::io_error("cannot create output directory '" + run.output_dir.string() + "': " + ec.message());
    json snapshot{{"subcommand", run.subcommand}, {"base_dir", run.base_dir.string()}, {"config", run.values}};
    const auto path = run.output_dir / "resolved_config.json";
    latent_align::write_text_file(path, snapshot.dump(2) + "\n");
    return path;
}

}  // namespace cli
