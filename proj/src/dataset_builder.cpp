#include "latent_align/dataset_builder.hpp"

#include <cstdio>
#include <sstream>

#include "latent_align/parallel.hpp"
#include "latent_align/util.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace latent_align {

json dataset_build_options_to_json(const DatasetBuildOptions & o) {
    return json{{"seeds_per_prompt", o.seeds_per_prompt},
                {"base_seed", o.base_seed},
                {"stored_steps", o.stored_steps ? json::array({o.stored_steps->lo, o.stored_steps->hi}) : json(nullptr)},
                {"save_final_image", o.save_final_image},
                {"subset_tag", subset_tag_name(o.subset_tag)}};
}

DatasetBuildOptions dataset_build_options_from_json(const json & j) {
    DatasetBuildOptions o;
    try {
        o.seeds_per_prompt = j.value("seeds_per_prompt", o.seeds_per_prompt);
        o.base_seed = j.value("base_seed", o.base_seed);
        if (j.contains("stored_steps") && !j.at("stored_steps").is_null()) {
            const auto & r = j.at("stored_steps");
            o.stored_steps = StepRange{r.at(0).get<int>(), r.at(1).get<int>()};
        }
        o.save_final_image = j.value("save_final_image", o.save_final_image);
        if (j.contains("subset_tag")) o.subset_tag = parse_subset_tag(j.at("subset_tag").get<std::string>());
    } catch (const json::exception & e) {
        throw config_error(std::string("invalid dataset options: ") + e.what());
    }
    if (o.seeds_per_prompt < 1) throw config_error("seeds_per_prompt must be >= 1");
    return o;
}

std::string dataset_sample_id(size_t prompt_index, int seed_index) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "p%05zu_s%02d", prompt_index, seed_index);
    return buf;
}

int64_t dataset_seed(const DatasetBuildOptions & o, size_t prompt_index, int seed_index) {
    return o.base_seed + static_cast<int64_t>(prompt_index) * o.seeds_per_prompt + seed_index;
}

DatasetManifest build_dataset(DenoiserBackend & backend, const std::vector<std::string> & prompts,
                              const DatasetBuildOptions & options, const fs::path & root) {
    if (options.seeds_per_prompt < 1) throw config_error("seeds_per_prompt must be >= 1");
    const int T = backend.total_steps();
    const StepRange keep = options.stored_steps.value_or(StepRange{0, T}).intersect({0, T});
    if (keep.empty()) throw config_error("stored_steps does not overlap 0.." + std::to_string(T));
    for (size_t i = 0; i < prompts.size(); ++i) {
        if (trim(prompts[i]).empty()) throw data_error("prompt " + std::to_string(i) + " is empty");
    }
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) throw io_error("cannot create dataset root '" + root.string() + "': " + ec.message());

    const size_t per = static_cast<size_t>(options.seeds_per_prompt);
    const int workers = backend.thread_safe() ? options.workers : 1;
    parallel_for(prompts.size() * per, workers, [&](size_t job) {
        const size_t p = job / per;
        const int k = static_cast<int>(job % per);
        LatentTrajectory t;
        t.sample_id = dataset_sample_id(p, k);
        t.prompt = prompts[p];
        t.seed = dataset_seed(options, p, k);
        t.total_steps = T;
        auto state = backend.init(t.prompt, t.seed);
        if (keep.contains(0)) t.frames.push_back(state.frame);
        for (int s = 1; s <= T; ++s) {
            auto f = backend.step(state);
            if (keep.contains(s)) t.frames.push_back(std::move(f));
        }
        if (options.save_final_image) t.final_image_ref = "final.bin";
        write_trajectory(t, root);
        if (options.save_final_image) write_image_blob(sample_dir(root, t.sample_id) / "final.bin", backend.finalize(state));
    });

    auto manifest = build_manifest(root, options.subset_tag);
    write_manifest(manifest, root);
    return manifest;
}

std::vector<std::string> load_prompts(const fs::path & path) {
    if (!fs::exists(path)) throw not_found_error("prompts file not found: " + path.string());
    std::istringstream in(read_text_file(path));
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        auto t = trim(line);
        if (!t.empty()) out.push_back(std::move(t));
    }
    return out;
}

}  // namespace latent_align
