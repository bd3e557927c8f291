#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "latent_align/bon_orchestrator.hpp"
#include "latent_align/latent_store.hpp"

namespace latent_align {

struct DatasetBuildOptions {
    int seeds_per_prompt = 1;
    int64_t base_seed = 0;
    std::optional<StepRange> stored_steps;  // empty = every step 0..T
    bool save_final_image = true;
    SubsetTag subset_tag = SubsetTag::custom;
    int workers = 1;
};

nlohmann::json dataset_build_options_to_json(const DatasetBuildOptions & options);
DatasetBuildOptions dataset_build_options_from_json(const nlohmann::json & j);

// Sample id of the k-th seed of the i-th prompt: p00012_s03.
std::string dataset_sample_id(size_t prompt_index, int seed_index);
// Seed of that sample: base_seed + prompt_index * seeds_per_prompt + seed_index.
int64_t dataset_seed(const DatasetBuildOptions & options, size_t prompt_index, int seed_index);

// Runs the backend for every (prompt, seed), stores the trajectories and final images under
// root and writes the manifest. Deterministic in (backend, prompts, options).
DatasetManifest build_dataset(DenoiserBackend & backend, const std::vector<std::string> & prompts,
                              const DatasetBuildOptions & options, const std::filesystem::path & root);

// One prompt per non-empty line; surrounding whitespace trimmed.
std::vector<std::string> load_prompts(const std::filesystem::path & path);

}  // namespace latent_align
