#include "commands.hpp"

#include <iostream>
#include <set>

#include "latent_align/bon_orchestrator.hpp"
#include "latent_align/corruption_builder.hpp"
#include "latent_align/dataset_builder.hpp"
#include "latent_align/evaluator.hpp"
#include "latent_align/noisy_trainer.hpp"
#include "latent_align/parallel.hpp"
#include "latent_align/report.hpp"
#include "latent_align/toy_denoiser.hpp"
#include "latent_align/toy_world.hpp"
#include "latent_align/util.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace latent_align;

namespace cli {

namespace {

LatentProjection projection_of(const RunConfig & run) {
    return run.has("projection") ? load_projection(run.path("projection")) : default_projection();
}

std::shared_ptr<EncoderGateway> gateway_of(const RunConfig & run, const std::string & key = "gateway") {
    const auto [j, dir] = run.section(key);
    return gateway_from_json(j, dir);
}

std::unique_ptr<DenoiserBackend> backend_of(const RunConfig & run) {
    if (!run.has("backend")) {
        throw config_error(run.subcommand + ": no generation backend configured; set \"backend\" to a backend config "
                           "(e.g. config/backend_toy.json)");
    }
    const auto [j, dir] = run.section("backend");
    return backend_from_json(j, dir);
}

std::unique_ptr<OracleAdapter> oracle_of(const RunConfig & run) {
    const auto [j, dir] = run.section("oracle");
    return oracle_from_json(j, dir);
}

DatasetManifest manifest_of(const RunConfig & run) { return load_manifest(run.path("dataset")); }

// "prompts": a file with one prompt per line or an inline list; "generate_prompts": {"count", "seed"}
// samples the toy grammar.
std::vector<std::string> prompts_of(const RunConfig & run) {
    if (run.has("prompts")) {
        const auto & p = run.at("prompts");
        if (p.is_array()) return p.get<std::vector<std::string>>();
        return load_prompts(run.path("prompts"));
    }
    if (run.has("generate_prompts")) {
        const auto & g = run.at("generate_prompts");
        std::mt19937_64 rng(g.value("seed", static_cast<uint64_t>(run.seed)));
        std::vector<std::string> out;
        for (int i = 0; i < g.at("count").get<int>(); ++i) out.push_back(ToyPromptGrammar::sample(rng));
        return out;
    }
    throw config_error(run.subcommand + ": set \"prompts\" (file or list) or \"generate_prompts\"");
}

std::string prompt_id(size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "p%05zu", index);
    return buf;
}

std::string prompt_hash(const std::string & prompt) { return sha256_hex(prompt).substr(0, 12); }

void write_out(const RunConfig & run, const std::string & name, const std::string & text) {
    write_text_file(run.output_dir / name, text);
}

std::vector<int> int_list(const json & j) { return j.get<std::vector<int>>(); }

StepRange range_of(const json & j) {
    const auto v = int_list(j);
    if (v.size() != 2) throw config_error("step ranges are written [lo, hi]");
    return {v[0], v[1]};
}

// Steps requested by "steps", or every step stored by some sample; "include_final" adds the final image.
std::vector<int> steps_of(const RunConfig & run, const DatasetManifest & manifest, bool final_default) {
    std::vector<int> steps;
    if (run.has("steps")) {
        steps = int_list(run.at("steps"));
    } else {
        std::set<int> all;
        for (const auto & e : manifest.entries) all.insert(e.steps.begin(), e.steps.end());
        steps.assign(all.begin(), all.end());
    }
    if (run.values.value("include_final", final_default)) steps.push_back(kFinalStep);
    return steps;
}

std::vector<BonPlan> plans_of(const RunConfig & run, const std::string & key) {
    std::vector<BonPlan> plans;
    const auto & j = run.at(key);
    for (const auto & p : j.is_array() ? j : json::array({j})) {
        auto plan = bon_plan_from_json(p);
        if (plan.seeds.empty()) {
            for (int k = 0; k < plan.n; ++k) plan.seeds.push_back(run.seed + k);
        }
        plans.push_back(std::move(plan));
    }
    return plans;
}

}  // namespace

void cmd_build_dataset(const RunConfig & run) {
    auto backend = backend_of(run);
    const auto prompts = prompts_of(run);
    auto options = dataset_build_options_from_json(run.values.value("options", json::object()));
    options.base_seed = run.seed;
    options.workers = run.workers;
    const auto manifest = build_dataset(*backend, prompts, options, run.output_dir);
    std::cout << "wrote " << manifest.entries.size() << " trajectories (" << prompts.size() << " prompts, T="
              << backend->total_steps() << ") to " << run.output_dir.string() << "\n";
}

void cmd_corrupt(const RunConfig & run) {
    const auto [j, dir] = run.section("llm");
    auto config = llm_config_from_json(j);
    if (config.transcript_dir && config.transcript_dir->is_relative()) config.transcript_dir = dir / *config.transcript_dir;
    if (!config.transcript_dir) config.transcript_dir = run.output_dir / "transcripts";
    if (run.has("offline")) config.offline = run.at("offline").get<bool>();

    std::vector<std::string> prompts;
    if (run.has("dataset")) {
        std::set<std::string> seen;
        for (const auto & e : manifest_of(run).entries) {
            if (seen.insert(e.prompt).second) prompts.push_back(e.prompt);
        }
    } else {
        prompts = prompts_of(run);
    }

    auto client = make_llm_client(config);
    std::string sets, failures;
    int complete = 0, failed = 0;
    for (size_t i = 0; i < prompts.size(); ++i) {
        try {
            sets += factual_set_to_json_line(build_factual_set(*client, prompts[i], prompt_id(i))) + "\n";
            ++complete;
        } catch (const PartialSetError & e) {
            json types = json::array();
            for (auto t : e.failed()) types.push_back(std::string(error_type_id(t)));
            failures += json{{"prompt_id", prompt_id(i)}, {"prompt", prompts[i]}, {"failed", types}, {"error", e.what()}}
                            .dump() +
                        "\n";
            ++failed;
        }
    }
    write_out(run, "factual_sets.jsonl", sets);
    write_out(run, "failures.jsonl", failures);
    std::cout << complete << " complete factual sets, " << failed << " prompts with failed corruptions\n";
}

void cmd_train(const RunConfig & run) {
    auto base = gateway_of(run);
    auto gateway = std::dynamic_pointer_cast<TrainableGateway>(base);
    if (!gateway) throw config_error("train: gateway '" + base->checkpoint_tag() + "' is not trainable");
    const auto manifest = manifest_of(run);
    auto config = train_config_from_json(run.values.value("train", json::object()));
    config.seed = static_cast<uint64_t>(run.seed);
    if (config.resume_from) config.resume_from = run.resolve(*config.resume_from);
    try {
        const auto result = train(*gateway, manifest, config, projection_of(run), run.output_dir);
        std::cout << "trained " << result.steps_completed << "/" << result.total_steps << " steps";
        if (!result.log.empty()) std::cout << ", final loss " << format_number(result.log.back().loss);
        std::cout << "; checkpoint " << result.checkpoint_dir.string() << "\n";
    } catch (const TrainingDiverged & e) {
        std::cerr << "last good checkpoint: " << e.last_good_checkpoint().string() << "\n";
        throw;
    }
}

void cmd_score(const RunConfig & run) {
    const auto gateway = make_concurrent_safe(gateway_of(run));
    const auto projection = projection_of(run);
    const auto manifest = manifest_of(run);
    const auto steps = steps_of(run, manifest, true);
    const std::set<int> wanted(steps.begin(), steps.end());
    std::vector<std::string> lines(manifest.entries.size());
    parallel_for(manifest.entries.size(), run.workers, [&](size_t i) {
        const auto & entry = manifest.entries[i];
        const auto traj = read_trajectory(entry.sample_id, manifest.root);
        const auto text = encode_text(*gateway, traj.prompt);
        const auto id = prompt_hash(traj.prompt);
        for (const auto & f : traj.frames) {
            if (!wanted.count(f.step)) continue;
            lines[i] += score_record_to_json_line({traj.sample_id, f.step, id, s_latent(*gateway, f, projection, text).value}) + "\n";
        }
        if (wanted.count(kFinalStep)) {
            if (const auto path = resolve_final_image(traj, manifest.root)) {
                const auto s = s_final(*gateway, read_image_blob(*path), text);
                lines[i] += score_record_to_json_line({traj.sample_id, std::nullopt, id, s.value}) + "\n";
            }
        }
    });
    std::string out;
    for (const auto & l : lines) out += l;
    write_out(run, "scores.jsonl", out);
    std::cout << "scored " << manifest.entries.size() << " samples with " << gateway->checkpoint_tag() << "\n";
}

void cmd_bon(const RunConfig & run) {
    auto backend = backend_of(run);
    const LatentScorer scorer{gateway_of(run), projection_of(run)};
    const auto prompts = prompts_of(run);
    const int T = backend->total_steps();

    if (run.has("plans")) {
        const auto plans = plans_of(run, "plans");
        const auto rows = sweep(plans, prompts, *backend, scorer);
        json records = json::array();
        std::string jsonl;
        for (const auto & r : rows) {
            jsonl += json{{"cost", r.cost}, {"n", r.n}, {"stop_step", r.stop_step}, {"keep", r.keep},
                          {"prompt_id", prompt_id(r.prompt_index)}, {"selected_index", r.selected_index},
                          {"selected_seed", r.selected_seed}}
                         .dump() +
                     "\n";
        }
        const auto table = frontier_table(rows);
        write_out(run, "frontier.txt", table);
        write_out(run, "frontier.jsonl", jsonl);
        std::cout << table;
        return;
    }

    const auto plan = plans_of(run, "plan").front();
    BonOptions options;
    options.workers = run.workers;
    options.trace_every_step = run.values.value("trace_every_step", false);
    std::string records, summary;
    int64_t total = 0;
    fs::create_directories(run.output_dir / "images");
    for (size_t i = 0; i < prompts.size(); ++i) {
        const auto out = run_bon(plan, prompts[i], *backend, scorer, options);
        records += run_records_jsonl(out, prompt_id(i));
        write_image_blob(run.output_dir / "images" / (prompt_id(i) + ".bin"), out.selected_image);
        summary += prompt_id(i) + " selected candidate " + std::to_string(out.selected_index) + " (seed " +
                   std::to_string(out.selected_seed) + "), cost " + std::to_string(out.ledger.total) + "\n";
        total += out.ledger.total;
    }
    summary += "plan n=" + std::to_string(plan.n) + " stop=" + std::to_string(plan.stop_step) +
               " keep=" + std::to_string(plan.keep) + " T=" + std::to_string(T) + ": cost " +
               std::to_string(cost_of(plan.n, plan.stop_step, T, plan.keep)) + " per prompt, " + std::to_string(total) +
               " total over " + std::to_string(prompts.size()) + " prompts\n";
    write_out(run, "runs.jsonl", records);
    write_out(run, "summary.txt", summary);
    std::cout << summary;
}

namespace {

const char * const kReports[] = {"consistency", "delta", "bon_alignment", "range_grid"};

// A report section sees the top-level keys plus its own.
RunConfig report_view(const RunConfig & run, const std::string & name) {
    RunConfig view = run;
    view.subcommand = "eval " + name;
    for (const char * r : kReports) view.values.erase(r);
    view.values.merge_patch(run.values.at(name));
    return view;
}

void write_plot(const RunConfig & run, const std::string & name, const json & spec) {
    write_out(run, name + "_plot.json", spec.dump(2) + "\n");
}

void eval_consistency(const RunConfig & run) {
    const LatentScorer scorer{gateway_of(run), projection_of(run)};
    const auto manifest = manifest_of(run);
    const auto sets = load_factual_sets(run.path("factual_sets"));
    const auto curve = consistency_curve(scorer, manifest, sets, steps_of(run, manifest, true), run.workers);
    write_out(run, "consistency.txt", consistency_table(curve));
    write_out(run, "consistency.jsonl", consistency_records_jsonl(curve));
    write_plot(run, "consistency_scores", consistency_score_plot(curve));
    write_plot(run, "consistency_recall", consistency_recall_plot(curve));
    std::cout << consistency_table(curve);
}

void eval_delta(const RunConfig & run) {
    const LatentScorer scorer{gateway_of(run), projection_of(run)};
    const auto manifest = manifest_of(run);
    const auto oracle = oracle_of(run);
    const double threshold = run.values.value("gap_threshold", 0.03);
    const auto curve = delta_curve(scorer, manifest, *oracle, steps_of(run, manifest, false),
                                   run.values.value("images_per_prompt", 4), run.workers);
    write_out(run, "delta.txt", delta_table(curve, threshold));
    write_plot(run, "delta", delta_plot(curve, threshold));
    std::cout << delta_table(curve, threshold);
}

void eval_bon_alignment(const RunConfig & run) {
    auto backend = backend_of(run);
    CachingBackend cache(*backend);
    const LatentScorer scorer{gateway_of(run), projection_of(run)};
    const auto oracle = oracle_of(run);
    const auto prompts = prompts_of(run);
    BonOptions options;
    options.decode_all_finished = true;
    std::vector<BonOutcome> outcomes;
    for (const auto & plan : plans_of(run, "plans")) {
        for (const auto & p : prompts) outcomes.push_back(run_bon(plan, p, cache, scorer, options));
    }
    const auto rows = bon_alignment_eval(outcomes, *oracle);
    write_out(run, "bon_alignment.txt", bon_alignment_table(rows));
    write_plot(run, "bon_alignment", bon_alignment_plot(rows));
    std::cout << bon_alignment_table(rows);
}

void eval_range_grid(const RunConfig & run) {
    const auto baseline = gateway_of(run);
    const auto projection = projection_of(run);
    const auto manifest = manifest_of(run);
    std::vector<GridCheckpoint> checkpoints;
    for (const auto & c : run.at("checkpoints")) {
        checkpoints.push_back({range_of(c.at("train_range")), run.resolve(c.at("gateway").get<std::string>())});
    }
    std::vector<StepRange> eval_ranges;
    for (const auto & r : run.at("eval_ranges")) eval_ranges.push_back(range_of(r));

    const std::string metric = run.values.value("metric", std::string("recall"));
    GridCellMetric fn;
    std::vector<FactualSet> sets;
    std::unique_ptr<OracleAdapter> oracle;
    if (metric == "recall") {
        sets = load_factual_sets(run.path("factual_sets"));
        fn = [&](const EncoderGateway & g, const StepRange & r) {
            return range_recall(g, projection, manifest, sets, r, run.workers);
        };
    } else if (metric == "oracle") {
        oracle = oracle_of(run);
        fn = [&](const EncoderGateway & g, const StepRange & r) {
            return selection_oracle_score(g, projection, manifest, r, *oracle, run.workers);
        };
    } else {
        throw config_error("range_grid metric must be \"recall\" or \"oracle\", got '" + metric + "'");
    }
    const auto grid = range_grid(baseline, checkpoints, eval_ranges, fn, metric);
    write_out(run, "range_grid.txt", range_grid_table(grid));
    write_plot(run, "range_grid", range_grid_plot(grid));
    std::cout << range_grid_table(grid);
}

}  // namespace

void cmd_eval(const RunConfig & run) {
    int ran = 0;
    for (const char * name : kReports) {
        if (!run.has(name)) continue;
        if (!run.at(name).is_object()) throw config_error(std::string("eval: '") + name + "' must be an object");
        const auto view = report_view(run, name);
        const std::string n = name;
        if (n == "consistency") eval_consistency(view);
        else if (n == "delta") eval_delta(view);
        else if (n == "bon_alignment") eval_bon_alignment(view);
        else eval_range_grid(view);
        ++ran;
    }
    if (ran == 0) throw config_error("eval: configure at least one of consistency, delta, bon_alignment, range_grid");
}

void cmd_plot(const RunConfig & run, const std::vector<fs::path> & extra) {
    std::vector<fs::path> inputs;
    if (run.has("inputs")) {
        for (const auto & p : run.at("inputs")) inputs.push_back(run.resolve(p.get<std::string>()));
    }
    inputs.insert(inputs.end(), extra.begin(), extra.end());
    if (inputs.empty()) throw config_error("plot: give plot specs with --input or \"inputs\"");

    std::vector<fs::path> specs;
    for (const auto & in : inputs) {
        if (fs::is_directory(in)) {
            std::vector<fs::path> found;
            for (const auto & e : fs::directory_iterator(in)) {
                const auto name = e.path().filename().string();
                if (name.size() > 10 && name.ends_with("_plot.json")) found.push_back(e.path());
            }
            std::sort(found.begin(), found.end());
            specs.insert(specs.end(), found.begin(), found.end());
        } else if (fs::exists(in)) {
            specs.push_back(in);
        } else {
            throw not_found_error("plot spec '" + in.string() + "' not found");
        }
    }
    for (const auto & spec : specs) {
        json j;
        try {
            j = json::parse(read_text_file(spec));
        } catch (const json::exception & e) {
            throw data_error("plot spec '" + spec.string() + "' is not valid JSON: " + e.what());
        }
        auto stem = spec.stem().string();
        if (stem.ends_with("_plot")) stem.resize(stem.size() - 5);
        write_out(run, stem + ".svg", render_svg(j));
        std::cout << "rendered " << (run.output_dir / (stem + ".svg")).string() << "\n";
    }
}

}  // namespace cli
