// latent-align: command-line entry point. Every subcommand reads a JSON config (--config),
// applies --set overrides and global flags, writes resolved_config.json into the output
// directory, then runs.
//
// Exit codes: 0 success, 2 config/argument error, 3 data error, 4 backend/transport error.

#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "latent_align/error.hpp"

int main(int argc, char ** argv) {
    CLI::App app{"Latent-space alignment scoring, training and best-of-n toolkit"};
    app.require_subcommand(1);

    cli::GlobalFlags flags;
    std::string config, output_dir;
    int64_t seed = 0;
    int workers = 1;
    auto * config_opt = app.add_option("--config", config, "JSON config file for the subcommand");
    auto * seed_opt = app.add_option("--seed", seed, "seed for every random choice in the run");
    auto * workers_opt = app.add_option("--workers", workers, "parallel workers")->check(CLI::PositiveNumber);
    auto * out_opt = app.add_option("--output-dir", output_dir, "where outputs and resolved_config.json go");
    app.add_option("--set", flags.overrides, "override a config value: dotted.key=value (JSON or plain string)");
    for (auto * o : {config_opt, seed_opt, workers_opt, out_opt}) o->configurable(false);
    app.fallthrough();

    std::vector<std::filesystem::path> plot_inputs;
    struct Sub {
        const char * name;
        const char * help;
    };
    const Sub subs[] = {
        {"build-dataset", "generate trajectories with the configured backend and write a dataset"},
        {"corrupt", "build factual sets (one corruption per error type) with the configured LLM"},
        {"train", "fine-tune the image tower on noisy latent previews"},
        {"score", "score stored latents and final images against their prompts"},
        {"bon", "best-of-n with early stopping; a \"plans\" list runs a cost sweep"},
        {"eval", "consistency, delta, best-of-n alignment and range-grid reports"},
        {"plot", "render plot spec files to SVG"},
    };
    for (const auto & s : subs) {
        auto * sub = app.add_subcommand(s.name, s.help);
        if (std::string(s.name) == "plot") sub->add_option("--input", plot_inputs, "plot spec file or directory");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError & e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (!config.empty()) flags.config = config;
    if (seed_opt->count()) flags.seed = seed;
    if (workers_opt->count()) flags.workers = workers;
    if (!output_dir.empty()) flags.output_dir = output_dir;

    const std::string name = app.get_subcommands().front()->get_name();
    try {
        const auto run = cli::resolve_run_config(name, flags);
        cli::write_resolved_config(run);
        if (name == "build-dataset") cli::cmd_build_dataset(run);
        else if (name == "corrupt") cli::cmd_corrupt(run);
        else if (name == "train") cli::cmd_train(run);
        else if (name == "score") cli::cmd_score(run);
        else if (name == "bon") cli::cmd_bon(run);
        else if (name == "eval") cli::cmd_eval(run);
        else cli::cmd_plot(run, plot_inputs);
    } catch (const latent_align::Error & e) {
        std::cerr << "error: " << e.what() << "\n";
        return latent_align::exit_code_for(e.kind());
    } catch (const nlohmann::json::exception & e) {
        std::cerr << "error: invalid config value: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
