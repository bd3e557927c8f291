#pragma once

#include <filesystem>
#include <vector>

#include "run_config.hpp"

namespace cli {

void cmd_build_dataset(const RunConfig & run);
void cmd_corrupt(const RunConfig & run);
void cmd_train(const RunConfig & run);
void cmd_score(const RunConfig & run);
void cmd_bon(const RunConfig & run);
void cmd_eval(const RunConfig & run);
// Extra spec files or directories given on the command line are rendered alongside config "inputs".
void cmd_plot(const RunConfig & run, const std::vector<std::filesystem::path> & inputs);

}  // namespace cli
