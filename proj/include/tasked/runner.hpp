#pragma once

// Config-driven experiment runner behind the command-line tool.

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "tasked/config.hpp"
#include "tasked/data.hpp"

namespace tasked::runner {

struct RunArgs {
  std::filesystem::path config;
  std::vector<std::string> overrides;
  std::optional<std::size_t> workers;
  std::optional<std::filesystem::path> out;
};

data::WindowedDataset build_dataset(const config::Experiment& e, data::Warnings* warnings = nullptr);

// Output directory: --out, then output_dir from the config, then
// $TASKED_OUTPUT_ROOT/<mode>, then runs/<mode>.
std::filesystem::path output_dir(const config::Experiment& e, const std::optional<std::filesystem::path>& out);

// Executes the configured mode. Returns 0 on success; on failure writes
// error.json into the output directory (when known) and returns nonzero.
int run(const RunArgs& args, std::ostream& log);

}  // namespace tasked::runner
