#include <iostream>

#include "CLI11.hpp"
#include "tasked/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Cross-subject activity recognition experiments"};
  app.require_subcommand(1);
  CLI::App* run = app.add_subcommand("run", "Execute the mode selected in a config file");

  tasked::runner::RunArgs args;
  std::string config, out;
  std::size_t workers = 0;
  run->add_option("config_file,--config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--override", args.overrides, "Dotted key=value override, repeatable");
  run->add_option("--workers", workers, "Folds trained concurrently");
  run->add_option("--out", out, "Output directory");

  CLI11_PARSE(app, argc, argv);
  args.config = config;
  if (workers) args.workers = workers;
  if (!out.empty()) args.out = out;
  return tasked::runner::run(args, std::cout);
}
