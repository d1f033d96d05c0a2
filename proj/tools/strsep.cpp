// strsep: generate, train, eval and plot from the command line.

#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "strtf/cli/commands.hpp"

namespace {

using namespace strtf::cli;

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("strsep");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  const char* env = std::getenv("STRSEP_LOG");
  const std::string level = env != nullptr ? env : "info";
  if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    spdlog::set_level(spdlog::level::info);
    if (level != "info") spdlog::warn("STRSEP_LOG='{}' not recognized; using info", level);
  }
}

void add_common(CLI::App* app, CommonOptions& c) {
  app->add_option("--config", c.config, "TOML run file")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "Seed for data generation and training");
  app->add_option("--out", c.out, "Output directory (overrides output.dir)");
  app->add_flag("--deterministic", c.deterministic, "Force deterministic mode");
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();

  CLI::App app{"Structure-regularized blind source separation"};
  app.require_subcommand(1);

  GenerateOptions gen;
  CLI::App* generate = app.add_subcommand("generate", "Write a synthetic dataset (Y.csv, X.csv, meta.json)");
  add_common(generate, gen.common);

  TrainOptions tr;
  CLI::App* train = app.add_subcommand("train", "Fit sources to Y.csv");
  add_common(train, tr.common);
  train->add_option("--data", tr.data_dir, "Directory with Y.csv and optional X.csv");
  train->add_option("--resume", tr.resume, "Checkpoint to continue from")->check(CLI::ExistingFile);
  train->add_option("--iterations", tr.iterations, "Override train.max_iterations")
      ->check(CLI::PositiveNumber);

  EvalOptions ev;
  CLI::App* eval = app.add_subcommand("eval", "Match estimated sources to X.csv");
  add_common(eval, ev.common);
  auto* ck = eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint holding the estimate");
  eval->add_option("--estimate", ev.estimate, "CSV estimate used instead of a checkpoint")
      ->excludes(ck);
  eval->add_option("--data", ev.data_dir, "Directory with X.csv (and Y.csv for --baseline)");
  eval->add_flag("--baseline", ev.baseline, "Also run the joint-diagonalization baseline");

  PlotOptions pl;
  CLI::App* plot = app.add_subcommand("plot", "Render figures from diagnostics and eval outputs");
  add_common(plot, pl.common);
  plot->add_option("--diagnostics", pl.diagnostics, "Diagnostics JSON-lines file");
  plot->add_option("--eval", pl.eval_dir, "Directory with S_aligned.csv");
  plot->add_option("--data", pl.data_dir, "Directory with X.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  if (generate->parsed()) return cmd_generate(gen, std::cout);
  if (train->parsed()) return cmd_train(tr, std::cout);
  if (eval->parsed()) return cmd_eval(ev, std::cout);
  return cmd_plot(pl, std::cout);
}
