#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>

namespace strtf::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kIo = 3, kNumeric = 4 };

/// Flags shared by every subcommand; set flags override the config file.
struct CommonOptions {
  std::optional<std::filesystem::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  bool deterministic = false;
};

struct GenerateOptions {
  CommonOptions common;
};

struct TrainOptions {
  CommonOptions common;
  std::optional<std::filesystem::path> data_dir;  // defaults to the output dir
  std::optional<std::filesystem::path> resume;
  std::optional<int> iterations;
};

struct EvalOptions {
  CommonOptions common;
  std::optional<std::filesystem::path> checkpoint;  // defaults to <out>/<checkpoint>
  std::optional<std::filesystem::path> estimate;    // CSV used instead of a checkpoint
  std::optional<std::filesystem::path> data_dir;
  bool baseline = false;
};

struct PlotOptions {
  CommonOptions common;
  std::optional<std::filesystem::path> diagnostics;
  std::optional<std::filesystem::path> eval_dir;  // holds S_aligned.csv
  std::optional<std::filesystem::path> data_dir;  // holds X.csv
};

/// Every command logs failures and returns an ExitCode instead of throwing.

/// Writes Y.csv, X.csv and meta.json.
int cmd_generate(const GenerateOptions& opts, std::ostream& out);

/// Writes the checkpoint, diagnostics and S_hat.csv; prints the final losses.
int cmd_train(const TrainOptions& opts, std::ostream& out);

/// Writes match.json and S_aligned.csv.
int cmd_eval(const EvalOptions& opts, std::ostream& out);

/// Writes training, structure and sources figures as SVG plus CSV.
int cmd_plot(const PlotOptions& opts, std::ostream& out);

}  // namespace strtf::cli
