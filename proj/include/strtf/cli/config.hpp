#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include "strtf/datagen.hpp"
#include "strtf/trainer.hpp"

namespace strtf::cli {

/// Invalid or unknown configuration; maps to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct OutputConfig {
  std::string dir = "out";
  std::string checkpoint = "checkpoint.strt";
  std::string diagnostics = "diagnostics.jsonl";
};

/// Parsed run file. [data] starts from the case-study preset unless
/// `preset = "none"`.
struct RunConfig {
  SyntheticSpec data = case_study_preset(0);
  TrainConfig train;
  OutputConfig output;
};

/// Parses TOML with sections [data], [model], [objective], [controller],
/// [train], [output]. Unknown sections or keys are errors. `origin` labels
/// messages.
RunConfig parse_run_config(std::string_view toml_text, std::string_view origin = "config");
RunConfig load_run_config(const std::filesystem::path& path);

/// Sets both the data and the training seed.
void apply_seed(RunConfig& cfg, std::uint64_t seed);

}  // namespace strtf::cli
