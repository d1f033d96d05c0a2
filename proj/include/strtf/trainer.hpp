#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "strtf/controller.hpp"
#include "strtf/diagnostics.hpp"
#include "strtf/numerics/adam.hpp"
#include "strtf/numerics/rng.hpp"
#include "strtf/objective.hpp"
#include "strtf/patching.hpp"
#include "strtf/strformer.hpp"

namespace strtf {

enum class Scheduler { constant, cosine };

std::string to_string(Scheduler s);
Scheduler scheduler_from_string(const std::string& name);

struct TrainConfig {
  int sources = 3;
  std::vector<int> patch_sizes{4, 8, 16, 32};
  double stride_ratio = 0.5;
  double mask_ratio = 0.3;
  ArchitectureConfig arch;
  MixerConfig mixer;
  ObjectiveWeights weights;
  ControllerConfig controller;

  int max_iterations = 3000;
  double learning_rate = 3e-3;
  Scheduler scheduler = Scheduler::cosine;
  int warmup_steps = 50;
  std::optional<double> clip_norm = 5.0;
  std::uint64_t seed = 0;
  bool deterministic = true;
  int diagnostics_every = 1;
  double init_source_std = 0.1;

  void validate() const;
};

/// Learning rate used for 1-based step `iteration`: linear warmup, then either
/// constant or cosine decay that reaches zero one step past max_iterations.
double learning_rate_at(const TrainConfig& cfg, std::int64_t iteration);

/// Everything optimized, plus optimizer and sampler state.
struct TrainingState {
  std::int64_t iteration = 0;
  std::vector<int> patch_sizes;  // scales usable for this T
  std::vector<PatchSpec> specs;
  ad::Parameter sources;         // T x K
  Mixer mixer;
  std::vector<BranchParams> branches;  // source-major, k * R + r
  ControllerParams controller;
  AdamState adam;
  Rng rng;

  /// Fixed order: S, mixer, branches, controller.
  std::vector<ad::Parameter*> parameters();
};

/// Patch sizes no longer than `length`, in the given order.
std::vector<int> usable_patch_sizes(std::span<const int> sizes, Index length);

TrainingState init_state(Index length, Index channels, const TrainConfig& cfg);
TrainingState init_state(const Matrix& observed, const TrainConfig& cfg);

struct StepResult {
  DiagnosticsRecord record;
  double grad_norm = 0.0;          // before clipping
  double applied_grad_norm = 0.0;  // after clipping
  double learning_rate = 0.0;
};

/// Raised when a forward pass produces a non-finite value.
class TrainingAborted : public NumericError {
 public:
  TrainingAborted(std::int64_t iteration, const std::string& what);
  std::int64_t iteration;
};

/// One optimization step. `references` feed diagnostics only.
StepResult train_step(TrainingState& state, const TrainConfig& cfg, const Matrix& observed,
                      const Matrix* references = nullptr, bool with_metrics = true);

/// Fills the reference-dependent fields of `record` from the current sources.
void attach_metrics(DiagnosticsRecord& record, const Matrix& sources, const Matrix& references);

struct TrainResult {
  TrainingState state;
  DiagnosticsLog log;
};

using RecordSink = std::function<void(const DiagnosticsRecord&)>;

/// Runs steps until state.iteration reaches cfg.max_iterations. Records are
/// logged at step 1, every diagnostics_every steps and at the final step; each
/// is passed to `sink` as soon as it is produced.
TrainResult train(const Matrix& observed, const TrainConfig& cfg,
                  const Matrix* references = nullptr, const RecordSink& sink = {},
                  std::optional<TrainingState> resume = std::nullopt);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  TrainConfig config;
  TrainingState state;
};

void save_checkpoint(const TrainingState& state, const TrainConfig& cfg,
                     const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string config_to_json(const TrainConfig& cfg);
TrainConfig config_from_json(const std::string& text);

}  // namespace strtf
