#include "strtf/trainer.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "strtf/eval.hpp"

namespace strtf {

std::string to_string(Scheduler s) { return s == Scheduler::constant ? "constant" : "cosine"; }

Scheduler scheduler_from_string(const std::string& name) {
  if (name == "constant") return Scheduler::constant;
  if (name == "cosine") return Scheduler::cosine;
  throw std::invalid_argument(
      fmt::format("unknown scheduler '{}' (expected constant or cosine)", name));
}

void TrainConfig::validate() const {
  if (sources < 1) throw std::invalid_argument("sources must be at least 1");
  if (max_iterations < 1) throw std::invalid_argument("max_iterations must be at least 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("learning_rate must be positive");
  }
  if (warmup_steps < 0) throw std::invalid_argument("warmup_steps must be nonnegative");
  if (clip_norm && !(*clip_norm > 0.0)) throw std::invalid_argument("clip_norm must be positive");
  if (diagnostics_every < 1) throw std::invalid_argument("diagnostics_every must be at least 1");
  if (!(stride_ratio > 0.0 && stride_ratio <= 1.0)) {
    throw std::invalid_argument("stride_ratio must lie in (0, 1]");
  }
  if (!(mask_ratio >= 0.0 && mask_ratio <= 1.0)) {
    throw std::invalid_argument("mask_ratio must lie in [0, 1]");
  }
  if (!(weights.nu_y > 0.0)) throw std::invalid_argument("nu_y must be positive");
  if (weights.difference_order != 1 && weights.difference_order != 2) {
    throw std::invalid_argument("difference_order must be 1 or 2");
  }
  if (!(init_source_std > 0.0)) throw std::invalid_argument("init_source_std must be positive");
}

double learning_rate_at(const TrainConfig& cfg, std::int64_t iteration) {
  const double base = cfg.learning_rate;
  if (iteration <= cfg.warmup_steps) {
    return base * static_cast<double>(iteration) / static_cast<double>(cfg.warmup_steps);
  }
  if (cfg.scheduler == Scheduler::constant) return base;
  const double span = std::max<std::int64_t>(1, cfg.max_iterations - cfg.warmup_steps);
  const double progress =
      std::min(1.0, static_cast<double>(iteration - cfg.warmup_steps - 1) / span);
  return 0.5 * base * (1.0 + std::cos(std::numbers::pi * progress));
}

std::vector<ad::Parameter*> TrainingState::parameters() {
  std::vector<ad::Parameter*> out;
  out.push_back(&sources);
  mixer.for_each_parameter([&](ad::Parameter& p) { out.push_back(&p); });
  for (auto& b : branches) b.for_each_parameter([&](ad::Parameter& p) { out.push_back(&p); });
  out.push_back(&controller.raw_gaps);
  return out;
}

std::vector<int> usable_patch_sizes(std::span<const int> sizes, Index length) {
  std::vector<int> out;
  for (int p : sizes) {
    if (p < 1) throw std::invalid_argument(fmt::format("patch size {} is not positive", p));
    if (p <= length) out.push_back(p);
  }
  return out;
}

TrainingState init_state(Index length, Index channels, const TrainConfig& cfg) {
  cfg.validate();
  if (channels < 1) throw std::invalid_argument("observations need at least one channel");
  TrainingState st;
  st.patch_sizes = usable_patch_sizes(cfg.patch_sizes, length);
  if (st.patch_sizes.empty()) {
    throw DegenerateScaleError(
        fmt::format("every patch size exceeds the sequence length T = {}", length));
  }
  // Validates distinctness and the a_min < a_max requirement up front.
  log_scales(st.patch_sizes);
  for (int p : st.patch_sizes) st.specs.push_back(PatchSpec::from_ratio(p, cfg.stride_ratio));

  st.rng = Rng(cfg.seed);
  st.sources = ad::Parameter("sources", st.rng.normal_matrix(length, cfg.sources, cfg.init_source_std));
  st.mixer = make_mixer(cfg.sources, static_cast<int>(channels), cfg.mixer, st.rng);
  for (int k = 0; k < cfg.sources; ++k) {
    for (int p : st.patch_sizes) st.branches.push_back(make_branch(k, p, cfg.arch, st.rng));
  }
  st.controller = ControllerParams(cfg.sources, cfg.controller);
  return st;
}

TrainingState init_state(const Matrix& observed, const TrainConfig& cfg) {
  if (!observed.allFinite()) throw NumericError("observations contain non-finite values");
  return init_state(observed.rows(), observed.cols(), cfg);
}

TrainingAborted::TrainingAborted(std::int64_t iter, const std::string& what)
    : NumericError(fmt::format("training aborted at iteration {}: {}", iter, what)),
      iteration(iter) {}

void attach_metrics(DiagnosticsRecord& record, const Matrix& sources, const Matrix& references) {
  const MatchResult m = match_sources(sources, references);
  record.mac = m.mac;
  record.branch_corr.clear();
  record.matched_index = m.permutation;
  for (std::size_t k = 0; k < m.permutation.size(); ++k) {
    record.branch_corr.push_back(m.correlation(static_cast<Index>(k), m.permutation[k]));
  }
}

namespace {

std::vector<double> column_values(const ad::Tensor& t) {
  const Matrix& v = t.value();
  return {v.data(), v.data() + v.size()};
}

}  // namespace

StepResult train_step(TrainingState& state, const TrainConfig& cfg, const Matrix& observed,
                      const Matrix* references, bool with_metrics) {
  const std::int64_t iter = state.iteration + 1;
  std::vector<ad::Parameter*> params = state.parameters();
  for (ad::Parameter* p : params) p->zero_grad();

  ad::Graph graph;
  const ObjectiveInputs in{observed,        state.sources, state.mixer, state.branches,
                           state.specs,     state.controller, cfg.weights};
  ObjectiveTerms terms;
  try {
    terms = total_objective(graph, in, cfg.mask_ratio, state.rng);
  } catch (const NumericError& e) {
    throw TrainingAborted(iter, e.what());
  }

  StepResult out;
  DiagnosticsRecord& rec = out.record;
  rec.iteration = iter;
  rec.loss = terms.breakdown();
  for (const ad::Tensor& t : terms.structural.per_source) rec.branch_str.push_back(t.scalar());
  rec.expected_scale = column_values(terms.controller.expected_scale);
  rec.center = column_values(terms.controller.centers);
  rec.alpha = column_values(terms.controller.alpha);
  if (references != nullptr && with_metrics) attach_metrics(rec, state.sources.value, *references);

  graph.backward(terms.total);
  out.grad_norm = cfg.clip_norm ? clip_grad_norm(params, *cfg.clip_norm) : global_grad_norm(params);
  out.applied_grad_norm = global_grad_norm(params);
  out.learning_rate = learning_rate_at(cfg, iter);
  try {
    adam_step(params, state.adam, out.learning_rate);
  } catch (const NumericError& e) {
    throw TrainingAborted(iter, e.what());
  }
  state.iteration = iter;
  return out;
}

TrainResult train(const Matrix& observed, const TrainConfig& cfg, const Matrix* references,
                  const RecordSink& sink, std::optional<TrainingState> resume) {
  cfg.validate();
  if (references != nullptr && references->rows() != observed.rows()) {
    throw ShapeError(fmt::format("references have {} rows but observations have {}",
                                 references->rows(), observed.rows()));
  }
  TrainResult result{resume ? std::move(*resume) : init_state(observed, cfg), {}};
  TrainingState& st = result.state;
  if (st.sources.value.rows() != observed.rows()) {
    throw ShapeError("resumed state does not match the observation length");
  }
  while (st.iteration < cfg.max_iterations) {
    const std::int64_t next = st.iteration + 1;
    const bool logged =
        next == 1 || next % cfg.diagnostics_every == 0 || next == cfg.max_iterations;
    StepResult step = train_step(st, cfg, observed, references, logged);
    if (!logged) continue;
    if (sink) sink(step.record);
    result.log.push_back(std::move(step.record));
  }
  return result;
}

}  // namespace strtf
