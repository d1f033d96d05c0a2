#include "strtf/cli/commands.hpp"

#include <fstream>
#include <ostream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "strtf/cli/config.hpp"
#include "strtf/cli/figure.hpp"
#include "strtf/datagen.hpp"
#include "strtf/eval.hpp"
#include "strtf/io.hpp"
#include "strtf/trainer.hpp"

namespace strtf::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

/// Usage-level failure detected by a command itself.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename Fn>
int guarded(const char* command, Fn&& fn) {
  try {
    return fn();
  } catch (const UsageError& e) {
    spdlog::error("{}: {}", command, e.what());
    return kUsage;
  } catch (const ConfigError& e) {
    spdlog::error("{}: {}", command, e.what());
    return kUsage;
  } catch (const CsvError& e) {
    spdlog::error("{}: {}", command, e.what());
    return kIo;
  } catch (const CheckpointError& e) {
    spdlog::error("{}: {}", command, e.what());
    return kIo;
  } catch (const std::ios_base::failure& e) {
    spdlog::error("{}: {}", command, e.what());
    return kIo;
  } catch (const fs::filesystem_error& e) {
    spdlog::error("{}: {}", command, e.what());
    return kIo;
  } catch (const TrainingAborted& e) {
    spdlog::error("{}: {}", command, e.what());
    return kNumeric;
  } catch (const NumericError& e) {
    spdlog::error("{}: {}", command, e.what());
    return kNumeric;
  } catch (const std::invalid_argument& e) {
    spdlog::error("{}: {}", command, e.what());
    return kUsage;
  }
}

RunConfig resolve_config(const CommonOptions& common) {
  RunConfig cfg = common.config ? load_run_config(*common.config) : RunConfig{};
  if (common.seed) apply_seed(cfg, *common.seed);
  if (common.deterministic) cfg.train.deterministic = true;
  if (common.out) cfg.output.dir = common.out->string();
  return cfg;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw std::ios_base::failure(fmt::format("cannot create directory '{}'", dir.string()));
  }
}

ordered_json matrix_json(const Matrix& m) {
  ordered_json rows = ordered_json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    ordered_json row = ordered_json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

ordered_json match_json(const MatchResult& m) {
  ordered_json j;
  j["mac"] = m.mac;
  j["permutation"] = m.permutation;
  j["signs"] = m.signs;
  j["correlation"] = matrix_json(m.correlation);
  return j;
}

std::optional<Matrix> read_optional_csv(const fs::path& path) {
  if (!fs::exists(path)) return std::nullopt;
  return read_matrix_csv(path);
}

void print_losses(std::ostream& out, std::int64_t iteration, const LossBreakdown& l) {
  out << fmt::format("iteration {}\n", iteration);
  out << fmt::format("loss total  {:.6e}\n", l.total);
  out << fmt::format("loss rec    {:.6e}\n", l.rec);
  out << fmt::format("loss str    {:.6e}\n", l.str);
  out << fmt::format("loss sep    {:.6e}\n", l.sep);
  out << fmt::format("loss smooth {:.6e}\n", l.smooth);
  out << fmt::format("loss ent    {:.6e}\n", l.ent);
  out << fmt::format("loss gap    {:.6e}\n", l.gap);
}

int generate_impl(const GenerateOptions& opts, std::ostream& out) {
  const RunConfig cfg = resolve_config(opts.common);
  const fs::path dir = cfg.output.dir;
  spdlog::info("generating T={} K={} m={} seed={}", cfg.data.length, cfg.data.sources(),
               cfg.data.channels, cfg.data.seed);
  const Dataset data = generate_dataset(cfg.data);
  ensure_dir(dir);
  write_matrix_csv(data.observed, dir / "Y.csv");
  write_matrix_csv(data.references, dir / "X.csv");
  ordered_json meta;
  meta["spec"] = ordered_json::parse(spec_to_json(cfg.data));
  meta["mixing"] = matrix_json(data.mixing);
  write_text_file(dir / "meta.json", meta.dump(2) + "\n");
  out << fmt::format("wrote {} ({} x {}), X.csv, meta.json\n", (dir / "Y.csv").string(),
                     data.observed.rows(), data.observed.cols());
  return kOk;
}

int train_impl(const TrainOptions& opts, std::ostream& out) {
  RunConfig run = resolve_config(opts.common);
  const fs::path dir = run.output.dir;
  const fs::path data_dir = opts.data_dir.value_or(dir);

  const Matrix observed = read_matrix_csv(data_dir / "Y.csv");
  const std::optional<Matrix> references = read_optional_csv(data_dir / "X.csv");

  std::optional<TrainingState> resume;
  TrainConfig cfg = run.train;
  if (opts.resume) {
    Checkpoint ck = load_checkpoint(*opts.resume);
    // The checkpoint fixes the model; only the horizon may change.
    const int horizon = ck.config.max_iterations;
    cfg = ck.config;
    cfg.max_iterations = opts.common.config ? run.train.max_iterations : horizon;
    if (opts.common.deterministic) cfg.deterministic = true;
    resume = std::move(ck.state);
    spdlog::info("resuming from '{}' at iteration {}", opts.resume->string(), resume->iteration);
  }
  if (opts.iterations) cfg.max_iterations = *opts.iterations;
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (references) {
    if (references->rows() != observed.rows()) {
      throw UsageError(fmt::format("X.csv has {} rows but Y.csv has {}", references->rows(),
                                   observed.rows()));
    }
    if (references->cols() != cfg.sources) {
      throw UsageError(fmt::format("X.csv has {} columns but the model has {} sources",
                                   references->cols(), cfg.sources));
    }
  }
  if (resume && resume->sources.value.rows() != observed.rows()) {
    throw UsageError("checkpoint length does not match Y.csv");
  }
  if (resume && resume->iteration >= cfg.max_iterations) {
    throw UsageError(fmt::format("checkpoint is at iteration {}, nothing to do for max_iterations {}",
                                 resume->iteration, cfg.max_iterations));
  }

  ensure_dir(dir);
  const fs::path diag_path = dir / run.output.diagnostics;
  std::ofstream diag(diag_path, std::ios::binary | (resume ? std::ios::app : std::ios::trunc));
  if (!diag) {
    throw std::ios_base::failure(fmt::format("cannot open '{}' for writing", diag_path.string()));
  }
  const RecordSink sink = [&](const DiagnosticsRecord& r) {
    append_diagnostics(r, diag);
    if (!diag) throw std::ios_base::failure(fmt::format("failed writing '{}'", diag_path.string()));
    spdlog::debug("iter {} total {:.4e} rec {:.4e} str {:.4e} sep {:.4e}", r.iteration,
                  r.loss.total, r.loss.rec, r.loss.str, r.loss.sep);
  };

  spdlog::info("training T={} m={} K={} for {} iterations", observed.rows(), observed.cols(),
               cfg.sources, cfg.max_iterations);
  TrainResult result =
      train(observed, cfg, references ? &*references : nullptr, sink, std::move(resume));

  save_checkpoint(result.state, cfg, dir / run.output.checkpoint);
  write_matrix_csv(result.state.sources.value, dir / "S_hat.csv");

  if (result.log.empty()) return kOk;
  const DiagnosticsRecord& last = result.log.back();
  print_losses(out, last.iteration, last.loss);
  if (last.mac) out << fmt::format("mac         {:.6f}\n", *last.mac);
  return kOk;
}

int eval_impl(const EvalOptions& opts, std::ostream& out) {
  const RunConfig run = resolve_config(opts.common);
  const fs::path dir = run.output.dir;
  const fs::path data_dir = opts.data_dir.value_or(dir);

  const fs::path x_path = data_dir / "X.csv";
  if (!fs::exists(x_path)) {
    throw UsageError(fmt::format("eval needs reference sources; '{}' not found", x_path.string()));
  }
  const Matrix references = read_matrix_csv(x_path);

  Matrix estimate;
  if (opts.estimate) {
    estimate = read_matrix_csv(*opts.estimate);
  } else {
    estimate = load_checkpoint(opts.checkpoint.value_or(dir / run.output.checkpoint))
                   .state.sources.value;
  }
  const Index k = estimate.cols();
  if (k > 8) {
    throw UsageError(fmt::format(
        "exhaustive matching supports at most 8 sources, got {}; 8! permutations is the limit", k));
  }
  if (references.cols() != k) {
    throw UsageError(fmt::format("estimate has {} sources but X.csv has {}", k, references.cols()));
  }
  if (references.rows() != estimate.rows()) {
    throw UsageError(fmt::format("estimate has {} rows but X.csv has {}", estimate.rows(),
                                 references.rows()));
  }

  const MatchResult match = match_sources(estimate, references);
  ordered_json report = match_json(match);

  if (opts.baseline) {
    const Matrix observed = read_matrix_csv(data_dir / "Y.csv");
    const BaselineResult base = joint_diag_baseline(observed, kDefaultLags, static_cast<int>(k));
    const MatchResult bm = match_sources(base.sources, references);
    ordered_json b = match_json(bm);
    b["identifiable"] = base.identifiable;
    b["sweeps"] = base.sweeps;
    b["off_diagonality"] = base.off_diagonality;
    report["baseline"] = std::move(b);
    out << fmt::format("baseline mac {:.6f}\n", bm.mac);
  }

  ensure_dir(dir);
  write_text_file(dir / "match.json", report.dump(2) + "\n");
  write_matrix_csv(align_and_normalize(estimate, references, match), dir / "S_aligned.csv");
  out << fmt::format("mac {:.6f}\n", match.mac);
  return kOk;
}

std::vector<double> iterations_of(const DiagnosticsLog& log) {
  std::vector<double> x;
  x.reserve(log.size());
  for (const auto& r : log) x.push_back(static_cast<double>(r.iteration));
  return x;
}

template <typename Get>
Series series_of(const DiagnosticsLog& log, std::string name, Get get) {
  Series s{std::move(name), iterations_of(log), {}};
  s.y.reserve(log.size());
  for (const auto& r : log) s.y.push_back(get(r));
  return s;
}

/// One series per source, read from a per-source vector field.
Panel per_source_panel(const DiagnosticsLog& log, std::string title, std::string y_label,
                       std::vector<double> DiagnosticsRecord::*field) {
  Panel p{std::move(title), "iteration", std::move(y_label), false, {}};
  const std::size_t k = (log.front().*field).size();
  for (std::size_t i = 0; i < k; ++i) {
    p.series.push_back(series_of(log, fmt::format("source {}", i + 1), [&](const auto& r) {
      const auto& v = r.*field;
      return i < v.size() ? v[i] : std::numeric_limits<double>::quiet_NaN();
    }));
  }
  return p;
}

Figure training_figure(const DiagnosticsLog& log) {
  Figure f{"Training diagnostics", {}};
  Panel losses{"Loss terms", "iteration", "loss", true, {}};
  losses.series.push_back(series_of(log, "total", [](const auto& r) { return r.loss.total; }));
  losses.series.push_back(series_of(log, "rec", [](const auto& r) { return r.loss.rec; }));
  losses.series.push_back(series_of(log, "str", [](const auto& r) { return r.loss.str; }));
  losses.series.push_back(series_of(log, "sep", [](const auto& r) { return r.loss.sep; }));
  losses.series.push_back(series_of(log, "smooth", [](const auto& r) { return r.loss.smooth; }));
  losses.series.push_back(series_of(log, "ent", [](const auto& r) { return r.loss.ent; }));
  losses.series.push_back(series_of(log, "gap", [](const auto& r) { return r.loss.gap; }));
  f.panels.push_back(std::move(losses));
  f.panels.push_back(
      per_source_panel(log, "Branch structural loss", "L_str", &DiagnosticsRecord::branch_str));
  if (log.front().mac) {
    Panel corr{"Matched correlation", "iteration", "|corr|", false, {}};
    corr.series.push_back(series_of(log, "MAC", [](const auto& r) {
      return r.mac.value_or(std::numeric_limits<double>::quiet_NaN());
    }));
    Panel branch = per_source_panel(log, "", "", &DiagnosticsRecord::branch_corr);
    for (auto& s : branch.series) corr.series.push_back(std::move(s));
    f.panels.push_back(std::move(corr));
  }
  return f;
}

Figure structure_figure(const DiagnosticsLog& log) {
  Figure f{"Structural parameters", {}};
  f.panels.push_back(per_source_panel(log, "Expected patch scale", "patch size",
                                      &DiagnosticsRecord::expected_scale));
  f.panels.push_back(
      per_source_panel(log, "Ordered centers", "center", &DiagnosticsRecord::center));
  f.panels.push_back(per_source_panel(log, "Locality slopes", "alpha", &DiagnosticsRecord::alpha));
  if (log.front().mac) {
    Panel idx{"Matched reference index", "iteration", "reference", false, {}};
    const std::size_t k = log.front().matched_index.size();
    for (std::size_t i = 0; i < k; ++i) {
      idx.series.push_back(series_of(log, fmt::format("source {}", i + 1), [&](const auto& r) {
        return i < r.matched_index.size() ? static_cast<double>(r.matched_index[i] + 1)
                                          : std::numeric_limits<double>::quiet_NaN();
      }));
    }
    f.panels.push_back(std::move(idx));
  }
  return f;
}

Figure sources_figure(const Matrix& aligned, const Matrix& references) {
  Figure f{"Aligned sources (z-scored)", {}};
  const Matrix ref = zscore_columns(references);
  std::vector<double> t(static_cast<std::size_t>(aligned.rows()));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
  for (Index k = 0; k < aligned.cols(); ++k) {
    Panel p{fmt::format("Source {}", k + 1), "t", "z-score", false, {}};
    p.series.push_back(Series{"reference", t, std::vector<double>(ref.col(k).begin(), ref.col(k).end())});
    p.series.push_back(
        Series{"estimate", t, std::vector<double>(aligned.col(k).begin(), aligned.col(k).end())});
    f.panels.push_back(std::move(p));
  }
  return f;
}

void write_figure(const Figure& f, const fs::path& dir, const std::string& stem) {
  write_text_file(dir / (stem + ".svg"), render_svg(f));
  write_text_file(dir / (stem + ".csv"), figure_csv(f));
}

int plot_impl(const PlotOptions& opts, std::ostream& out) {
  const RunConfig run = resolve_config(opts.common);
  const fs::path dir = run.output.dir;
  const fs::path diag_path = opts.diagnostics.value_or(dir / run.output.diagnostics);
  const DiagnosticsReadResult read = read_diagnostics(diag_path);
  if (read.skipped > 0) spdlog::warn("skipped {} malformed diagnostics lines", read.skipped);
  if (read.log.empty()) throw UsageError(fmt::format("'{}' has no records", diag_path.string()));

  ensure_dir(dir);
  write_figure(training_figure(read.log), dir, "training");
  write_figure(structure_figure(read.log), dir, "structure");
  int written = 2;

  const fs::path aligned_path = opts.eval_dir.value_or(dir) / "S_aligned.csv";
  const fs::path x_path = opts.data_dir.value_or(dir) / "X.csv";
  if (fs::exists(aligned_path) && fs::exists(x_path)) {
    const Matrix aligned = read_matrix_csv(aligned_path);
    const Matrix references = read_matrix_csv(x_path);
    if (aligned.rows() != references.rows() || aligned.cols() != references.cols()) {
      throw UsageError("S_aligned.csv and X.csv have different shapes");
    }
    write_figure(sources_figure(aligned, references), dir, "sources");
    ++written;
  } else {
    spdlog::info("no eval outputs found; skipping the sources figure");
  }
  out << fmt::format("wrote {} figures to {}\n", written, dir.string());
  return kOk;
}

}  // namespace

int cmd_generate(const GenerateOptions& opts, std::ostream& out) {
  return guarded("generate", [&] { return generate_impl(opts, out); });
}

int cmd_train(const TrainOptions& opts, std::ostream& out) {
  return guarded("train", [&] { return train_impl(opts, out); });
}

int cmd_eval(const EvalOptions& opts, std::ostream& out) {
  return guarded("eval", [&] { return eval_impl(opts, out); });
}

int cmd_plot(const PlotOptions& opts, std::ostream& out) {
  return guarded("plot", [&] { return plot_impl(opts, out); });
}

}  // namespace strtf::cli
