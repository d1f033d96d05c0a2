#include "strtf/datagen.hpp"

#include <cmath>
#include <numbers>
#include <set>
#include <string>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "strtf/eval.hpp"

namespace strtf {

std::string to_string(RecipeKind kind) {
  switch (kind) {
    case RecipeKind::sine: return "sine";
    case RecipeKind::chirp: return "chirp";
    case RecipeKind::smoothed_noise: return "smoothed-noise";
  }
  return "sine";
}

RecipeKind recipe_kind_from_string(const std::string& name) {
  if (name == "sine") return RecipeKind::sine;
  if (name == "chirp") return RecipeKind::chirp;
  if (name == "smoothed-noise") return RecipeKind::smoothed_noise;
  throw std::invalid_argument(
      fmt::format("unknown recipe kind '{}' (expected sine, chirp or smoothed-noise)", name));
}

std::string to_string(MixingKind kind) { return kind == MixingKind::linear ? "linear" : "nonlinear"; }

MixingKind mixing_kind_from_string(const std::string& name) {
  if (name == "linear") return MixingKind::linear;
  if (name == "nonlinear") return MixingKind::nonlinear;
  throw std::invalid_argument(
      fmt::format("unknown mixing kind '{}' (expected linear or nonlinear)", name));
}

void SyntheticSpec::validate() const {
  if (length < 2) throw std::invalid_argument("length must be at least 2");
  if (recipes.empty()) throw std::invalid_argument("at least one source recipe is required");
  if (channels < sources()) {
    throw std::invalid_argument(
        fmt::format("{} channels cannot carry {} sources", channels, sources()));
  }
  if (!(noise_std >= 0.0)) throw std::invalid_argument("noise_std must be nonnegative");
  for (std::size_t k = 0; k < recipes.size(); ++k) {
    const SourceRecipe& r = recipes[k];
    if (!(r.period > 0.0)) throw std::invalid_argument(fmt::format("recipe {}: period must be positive", k));
    if (r.kind == RecipeKind::chirp && !(r.end_period > 0.0)) {
      throw std::invalid_argument(fmt::format("recipe {}: chirp needs a positive end_period", k));
    }
    if (!(r.perturbation >= 0.0) || !(r.smoothing >= 0.0) || !(r.harmonic >= 0.0)) {
      throw std::invalid_argument(
          fmt::format("recipe {}: harmonic, perturbation and smoothing must be nonnegative", k));
    }
  }
  if (mixing_matrix.size() != 0 &&
      (mixing_matrix.rows() != channels || mixing_matrix.cols() != sources())) {
    throw std::invalid_argument(fmt::format("mixing matrix must be {} x {}", channels, sources()));
  }
}

SyntheticSpec case_study_preset(std::uint64_t seed) {
  SyntheticSpec spec;
  spec.length = 1000;
  spec.channels = 3;
  spec.noise_std = 0.01;
  spec.seed = seed;
  spec.min_signature_gap = 0.05;
  for (double period : {16.0, 64.0, 256.0}) {
    SourceRecipe r;
    r.period = period;
    r.harmonic = 0.3;
    r.perturbation = 0.05;
    spec.recipes.push_back(r);
  }
  return spec;
}

namespace {

Vector standardize(Vector v) {
  v.array() -= v.mean();
  const double sd = std::sqrt(v.squaredNorm() / static_cast<double>(v.size()));
  if (!(sd > 0.0)) throw NumericError("generated source is constant");
  return v / sd;
}

Vector smoothed_noise(Index length, double width, Rng& rng) {
  const int half = std::max(1, static_cast<int>(std::ceil(4.0 * width)));
  Vector kernel(2 * half + 1);
  for (int i = -half; i <= half; ++i) {
    kernel(i + half) = std::exp(-0.5 * (i / width) * (i / width));
  }
  const Vector white = rng.normal_matrix(length + 2 * half, 1, 1.0).col(0);
  Vector out(length);
  for (Index t = 0; t < length; ++t) out(t) = white.segment(t, kernel.size()).dot(kernel);
  return standardize(out);
}

}  // namespace

Matrix generate_sources(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const Index t_len = spec.length;
  Matrix x(t_len, spec.sources());
  const double two_pi = 2.0 * std::numbers::pi;
  for (int k = 0; k < spec.sources(); ++k) {
    const SourceRecipe& r = spec.recipes[static_cast<std::size_t>(k)];
    const double phase1 = two_pi * rng.uniform();
    const double phase2 = two_pi * rng.uniform();
    Vector s(t_len);
    switch (r.kind) {
      case RecipeKind::sine:
        for (Index t = 0; t < t_len; ++t) {
          const double w = two_pi * static_cast<double>(t) / r.period;
          s(t) = std::sin(w + phase1) + r.harmonic * std::sin(2.0 * w + phase2);
        }
        break;
      case RecipeKind::chirp: {
        // Instantaneous frequency moves linearly from 1/period to 1/end_period.
        const double f0 = 1.0 / r.period, f1 = 1.0 / r.end_period;
        const double span = static_cast<double>(std::max<Index>(1, t_len - 1));
        for (Index t = 0; t < t_len; ++t) {
          const double tt = static_cast<double>(t);
          const double cycles = f0 * tt + 0.5 * (f1 - f0) * tt * tt / span;
          s(t) = std::sin(two_pi * cycles + phase1) + r.harmonic * std::sin(2.0 * two_pi * cycles + phase2);
        }
        break;
      }
      case RecipeKind::smoothed_noise:
        s = smoothed_noise(t_len, r.period, rng);
        break;
    }
    if (r.perturbation > 0.0) {
      const double width = r.smoothing > 0.0 ? r.smoothing : r.period / 8.0;
      s += r.perturbation * std::sqrt(0.5 * (1.0 + r.harmonic * r.harmonic)) *
           smoothed_noise(t_len, width, rng);
    }
    x.col(k) = standardize(s);
  }
  return x;
}

Matrix random_rotation(int n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("random_rotation: size must be positive");
  const Matrix g = rng.normal_matrix(n, n, 1.0);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(n, n);
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < n; ++j) {
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  }
  return q;
}

void check_full_column_rank(const Matrix& mixing) {
  if (mixing.rows() < mixing.cols()) {
    throw std::invalid_argument(fmt::format("mixing matrix {}x{} has fewer rows than columns",
                                            mixing.rows(), mixing.cols()));
  }
  Eigen::JacobiSVD<Matrix> svd(mixing);
  const double smallest = svd.singularValues().minCoeff();
  if (!(smallest >= 1e-8)) {
    throw std::invalid_argument(
        fmt::format("mixing matrix is rank deficient (smallest singular value {:.3g})", smallest));
  }
}

Matrix mix_sources(const Matrix& sources, const Matrix& mixing, MixingKind kind, double noise_std,
                   Rng& rng) {
  if (mixing.cols() != sources.cols()) {
    throw ShapeError(fmt::format("mixing matrix has {} columns for {} sources", mixing.cols(),
                                 sources.cols()));
  }
  check_full_column_rank(mixing);
  Matrix y = sources * mixing.transpose();
  if (kind == MixingKind::nonlinear) {
    y = y.unaryExpr([](double z) { return std::tanh(z) + 0.1 * z; });
  }
  if (noise_std > 0.0) y += rng.normal_matrix(y.rows(), y.cols(), noise_std);
  return y;
}

Dataset generate_dataset(const SyntheticSpec& spec) {
  spec.validate();
  Dataset d;
  d.spec = spec;
  d.references = generate_sources(spec);
  if (spec.min_signature_gap > 0.0) {
    const double gap = signature_gap(d.references, kDefaultLags);
    if (gap < spec.min_signature_gap) {
      throw std::invalid_argument(fmt::format(
          "sources are not temporally distinct enough: signature gap {:.4f} < {:.4f}", gap,
          spec.min_signature_gap));
    }
  }
  Rng mix_rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  if (spec.mixing_matrix.size() != 0) {
    d.mixing = spec.mixing_matrix;
  } else if (spec.channels == spec.sources()) {
    d.mixing = random_rotation(spec.channels, mix_rng);
  } else {
    d.mixing = mix_rng.normal_matrix(spec.channels, spec.sources(),
                                     1.0 / std::sqrt(static_cast<double>(spec.sources())));
  }
  d.observed = mix_sources(d.references, d.mixing, spec.mixing, spec.noise_std, mix_rng);
  return d;
}

Vector autocorrelation(const Matrix& x, Index lag) {
  if (lag < 0 || lag >= x.rows()) throw std::invalid_argument("autocorrelation: lag out of range");
  const Matrix c = x.rowwise() - x.colwise().mean();
  Vector out(c.cols());
  const Index n = c.rows() - lag;
  for (Index j = 0; j < c.cols(); ++j) {
    const double denom = c.col(j).squaredNorm();
    out(j) = denom > 0.0 ? c.col(j).head(n).dot(c.col(j).tail(n)) / denom : 0.0;
  }
  return out;
}

double signature_gap(const Matrix& x, std::span<const Index> lags) {
  std::vector<Vector> acs;
  for (Index lag : lags) acs.push_back(autocorrelation(x, lag));
  double gap = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < x.cols(); ++i) {
    for (Index j = i + 1; j < x.cols(); ++j) {
      double best = 0.0;
      for (const Vector& ac : acs) best = std::max(best, std::abs(ac(i) - ac(j)));
      gap = std::min(gap, best);
    }
  }
  return gap;
}

std::string spec_to_json(const SyntheticSpec& spec) {
  using nlohmann::json;
  json j;
  j["length"] = spec.length;
  j["channels"] = spec.channels;
  j["mixing"] = to_string(spec.mixing);
  j["noise_std"] = spec.noise_std;
  j["seed"] = spec.seed;
  j["min_signature_gap"] = spec.min_signature_gap;
  json recipes = json::array();
  for (const SourceRecipe& r : spec.recipes) {
    recipes.push_back({{"kind", to_string(r.kind)},
                       {"period", r.period},
                       {"harmonic", r.harmonic},
                       {"end_period", r.end_period},
                       {"perturbation", r.perturbation},
                       {"smoothing", r.smoothing}});
  }
  j["recipes"] = recipes;
  json rows = json::array();
  for (Index i = 0; i < spec.mixing_matrix.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(spec.mixing_matrix.cols()));
    for (Index c = 0; c < spec.mixing_matrix.cols(); ++c) {
      row[static_cast<std::size_t>(c)] = spec.mixing_matrix(i, c);
    }
    rows.push_back(row);
  }
  j["mixing_matrix"] = rows;
  return j.dump(2);
}

namespace {

SyntheticSpec spec_from_parsed(const nlohmann::json& j) {
  using nlohmann::json;
  static const std::set<std::string> known{"length", "channels", "mixing", "noise_std", "seed",
                                           "min_signature_gap", "recipes", "mixing_matrix"};
  for (const auto& item : j.items()) {
    if (!known.contains(item.key())) {
      throw std::invalid_argument(fmt::format("unknown dataset field '{}'", item.key()));
    }
  }
  SyntheticSpec spec;
  spec.length = j.at("length");
  spec.channels = j.at("channels");
  spec.mixing = mixing_kind_from_string(j.at("mixing"));
  spec.noise_std = j.at("noise_std");
  spec.seed = j.at("seed");
  spec.min_signature_gap = j.at("min_signature_gap");
  for (const json& r : j.at("recipes")) {
    SourceRecipe rec;
    rec.kind = recipe_kind_from_string(r.at("kind"));
    rec.period = r.at("period");
    rec.harmonic = r.at("harmonic");
    rec.end_period = r.at("end_period");
    rec.perturbation = r.at("perturbation");
    rec.smoothing = r.at("smoothing");
    spec.recipes.push_back(rec);
  }
  const json& rows = j.at("mixing_matrix");
  if (!rows.empty()) {
    spec.mixing_matrix.resize(static_cast<Index>(rows.size()),
                              static_cast<Index>(rows.at(0).size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t c = 0; c < rows[i].size(); ++c) {
        spec.mixing_matrix(static_cast<Index>(i), static_cast<Index>(c)) = rows[i][c];
      }
    }
  }
  return spec;
}

}  // namespace

SyntheticSpec spec_from_json(const std::string& text) {
  using nlohmann::json;
  try {
    return spec_from_parsed(json::parse(text));
  } catch (const json::exception& e) {
    throw std::invalid_argument(fmt::format("invalid dataset description: {}", e.what()));
  }
}

}  // namespace strtf
