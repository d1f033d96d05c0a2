#include "strtf/objective.hpp"

#include <cmath>

#include <fmt/format.h>

namespace strtf {

std::string to_string(MixerKind kind) { return kind == MixerKind::affine ? "affine" : "mlp"; }

MixerKind mixer_kind_from_string(const std::string& name) {
  if (name == "affine") return MixerKind::affine;
  if (name == "mlp") return MixerKind::mlp;
  throw std::invalid_argument(fmt::format("unknown mixer kind '{}' (expected affine or mlp)", name));
}

int Mixer::inputs() const {
  return static_cast<int>(config.kind == MixerKind::affine ? params.at(0).value.cols()
                                                           : params.at(0).value.rows());
}

int Mixer::outputs() const {
  return static_cast<int>(config.kind == MixerKind::affine ? params.at(0).value.rows()
                                                           : params.at(2).value.cols());
}

Mixer make_mixer(int sources, int channels, const MixerConfig& config, Rng& rng) {
  if (sources < 1 || channels < 1) throw std::invalid_argument("mixer dimensions must be positive");
  auto xavier = [&rng](Index rows, Index cols, Index fan_in, Index fan_out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    return rng.uniform_matrix(rows, cols, -bound, bound);
  };
  Mixer m;
  m.config = config;
  if (config.kind == MixerKind::affine) {
    m.params.emplace_back("mixer.weight", xavier(channels, sources, sources, channels));
    m.params.emplace_back("mixer.bias", Matrix::Zero(1, channels));
  } else {
    if (config.hidden < 1) throw std::invalid_argument("mlp mixer needs a positive hidden width");
    m.params.emplace_back("mixer.w1", xavier(sources, config.hidden, sources, config.hidden));
    m.params.emplace_back("mixer.b1", Matrix::Zero(1, config.hidden));
    m.params.emplace_back("mixer.w2", xavier(config.hidden, channels, config.hidden, channels));
    m.params.emplace_back("mixer.b2", Matrix::Zero(1, channels));
  }
  return m;
}

Mixer make_affine_mixer(const Matrix& weight, const Matrix& bias, bool standardize_input) {
  if (bias.rows() != 1 || bias.cols() != weight.rows()) {
    throw ShapeError("make_affine_mixer: bias must be 1 x m for an m x K weight");
  }
  Mixer m;
  m.config.kind = MixerKind::affine;
  m.config.standardize_input = standardize_input;
  m.params.emplace_back("mixer.weight", weight);
  m.params.emplace_back("mixer.bias", bias);
  return m;
}

ad::Tensor decoder_input(ad::Tensor sources, bool standardize, double std_eps) {
  if (!standardize) return sources;
  ad::Tensor centered = sources - ad::mean_rows(sources);
  ad::Tensor variance = ad::mean_rows(ad::square(centered));
  return ad::div(centered, ad::sqrt(variance + std_eps * std_eps));
}

ad::Tensor mix(ad::Tensor decoder_in, Mixer& mixer) {
  ad::Graph& g = decoder_in.graph();
  if (decoder_in.cols() != mixer.inputs()) {
    throw ShapeError(fmt::format("mix: {} latent columns but mixer expects {}", decoder_in.cols(),
                                 mixer.inputs()));
  }
  if (mixer.config.kind == MixerKind::affine) {
    ad::Tensor weight = g.leaf(mixer.params[0]);
    return ad::matmul(decoder_in, ad::transpose(weight)) + g.leaf(mixer.params[1]);
  }
  ad::Tensor hidden =
      ad::gelu(ad::matmul(decoder_in, g.leaf(mixer.params[0])) + g.leaf(mixer.params[1]));
  return ad::matmul(hidden, g.leaf(mixer.params[2])) + g.leaf(mixer.params[3]);
}

ad::Tensor reconstruction_loss(ad::Tensor observed, ad::Tensor predicted, double nu_y) {
  if (!(nu_y > 0.0)) throw std::invalid_argument("reconstruction_loss: nu_y must be positive");
  if (observed.rows() != predicted.rows() || observed.cols() != predicted.cols()) {
    throw ShapeError(fmt::format("reconstruction_loss: {} vs {}", observed.describe(),
                                 predicted.describe()));
  }
  return ad::scale(ad::squared_error(observed, predicted), 1.0 / (2.0 * nu_y));
}

ad::Tensor separation_penalty(ad::Tensor sources, double std_eps) {
  ad::Graph& g = sources.graph();
  const Index t = sources.rows();
  const Index k = sources.cols();
  if (t < 2) throw std::invalid_argument("separation_penalty: need at least two samples");
  ad::Tensor centered = sources - ad::mean_rows(sources);
  ad::Tensor stddev = ad::sqrt(ad::mean_rows(ad::square(centered)));
  ad::Tensor z = ad::div(centered, stddev + std_eps);
  ad::Tensor corr = ad::scale(ad::matmul(ad::transpose(z), z), 1.0 / static_cast<double>(t));
  return ad::squared_norm(corr - g.constant(Matrix::Identity(k, k), "identity"));
}

ad::Tensor smoothness_penalty(ad::Tensor sources, int order) {
  if (order != 1 && order != 2) {
    throw std::invalid_argument(fmt::format("smoothness_penalty: order {} not in {{1, 2}}", order));
  }
  const Index t = sources.rows();
  const Index k = sources.cols();
  if (t <= order) throw std::invalid_argument("smoothness_penalty: need T > order");
  ad::Tensor diff = sources;
  for (int o = 0; o < order; ++o) {
    const Index n = diff.rows();
    diff = ad::slice(diff, 1, 0, n - 1, k) - ad::slice(diff, 0, 0, n - 1, k);
  }
  return ad::scale(ad::squared_norm(diff), 1.0 / static_cast<double>((t - order) * k));
}

LossBreakdown ObjectiveTerms::breakdown() const {
  return {rec.scalar(), str.scalar(), sep.scalar(),  smooth.scalar(),
          ent.scalar(), gap.scalar(), total.scalar()};
}

ObjectiveTerms total_objective(ad::Graph& graph, const ObjectiveInputs& in,
                               std::span<const MaskSet> masks) {
  const ObjectiveWeights& w = in.weights;
  const Index k = in.sources.value.cols();
  if (in.observed.rows() != in.sources.value.rows()) {
    throw ShapeError(fmt::format("total_objective: Y has {} rows but S has {}", in.observed.rows(),
                                 in.sources.value.rows()));
  }
  if (in.controller.sources() != k) {
    throw ShapeError(fmt::format("total_objective: controller has {} sources, S has {}",
                                 in.controller.sources(), k));
  }
  ObjectiveTerms out;
  // Forward failures are re-raised with the name of the term being built.
  auto guarded = [](const char* name, auto&& build) {
    try {
      return build();
    } catch (const NumericError& e) {
      throw NumericError(fmt::format("loss term '{}': {}", name, e.what()));
    }
  };
  out.sources = graph.leaf(in.sources);
  ad::Tensor observed = graph.constant(in.observed, "Y");
  out.rec = guarded("rec", [&] {
    ad::Tensor decoded = decoder_input(out.sources, in.mixer.config.standardize_input, w.std_eps);
    return reconstruction_loss(observed, mix(decoded, in.mixer), w.nu_y);
  });

  std::vector<int> sizes;
  for (const auto& s : in.specs) sizes.push_back(s.patch_size);
  const Vector a = log_scales(sizes);
  out.controller = guarded("controller", [&] {
    return compute_controller(graph.leaf(in.controller.raw_gaps), a, in.controller.config);
  });
  out.structural = guarded("str", [&] {
    return structural_loss(out.sources, out.controller.weights, out.controller.alpha, in.branches,
                           in.specs, masks);
  });
  out.str = out.structural.total;
  out.sep = guarded("sep", [&] { return separation_penalty(out.sources, w.std_eps); });
  out.smooth = guarded("smooth", [&] { return smoothness_penalty(out.sources, w.difference_order); });
  out.ent = guarded("ent", [&] {
    return entropy_penalty(out.controller.weights, in.controller.config.entropy_eps);
  });
  out.gap = guarded("gap", [&] {
    return gap_penalty(out.controller.centers,
                       resolved_min_center_gap(in.controller.config, a, static_cast<int>(k)));
  });

  ad::Tensor total = out.rec;
  const std::pair<double, ad::Tensor> weighted[] = {{w.lambda_str, out.str},
                                                    {w.lambda_sep, out.sep},
                                                    {w.lambda_smooth, out.smooth},
                                                    {w.lambda_ent, out.ent},
                                                    {w.lambda_gap, out.gap}};
  for (const auto& [lambda, term] : weighted) {
    if (lambda < 0.0) throw std::invalid_argument("objective weights must be nonnegative");
    if (lambda != 0.0) total = total + ad::scale(term, lambda);
  }
  if (!std::isfinite(total.scalar())) throw NumericError("loss term 'total' is not finite");
  out.total = total;
  return out;
}

ObjectiveTerms total_objective(ad::Graph& graph, const ObjectiveInputs& in, double mask_ratio,
                               Rng& rng) {
  const std::vector<MaskSet> masks =
      sample_masks(in.observed.rows(), in.specs, static_cast<int>(in.sources.value.cols()),
                   mask_ratio, rng);
  return total_objective(graph, in, masks);
}

}  // namespace strtf
