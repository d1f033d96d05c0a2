#include "strtf/cli/config.hpp"

#include <set>

#include <fmt/format.h>
#include <toml.hpp>

#include "strtf/io.hpp"

namespace strtf::cli {

namespace {

/// One TOML table; every key must be read exactly once before `finish()`.
class Section {
 public:
  Section(const toml::table* table, std::string name) : table_(table), name_(std::move(name)) {}

  template <typename T>
  void read(std::string_view key, T& target) {
    const toml::node* node = find(key);
    if (node != nullptr) target = convert<T>(*node, key);
  }

  template <typename T>
  void read(std::string_view key, std::optional<T>& target) {
    const toml::node* node = find(key);
    if (node != nullptr) target = convert<T>(*node, key);
  }

  /// Raw access for nested structures; marks the key as used.
  const toml::node* node(std::string_view key) { return find(key); }

  [[nodiscard]] std::string qualified(std::string_view key) const {
    return fmt::format("{}.{}", name_, key);
  }

  void finish() const {
    if (table_ == nullptr) return;
    for (const auto& [key, value] : *table_) {
      if (!used_.contains(std::string(key.str()))) {
        throw ConfigError(fmt::format("unknown key '{}'", qualified(key.str())));
      }
    }
  }

 private:
  const toml::node* find(std::string_view key) {
    if (table_ == nullptr) return nullptr;
    used_.insert(std::string(key));
    return table_->get(key);
  }

  template <typename T>
  T convert(const toml::node& node, std::string_view key) const {
    if constexpr (std::is_same_v<T, bool>) {
      if (auto v = node.value_exact<bool>()) return *v;
      throw type_error(key, "a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (auto v = node.value_exact<std::int64_t>()) {
        if constexpr (std::is_unsigned_v<T>) {
          if (*v < 0) throw type_error(key, "a nonnegative integer");
        }
        return static_cast<T>(*v);
      }
      throw type_error(key, "an integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (auto v = node.value_exact<double>()) return *v;
      if (auto v = node.value_exact<std::int64_t>()) return static_cast<double>(*v);
      throw type_error(key, "a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (auto v = node.value_exact<std::string>()) return *v;
      throw type_error(key, "a string");
    } else {
      static_assert(std::is_same_v<T, std::vector<int>>);
      const toml::array* arr = node.as_array();
      if (arr == nullptr) throw type_error(key, "an array of integers");
      std::vector<int> out;
      for (const toml::node& item : *arr) {
        auto v = item.value_exact<std::int64_t>();
        if (!v) throw type_error(key, "an array of integers");
        out.push_back(static_cast<int>(*v));
      }
      return out;
    }
  }

  [[nodiscard]] ConfigError type_error(std::string_view key, std::string_view what) const {
    return ConfigError(fmt::format("key '{}' must be {}", qualified(key), what));
  }

  const toml::table* table_;
  std::string name_;
  std::set<std::string> used_;
};

const toml::table* subtable(const toml::table& root, std::string_view name) {
  const toml::node* node = root.get(name);
  if (node == nullptr) return nullptr;
  if (!node->is_table()) throw ConfigError(fmt::format("'{}' must be a table", name));
  return node->as_table();
}

template <typename Fn>
auto translate(Fn&& fn) {
  try {
    return fn();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

void read_data(Section& s, SyntheticSpec& spec) {
  std::string preset = "case-study";
  s.read("preset", preset);
  if (preset == "none") {
    spec = SyntheticSpec{};
  } else if (preset != "case-study") {
    throw ConfigError(
        fmt::format("key '{}' must be \"case-study\" or \"none\"", s.qualified("preset")));
  }
  s.read("length", spec.length);
  s.read("channels", spec.channels);
  std::string mixing = to_string(spec.mixing);
  s.read("mixing", mixing);
  spec.mixing = translate([&] { return mixing_kind_from_string(mixing); });
  s.read("noise_std", spec.noise_std);
  s.read("seed", spec.seed);
  s.read("min_signature_gap", spec.min_signature_gap);

  if (const toml::node* recipes = s.node("recipes")) {
    const toml::array* arr = recipes->as_array();
    if (arr == nullptr) throw ConfigError("'data.recipes' must be an array of tables");
    spec.recipes.clear();
    for (std::size_t i = 0; i < arr->size(); ++i) {
      const toml::table* t = arr->get(i)->as_table();
      if (t == nullptr) throw ConfigError("'data.recipes' must be an array of tables");
      Section r(t, fmt::format("data.recipes[{}]", i));
      SourceRecipe recipe;
      std::string kind = to_string(recipe.kind);
      r.read("kind", kind);
      recipe.kind = translate([&] { return recipe_kind_from_string(kind); });
      r.read("period", recipe.period);
      r.read("harmonic", recipe.harmonic);
      r.read("end_period", recipe.end_period);
      r.read("perturbation", recipe.perturbation);
      r.read("smoothing", recipe.smoothing);
      r.finish();
      spec.recipes.push_back(recipe);
    }
  }

  if (const toml::node* rows = s.node("mixing_matrix")) {
    const toml::array* arr = rows->as_array();
    auto bad = [] { return ConfigError("'data.mixing_matrix' must be an array of numeric rows"); };
    if (arr == nullptr || arr->empty()) throw bad();
    Matrix m;
    for (std::size_t i = 0; i < arr->size(); ++i) {
      const toml::array* row = arr->get(i)->as_array();
      if (row == nullptr) throw bad();
      if (i == 0) m.resize(static_cast<Index>(arr->size()), static_cast<Index>(row->size()));
      if (static_cast<Index>(row->size()) != m.cols()) throw bad();
      for (std::size_t j = 0; j < row->size(); ++j) {
        const toml::node& cell = *row->get(j);
        std::optional<double> v = cell.value_exact<double>();
        if (!v) {
          if (auto iv = cell.value_exact<std::int64_t>()) v = static_cast<double>(*iv);
        }
        if (!v) throw bad();
        m(static_cast<Index>(i), static_cast<Index>(j)) = *v;
      }
    }
    spec.mixing_matrix = m;
  }
}

void read_model(Section& s, TrainConfig& cfg) {
  s.read("sources", cfg.sources);
  s.read("patch_sizes", cfg.patch_sizes);
  s.read("stride_ratio", cfg.stride_ratio);
  s.read("mask_ratio", cfg.mask_ratio);
  s.read("d_model", cfg.arch.d_model);
  s.read("heads", cfg.arch.heads);
  s.read("layers", cfg.arch.layers);
  s.read("ff_width", cfg.arch.ff_width);
  s.read("layer_norm_eps", cfg.arch.layer_norm_eps);
  std::string mixer = to_string(cfg.mixer.kind);
  s.read("mixer", mixer);
  cfg.mixer.kind = translate([&] { return mixer_kind_from_string(mixer); });
  s.read("mixer_hidden", cfg.mixer.hidden);
  s.read("standardize_input", cfg.mixer.standardize_input);
}

void read_objective(Section& s, ObjectiveWeights& w) {
  s.read("nu_y", w.nu_y);
  s.read("lambda_str", w.lambda_str);
  s.read("lambda_sep", w.lambda_sep);
  s.read("lambda_smooth", w.lambda_smooth);
  s.read("lambda_ent", w.lambda_ent);
  s.read("lambda_gap", w.lambda_gap);
  s.read("difference_order", w.difference_order);
  s.read("std_eps", w.std_eps);
}

void read_controller(Section& s, ControllerConfig& c) {
  s.read("gap_floor", c.gap_floor);
  s.read("temperature", c.temperature);
  s.read("alpha_min", c.alpha_min);
  s.read("alpha_max", c.alpha_max);
  s.read("min_center_gap", c.min_center_gap);
  s.read("entropy_eps", c.entropy_eps);
}

void read_train(Section& s, TrainConfig& cfg) {
  s.read("max_iterations", cfg.max_iterations);
  s.read("learning_rate", cfg.learning_rate);
  std::string scheduler = to_string(cfg.scheduler);
  s.read("scheduler", scheduler);
  cfg.scheduler = translate([&] { return scheduler_from_string(scheduler); });
  s.read("warmup_steps", cfg.warmup_steps);
  // 0 disables clipping.
  double clip = cfg.clip_norm.value_or(0.0);
  s.read("clip_norm", clip);
  cfg.clip_norm = clip > 0.0 ? std::optional<double>(clip) : std::nullopt;
  if (clip < 0.0) throw ConfigError("key 'train.clip_norm' must be nonnegative");
  s.read("seed", cfg.seed);
  s.read("deterministic", cfg.deterministic);
  s.read("diagnostics_every", cfg.diagnostics_every);
  s.read("init_source_std", cfg.init_source_std);
}

void read_output(Section& s, OutputConfig& o) {
  s.read("dir", o.dir);
  s.read("checkpoint", o.checkpoint);
  s.read("diagnostics", o.diagnostics);
}

void check_controller(const ControllerConfig& c) {
  if (!(c.alpha_min > 0.0 && c.alpha_min < c.alpha_max)) {
    throw ConfigError("controller slopes must satisfy 0 < alpha_min < alpha_max");
  }
  if (!(c.gap_floor > 0.0)) throw ConfigError("controller.gap_floor must be positive");
  if (!(c.temperature >= 0.0)) throw ConfigError("controller.temperature must be nonnegative");
}

}  // namespace

RunConfig parse_run_config(std::string_view toml_text, std::string_view origin) {
  toml::table root;
  try {
    root = toml::parse(toml_text, origin);
  } catch (const toml::parse_error& e) {
    throw ConfigError(fmt::format("{}:{}:{}: {}", origin, e.source().begin.line,
                                  e.source().begin.column, e.description()));
  }
  static const std::set<std::string> sections{"data",  "model", "objective",
                                               "controller", "train", "output"};
  for (const auto& [key, value] : root) {
    if (!sections.contains(std::string(key.str()))) {
      throw ConfigError(fmt::format("unknown key '{}'", key.str()));
    }
  }

  RunConfig cfg;
  Section data(subtable(root, "data"), "data");
  read_data(data, cfg.data);
  data.finish();
  Section model(subtable(root, "model"), "model");
  read_model(model, cfg.train);
  model.finish();
  Section objective(subtable(root, "objective"), "objective");
  read_objective(objective, cfg.train.weights);
  objective.finish();
  Section controller(subtable(root, "controller"), "controller");
  read_controller(controller, cfg.train.controller);
  controller.finish();
  Section train(subtable(root, "train"), "train");
  read_train(train, cfg.train);
  train.finish();
  Section output(subtable(root, "output"), "output");
  read_output(output, cfg.output);
  output.finish();

  translate([&] {
    cfg.data.validate();
    cfg.train.validate();
    return 0;
  });
  check_controller(cfg.train.controller);
  for (double w : {cfg.train.weights.lambda_str, cfg.train.weights.lambda_sep,
                   cfg.train.weights.lambda_smooth, cfg.train.weights.lambda_ent,
                   cfg.train.weights.lambda_gap}) {
    if (!(w >= 0.0)) throw ConfigError("objective weights must be nonnegative");
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_text_file(path), path.string());
}

void apply_seed(RunConfig& cfg, std::uint64_t seed) {
  cfg.data.seed = seed;
  cfg.train.seed = seed;
}

}  // namespace strtf::cli
