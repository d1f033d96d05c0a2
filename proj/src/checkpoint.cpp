#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <zlib.h>

#include "strtf/trainer.hpp"

namespace strtf {

static_assert(std::endian::native == std::endian::little,
              "checkpoint encoding assumes a little-endian host");

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'S', 'T', 'R', 'T'};

json optional_to_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_from_json(const json& v) {
  if (v.is_null()) return std::nullopt;
  return v.get<double>();
}

class Writer {
 public:
  template <typename T>
  void pod(const T& v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.append(p, sizeof(T));
  }
  void bytes(const std::string& s) {
    pod<std::uint64_t>(s.size());
    buf_.append(s);
  }
  void blob(const std::string& name, const std::string& payload) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    buf_.append(name);
    bytes(payload);
  }
  std::string& buffer() { return buf_; }

 private:
  std::string buf_;
};

std::string matrix_payload(const Matrix& m) {
  Writer w;
  w.pod<std::uint64_t>(static_cast<std::uint64_t>(m.rows()));
  w.pod<std::uint64_t>(static_cast<std::uint64_t>(m.cols()));
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) w.pod<double>(m(i, j));
  }
  return w.buffer();
}

class Reader {
 public:
  Reader(const std::string& data, std::size_t end) : data_(data), end_(end) {}

  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string take(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  [[nodiscard]] bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (n > end_ - pos_) throw CheckpointError("checkpoint is truncated");
  }
  const std::string& data_;
  std::size_t pos_ = 0;
  std::size_t end_;
};

Matrix matrix_from_payload(const std::string& payload, const std::string& name) {
  Reader r(payload, payload.size());
  const auto rows = r.pod<std::uint64_t>();
  const auto cols = r.pod<std::uint64_t>();
  if (payload.size() != 16 + rows * cols * sizeof(double)) {
    throw CheckpointError(fmt::format("blob '{}' has an inconsistent matrix size", name));
  }
  Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = r.pod<double>();
  }
  return m;
}

std::uint32_t checksum(const std::string& data, std::size_t n) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(n)));
}

}  // namespace

std::string config_to_json(const TrainConfig& c) {
  json j;
  j["sources"] = c.sources;
  j["patch_sizes"] = c.patch_sizes;
  j["stride_ratio"] = c.stride_ratio;
  j["mask_ratio"] = c.mask_ratio;
  j["arch"] = {{"d_model", c.arch.d_model},
               {"heads", c.arch.heads},
               {"layers", c.arch.layers},
               {"ff_width", c.arch.ff_width},
               {"layer_norm_eps", c.arch.layer_norm_eps}};
  j["mixer"] = {{"kind", to_string(c.mixer.kind)},
                {"hidden", c.mixer.hidden},
                {"standardize_input", c.mixer.standardize_input}};
  const ObjectiveWeights& w = c.weights;
  j["weights"] = {{"nu_y", w.nu_y},
                  {"lambda_str", w.lambda_str},
                  {"lambda_sep", w.lambda_sep},
                  {"lambda_smooth", w.lambda_smooth},
                  {"lambda_ent", w.lambda_ent},
                  {"lambda_gap", w.lambda_gap},
                  {"difference_order", w.difference_order},
                  {"std_eps", w.std_eps}};
  const ControllerConfig& k = c.controller;
  j["controller"] = {{"gap_floor", k.gap_floor},
                     {"temperature", k.temperature},
                     {"alpha_min", k.alpha_min},
                     {"alpha_max", k.alpha_max},
                     {"min_center_gap", optional_to_json(k.min_center_gap)},
                     {"entropy_eps", k.entropy_eps}};
  j["max_iterations"] = c.max_iterations;
  j["learning_rate"] = c.learning_rate;
  j["scheduler"] = to_string(c.scheduler);
  j["warmup_steps"] = c.warmup_steps;
  j["clip_norm"] = optional_to_json(c.clip_norm);
  j["seed"] = c.seed;
  j["deterministic"] = c.deterministic;
  j["diagnostics_every"] = c.diagnostics_every;
  j["init_source_std"] = c.init_source_std;
  return j.dump();
}

TrainConfig config_from_json(const std::string& text) {
  TrainConfig c;
  try {
    const json j = json::parse(text);
    c.sources = j.at("sources");
    c.patch_sizes = j.at("patch_sizes").get<std::vector<int>>();
    c.stride_ratio = j.at("stride_ratio");
    c.mask_ratio = j.at("mask_ratio");
    const json& a = j.at("arch");
    c.arch.d_model = a.at("d_model");
    c.arch.heads = a.at("heads");
    c.arch.layers = a.at("layers");
    c.arch.ff_width = a.at("ff_width");
    c.arch.layer_norm_eps = a.at("layer_norm_eps");
    const json& m = j.at("mixer");
    c.mixer.kind = mixer_kind_from_string(m.at("kind"));
    c.mixer.hidden = m.at("hidden");
    c.mixer.standardize_input = m.at("standardize_input");
    const json& w = j.at("weights");
    c.weights.nu_y = w.at("nu_y");
    c.weights.lambda_str = w.at("lambda_str");
    c.weights.lambda_sep = w.at("lambda_sep");
    c.weights.lambda_smooth = w.at("lambda_smooth");
    c.weights.lambda_ent = w.at("lambda_ent");
    c.weights.lambda_gap = w.at("lambda_gap");
    c.weights.difference_order = w.at("difference_order");
    c.weights.std_eps = w.at("std_eps");
    const json& k = j.at("controller");
    c.controller.gap_floor = k.at("gap_floor");
    c.controller.temperature = k.at("temperature");
    c.controller.alpha_min = k.at("alpha_min");
    c.controller.alpha_max = k.at("alpha_max");
    c.controller.min_center_gap = optional_from_json(k.at("min_center_gap"));
    c.controller.entropy_eps = k.at("entropy_eps");
    c.max_iterations = j.at("max_iterations");
    c.learning_rate = j.at("learning_rate");
    c.scheduler = scheduler_from_string(j.at("scheduler"));
    c.warmup_steps = j.at("warmup_steps");
    c.clip_norm = optional_from_json(j.at("clip_norm"));
    c.seed = j.at("seed");
    c.deterministic = j.at("deterministic");
    c.diagnostics_every = j.at("diagnostics_every");
    c.init_source_std = j.at("init_source_std");
  } catch (const json::exception& e) {
    throw CheckpointError(fmt::format("invalid embedded configuration: {}", e.what()));
  }
  return c;
}

void save_checkpoint(const TrainingState& state, const TrainConfig& cfg,
                     const std::filesystem::path& path) {
  auto& st = const_cast<TrainingState&>(state);
  const std::vector<ad::Parameter*> params = st.parameters();

  std::vector<std::pair<std::string, std::string>> blobs;
  blobs.emplace_back("config", config_to_json(cfg));
  const json meta = {{"iteration", state.iteration},
                     {"length", state.sources.value.rows()},
                     {"channels", state.mixer.outputs()},
                     {"patch_sizes", state.patch_sizes},
                     {"adam_step", state.adam.step}};
  blobs.emplace_back("meta", meta.dump());
  blobs.emplace_back("rng", state.rng.serialize());
  const bool has_moments = !state.adam.first_moment.empty();
  for (std::size_t i = 0; i < params.size(); ++i) {
    blobs.emplace_back("param/" + params[i]->name, matrix_payload(params[i]->value));
    if (has_moments) {
      blobs.emplace_back("adam.m/" + params[i]->name, matrix_payload(state.adam.first_moment.at(i)));
      blobs.emplace_back("adam.v/" + params[i]->name,
                         matrix_payload(state.adam.second_moment.at(i)));
    }
  }

  Writer w;
  w.buffer().append(kMagic, 4);
  w.pod<std::uint16_t>(kCheckpointVersion);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(blobs.size()));
  for (const auto& [name, payload] : blobs) w.blob(name, payload);
  const std::uint32_t crc = checksum(w.buffer(), w.buffer().size());
  w.pod<std::uint32_t>(crc);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::ios_base::failure(fmt::format("cannot open '{}' for writing", path.string()));
  out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
  if (!out) throw std::ios_base::failure(fmt::format("failed writing '{}'", path.string()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::ios_base::failure(fmt::format("cannot open '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string data = ss.str();

  if (data.size() < 4 || std::memcmp(data.data(), kMagic, 4) != 0) {
    throw CheckpointError(fmt::format("'{}' is not a checkpoint (bad magic bytes)", path.string()));
  }
  if (data.size() < 4 + 2 + 4 + 4) throw CheckpointError("checkpoint is truncated");
  std::uint16_t version = 0;
  std::memcpy(&version, data.data() + 4, 2);
  if (version != kCheckpointVersion) {
    throw CheckpointError(fmt::format("unsupported checkpoint version {} (expected {})", version,
                                      kCheckpointVersion));
  }
  const std::size_t body = data.size() - 4;
  std::uint32_t stored = 0;
  std::memcpy(&stored, data.data() + body, 4);
  if (stored != checksum(data, body)) throw CheckpointError("checkpoint checksum mismatch");

  Reader r(data, body);
  r.take(6);
  const auto count = r.pod<std::uint32_t>();
  std::map<std::string, std::string> blobs;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.pod<std::uint32_t>();
    std::string name = r.take(name_len);
    const auto len = r.pod<std::uint64_t>();
    blobs[std::move(name)] = r.take(len);
  }
  if (!r.done()) throw CheckpointError("trailing bytes after the last blob");
  auto blob = [&](const std::string& name) -> const std::string& {
    auto it = blobs.find(name);
    if (it == blobs.end()) throw CheckpointError(fmt::format("missing blob '{}'", name));
    return it->second;
  };

  Checkpoint ck;
  ck.config = config_from_json(blob("config"));
  json meta;
  try {
    meta = json::parse(blob("meta"));
  } catch (const json::exception& e) {
    throw CheckpointError(fmt::format("invalid metadata: {}", e.what()));
  }
  ck.state = init_state(meta.at("length").get<Index>(), meta.at("channels").get<Index>(), ck.config);
  if (ck.state.patch_sizes != meta.at("patch_sizes").get<std::vector<int>>()) {
    throw CheckpointError("stored patch sizes do not match the embedded configuration");
  }
  ck.state.iteration = meta.at("iteration");
  ck.state.adam.step = meta.at("adam_step");
  ck.state.rng = Rng::deserialize(blob("rng"));

  auto restore = [&](const std::string& name, const Matrix& like) {
    Matrix m = matrix_from_payload(blob(name), name);
    if (m.rows() != like.rows() || m.cols() != like.cols()) {
      throw CheckpointError(fmt::format("blob '{}' has shape {}x{}, expected {}x{}", name, m.rows(),
                                        m.cols(), like.rows(), like.cols()));
    }
    return m;
  };
  const bool has_moments = blobs.count("adam.m/sources") > 0;
  for (ad::Parameter* p : ck.state.parameters()) {
    p->value = restore("param/" + p->name, p->value);
    p->zero_grad();
    if (has_moments) {
      ck.state.adam.first_moment.push_back(restore("adam.m/" + p->name, p->value));
      ck.state.adam.second_moment.push_back(restore("adam.v/" + p->name, p->value));
    }
  }
  return ck;
}

}  // namespace strtf
