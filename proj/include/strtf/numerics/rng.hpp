#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <string>

#include "strtf/numerics/tensor.hpp"

namespace strtf {

/// Seeded random stream. Draws are built directly from the raw 64-bit
/// Mersenne Twister output so sequences are identical across standard
/// library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  /// Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n);
  double normal();
  Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev);
  Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double lo, double hi);

  [[nodiscard]] std::string serialize() const;
  static Rng deserialize(const std::string& state);

  friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace strtf
