#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "strtf/objective.hpp"

namespace strtf {

/// One logged training step.
struct DiagnosticsRecord {
  std::int64_t iteration = 0;
  LossBreakdown loss;
  std::vector<double> branch_str;
  std::vector<double> expected_scale;
  std::vector<double> center;
  std::vector<double> alpha;
  // Present only when reference sources were supplied.
  std::optional<double> mac;
  std::vector<double> branch_corr;
  std::vector<int> matched_index;

  friend bool operator==(const DiagnosticsRecord&, const DiagnosticsRecord&) = default;
};

using DiagnosticsLog = std::vector<DiagnosticsRecord>;

}  // namespace strtf
