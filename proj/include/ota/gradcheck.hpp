#pragma once

#include <cstdint>
#include <map>
#include <string>

#include <json.hpp>

#include "ota/losses.hpp"

namespace ota {

inline constexpr double kGradCheckNoiseFloor = 1e-8;

struct GradCheckOptions {
  std::uint64_t seed = 0;
  std::size_t trials = 64;
  double epsilon = 1e-5;
  double tolerance = 1e-5;
  /// Flips the sign of the projection gradient; the check must then fail.
  bool inject_fault = false;
  MalConfig mal;
};

struct GradCheckReport {
  /// Worst relative error per parameter group over all trials.
  std::map<std::string, double> max_rel_error;
  std::size_t trials = 0;
  double tolerance = 0.0;
  bool passed = false;
};

/// Compares the analytic gradient of sum(mal(sigmoid(head logits))) with
/// central finite differences on random instances of at most 5 preds,
/// 5 texts and 5 feature dims. The first trial is the 1x1 edge case.
///
/// Relative error of a group is |a - n| / (|a| + |n|) in the 2-norm, and 0
/// when |a - n| is below kGradCheckNoiseFloor. The floor covers groups whose
/// true gradient vanishes (a 1-dim text space makes every cosine +-1), where
/// central differences return pure roundoff.
GradCheckReport gradcheck(const GradCheckOptions& options);

nlohmann::json to_json(const GradCheckReport& report);

}  // namespace ota
