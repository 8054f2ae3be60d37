#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace disout {

struct GradcheckConfig {
  std::size_t instances = 100;
  std::uint64_t seed = 1;
  double step = 1e-5;
  double tolerance = 1e-5;
  /// Test fixture: negate every analytic gradient before comparing.
  bool inject_sign_flip = false;
};

struct SuiteResult {
  std::string name;
  std::size_t instances = 0;
  /// Instances skipped because a probe moved an argmax, sign, relu or pool
  /// pattern.
  std::size_t rejected = 0;
  double max_rel_error = 0.0;
  std::uint64_t worst_seed = 0;
  bool passed = false;
};

/// Relative error ‖a − b‖∞ / max(‖a‖∞, ‖b‖∞), 0 when both are zero.
double relative_error(const std::vector<double>& a, const std::vector<double>& b);

/// Exact dense-attachment distortion gradient against central differences
/// of the surrogate, at 64-bit.
SuiteResult gradcheck_fc(const GradcheckConfig& cfg);
/// Exact conv-attachment distortion gradient (random stride and padding).
SuiteResult gradcheck_conv(const GradcheckConfig& cfg);
/// Weight gradients of a conv + pool + dense network with attachments whose
/// masked values are held constant.
SuiteResult gradcheck_backprop(const GradcheckConfig& cfg);

std::vector<SuiteResult> run_gradcheck(const GradcheckConfig& cfg);

}  // namespace disout
