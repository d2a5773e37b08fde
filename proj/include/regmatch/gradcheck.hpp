#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace regmatch {

struct GradCheckSpec {
  std::string fragment = "rcar";
  std::size_t probes = 50;
  std::uint64_t seed = 1;
  double step = 1e-4;
  int order = 4;  // central difference stencil: 2 or 4 points
  double tolerance = 1e-4;
  // Relative error = |ga - gn| / max(|ga|, |gn|, error_floor) per tensor.
  double error_floor = 1e-6;
  // Probes closer than this to a kink, or whose finite-difference
  // evaluations cross one, are resampled.
  double kink_margin = 1e-6;
  std::size_t retry_budget = 50;
  std::size_t dim = 6;
  std::size_t align_dim = 4;
  std::size_t regions = 3;
  std::size_t words = 3;
  // Fault injection: scales the analytic gradient of this parameter.
  std::string corrupt_param;
  double corrupt_scale = 1.1;
};

struct ParamError {
  std::string name;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::string fragment;
  std::size_t probes = 0;     // evaluated
  std::size_t resampled = 0;  // draws rejected near a kink
  std::size_t flagged = 0;    // probes given up after the retry budget
  double max_rel_error = 0.0;
  std::string worst_param;
  std::vector<ParamError> params;  // max error per parameter over probes
  bool passed = false;

  std::string str() const;
};

// Registered differentiable compositions.
std::vector<std::string> grad_check_fragments();
GradCheckReport grad_check(const GradCheckSpec& spec);

}  // namespace regmatch
