#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "deeva/tensor.hpp"

namespace deeva {

// Finite-difference sweep over randomly sampled small conv networks plus
// detection-loss instances. Nets are resampled when a relu or pool sits
// within `margin` of its non-differentiable point, so central differences
// stay meaningful.
struct GradSuiteConfig {
  int nets = 20;
  int loss_instances = 10;
  uint64_t seed = 1;
  double h = 1e-5;
  double tolerance = 1e-6;
  double margin = 1e-3;
};

struct GradSuiteResult {
  double max_rel_err = 0.0;
  int nets_checked = 0;
  int loss_instances_checked = 0;
  bool passed = false;
  std::vector<std::string> failures;
};

GradSuiteResult run_gradient_suite(const GradSuiteConfig& cfg);

}  // namespace deeva
