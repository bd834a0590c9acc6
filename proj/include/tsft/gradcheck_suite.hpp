#pragma once

#include <cstdint>
#include <vector>

#include "tsft/backbone.hpp"
#include "tsft/gradcheck.hpp"

namespace tsft {

struct GradCheckSuiteOptions {
  int draws = 10;             // independent (model, input) draws per component
  Index entries_per_param = 6;  // random entries probed per parameter tensor
  double eps = 1e-5;
  double tol = 1e-4;
  std::uint64_t seed = 0;
};

// Gradient checks in double precision for the backbone (full fine-tuning),
// the LoRA path, each prompt aggregator, P-tuning v2 and both heads. One
// result per (component, draw).
std::vector<GradCheckResult> run_gradcheck_suite(const BackboneConfig& cfg, const GradCheckSuiteOptions& opts = {});

}  // namespace tsft
