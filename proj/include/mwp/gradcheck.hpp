#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mwp/tensor.hpp"

namespace mwp {

class Rng;

// One randomized differentiation check. `forward` must recompute the scalar
// loss from the leaves' current payloads on every call; `accept` (optional)
// can reject a sample after the forward pass (e.g. a dead ReLU head).
struct GradCheckSetup {
  std::vector<Tensor> leaves;
  std::function<Tensor()> forward;
  std::function<bool()> accept;
};

using GradCaseBuilder = std::function<GradCheckSetup(Rng&)>;

// Runs the tape on a sample (re-rolling while any recorded non-smooth
// activation sits within `kink_threshold` of its kink, or while `accept`
// rejects), then compares every leaf coordinate against a central finite
// difference. Returns the maximum relative error over coordinates where
// |analytic| + |numeric| > 1e-8.
double max_rel_grad_error(const GradCaseBuilder& build, Rng& rng, int* rerolls = nullptr,
                          double h = 1e-5, double kink_threshold = 1e-3, int max_rerolls = 100);

struct GradCheckRow {
  std::string name;
  int seeds = 0;
  int rerolls = 0;
  double max_rel_err = 0.0;
  double tolerance = 1e-4;
  bool pass = false;
};

// The standard suite: primitive ops, the attention/encoder blocks, both
// encoders, the fusion stack, the head, and all three losses, each over
// `seeds_per_case` random draws at reduced dimensions.
std::vector<GradCheckRow> run_gradcheck(int seeds_per_case = 20, std::uint64_t seed = 1234);

}  // namespace mwp
