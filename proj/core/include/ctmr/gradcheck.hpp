#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ctmr/tensor.hpp"

namespace ctmr {

struct GradCheckOptions {
  double step = 1e-3;
  double tolerance = 1e-2;
  // Denominator floor for the relative error. Central differences on a
  // float32 forward pass carry ~1e-4 absolute rounding noise at step 1e-3,
  // so gradients below the floor are judged on absolute error instead.
  double denominator_floor = 5e-2;
  // Elements checked per tensor; 0 checks every element.
  std::size_t max_elements_per_tensor = 0;
  std::uint64_t seed = 1234;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // "<tensor index>[<element>]: analytic a numeric n"
  bool passed = true;
};

/// Compares tape gradients of L = sum(w * forward()) against central
/// differences. `w` is a fixed random projection in [-1, 1]; the numeric
/// side accumulates L in double.
GradCheckResult check_gradients(const std::function<Tensor()>& forward, std::vector<Tensor> wrt,
                                const GradCheckOptions& options = {});

struct GradCheckEntry {
  std::string name;
  GradCheckResult result;
};

/// Finite-difference checks for every differentiable tensor op, each on two
/// input shapes.
std::vector<GradCheckEntry> run_op_gradcheck_suite(std::uint64_t seed, const GradCheckOptions& options = {});

// Seeded uniform tensor, convenient for tests and checks.
Tensor random_uniform(Shape shape, float lo, float hi, std::uint64_t seed);

}  // namespace ctmr
