#pragma once

// Finite-difference verification of tape gradients.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "glims/tensor.hpp"

namespace glims {

struct GradcheckOptions {
  /// Relative step: h = step * max(1, |x|).
  double step = 1e-4;
  double tolerance = 1e-4;
  /// Coordinates probed per input; all when the input is at most this large.
  std::int64_t max_coords = 48;
  /// Retries with a 10x smaller step while a coordinate disagrees by more
  /// than a tenth of the tolerance.
  int refinements = 2;
  std::uint64_t seed = 1234;
};

struct GradcheckResult {
  double max_rel_error = 0;
  std::int64_t coords_checked = 0;
  std::string worst;
  bool passed = true;
};

/// Compares d/dx sum(f(inputs) * R), R fixed random, against central
/// differences. Inputs must be f64 leaves; they are perturbed in place and
/// restored. Parameters captured by f are not checked unless listed.
GradcheckResult gradcheck(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                          const GradcheckOptions& opt = {});

struct GradcheckCase {
  std::string name;
  GradcheckResult result;
  double tolerance = 0;
  double seconds = 0;
};

/// Every op, every block, the loss and (optionally) a tiny end-to-end model.
/// Tolerances per case are fixed inside.
std::vector<GradcheckCase> run_gradcheck_suite(std::uint64_t seed = 7, bool include_model = true);

}  // namespace glims
