#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gaze/tensor.hpp"

namespace gaze {

struct GradcheckViolation {
  std::size_t input = 0;
  std::size_t element = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
};

struct GradcheckReport {
  bool passed = true;
  double max_rel_error = 0;
  std::size_t elements_checked = 0;
  std::vector<GradcheckViolation> violations;

  std::string summary() const;
};

using ScalarFn64 = std::function<Tensor64(const std::vector<Tensor64>&)>;

/// Compares backward() against central differences (f(x+h) - f(x-h)) / 2h for
/// every element of every input. The error of one element is
/// |analytic - numeric| / max(1, |analytic|, |numeric|): relative for
/// gradients of magnitude above one, absolute below. Inputs are copied into
/// fresh leaves; the caller's tensors are not modified. Throws
/// ValidationError when f does not return a scalar connected to the inputs.
GradcheckReport gradcheck(const ScalarFn64& f, const std::vector<Tensor64>& inputs,
                          double step = 1e-4, double tol = 1e-5);

}  // namespace gaze

namespace gaze {

struct GradcheckCase {
  std::string name;
  GradcheckReport report;
};

/// Checks every differentiable op, each loss and a small end-to-end
/// encoder + projection graph on `instances` random draws per case.
std::vector<GradcheckCase> run_gradcheck_suite(std::uint64_t seed, std::size_t instances = 3);

}  // namespace gaze
