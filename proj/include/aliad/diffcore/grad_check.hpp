#pragma once

#include <functional>
#include <vector>

#include "aliad/diffcore/tensor.hpp"

namespace aliad::diff {

struct GradReport {
  double max_relative_error = 0.0;
  // Max error per input tensor, in input order.
  std::vector<double> per_input_errors;
  std::vector<std::vector<double>> analytic;
  std::vector<std::vector<double>> numeric;
  bool saw_nan = false;

  // NaN anywhere is a failure regardless of tolerance.
  bool ok(double tol) const { return !saw_nan && max_relative_error < tol; }
};

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

// Compares reverse-mode gradients of `f` at `inputs` against central
// differences with the given step. Inputs must be leaves; their values are
// restored afterwards. Error per element is |a - n| / max(1, |a|, |n|).
GradReport grad_check(const ScalarFn& f, std::vector<Tensor> inputs, double step = 1e-5);

}  // namespace aliad::diff
