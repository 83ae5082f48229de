#include "aliad/diffcore/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "aliad/error.hpp"

namespace aliad::diff {

GradReport grad_check(const ScalarFn& f, std::vector<Tensor> inputs, double step) {
  for (auto& in : inputs) {
    if (!in.node()->is_leaf()) throw Error("grad_check inputs must be leaf tensors");
    in.set_requires_grad(true);
    in.zero_grad();
  }
  Tensor out = f(inputs);
  if (out.numel() != 1) throw ShapeError("grad_check function must return a scalar");
  out.backward();

  GradReport report;
  for (auto& in : inputs) {
    std::vector<double> a(in.numel(), 0.0);
    if (in.has_grad()) std::copy(in.grad().begin(), in.grad().end(), a.begin());
    report.analytic.push_back(std::move(a));
  }

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto vals = inputs[k].mutable_values();
    std::vector<double> num(vals.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      vals[i] = orig + step;
      const double up = f(inputs).item();
      vals[i] = orig - step;
      const double down = f(inputs).item();
      vals[i] = orig;
      num[i] = (up - down) / (2.0 * step);
      const double an = report.analytic[k][i];
      if (std::isnan(an) || std::isnan(num[i])) {
        report.saw_nan = true;
        worst = std::numeric_limits<double>::infinity();
        continue;
      }
      const double err = std::abs(an - num[i]) / std::max({1.0, std::abs(an), std::abs(num[i])});
      worst = std::max(worst, err);
    }
    report.numeric.push_back(std::move(num));
    report.per_input_errors.push_back(worst);
  }
  report.max_relative_error =
      report.per_input_errors.empty() ? 0.0 : *std::max_element(report.per_input_errors.begin(), report.per_input_errors.end());
  return report;
}

}  // namespace aliad::diff
