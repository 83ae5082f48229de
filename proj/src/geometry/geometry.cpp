#include "aliad/geometry.hpp"

#include <cmath>
#include <string>

#include "aliad/diffcore/ops.hpp"
#include "aliad/error.hpp"

namespace aliad::geometry {

using diff::Tensor;

namespace {

void check_slices(const Tensor& norms, const char* what) {
  const auto v = norms.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!(v[i] > kNormFloor)) {
      throw DegenerateError(std::string(what) + ": slice " + std::to_string(i) + " has norm " + std::to_string(v[i]) +
                            " (degenerate embedding)");
    }
  }
}

double norm(std::span<const double> a) {
  double s = 0.0;
  for (double x : a) s += x * x;
  return std::sqrt(s);
}

}  // namespace

Tensor mag_norm(const Tensor& z) {
  if (z.dim() == 0) throw ShapeError("mag_norm needs at least one axis");
  const std::size_t last = z.dim() - 1;
  const double radius = std::sqrt(static_cast<double>(z.size(last)));
  Tensor n = diff::l2_norm(z, last, true);
  check_slices(n, "mag_norm");
  return diff::mul_scalar(diff::div(z, n), radius);
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine_similarity length mismatch");
  const double na = norm(a), nb = norm(b);
  if (!(na > kNormFloor) || !(nb > kNormFloor)) throw DegenerateError("cosine_similarity of a zero-norm vector");
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  return dot / (na * nb);
}

double critic(std::span<const double> a, std::span<const double> b, double tau) {
  if (!(tau > 0.0)) throw ConfigError("critic temperature must be positive");
  return std::exp(cosine_similarity(a, b) / tau);
}

Tensor normalize_rows(const Tensor& z) {
  if (z.dim() != 2) throw ShapeError("normalize_rows expects [N, C]");
  Tensor n = diff::l2_norm(z, 1, true);
  check_slices(n, "normalize_rows");
  return diff::div(z, n);
}

Tensor cosine_matrix(const Tensor& a, const Tensor& b) {
  return diff::matmul(normalize_rows(a), diff::transpose(normalize_rows(b)));
}

}  // namespace aliad::geometry
