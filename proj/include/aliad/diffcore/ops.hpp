#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "aliad/diffcore/tensor.hpp"

// Differentiable primitives. Binary elementwise ops broadcast with numpy
// rules (shapes aligned from the right, size-1 axes stretch).
namespace aliad::diff {

// Value-identical copy that backward treats as a constant.
Tensor stop_gradient(const Tensor& t);
Tensor reshape(const Tensor& t, Shape shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator+(double s, const Tensor& a) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return add_scalar(a, -s); }
inline Tensor operator-(double s, const Tensor& a) { return add_scalar(neg(a), s); }
inline Tensor operator*(const Tensor& a, double s) { return mul_scalar(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator/(const Tensor& a, double s) { return mul_scalar(a, 1.0 / s); }

inline constexpr double kLogFloor = 1e-30;

Tensor exp(const Tensor& t);
// log(max(t, 1e-30)); zero gradient below the floor.
Tensor log(const Tensor& t);
Tensor sqrt(const Tensor& t);
Tensor pow(const Tensor& t, double p);
Tensor relu(const Tensor& t);
Tensor softplus(const Tensor& t);
// Standard normal CDF.
Tensor normal_cdf(const Tensor& t);

// [n, k] x [k, m] -> [n, m]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// x: [B, Cin, T], w: [Cout, Cin, K], bias: [Cout] or undefined.
// Zero padding on both ends; output length (T + 2*pad - K) / stride + 1.
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride, std::size_t pad);

Tensor softmax(const Tensor& t, std::size_t axis);
Tensor log_softmax(const Tensor& t, std::size_t axis);
Tensor logsumexp(const Tensor& t, std::size_t axis, bool keepdim = false);

Tensor sum(const Tensor& t, std::size_t axis, bool keepdim = false);
Tensor mean(const Tensor& t, std::size_t axis, bool keepdim = false);
Tensor sum(const Tensor& t);
Tensor mean(const Tensor& t);
Tensor l2_norm(const Tensor& t, std::size_t axis, bool keepdim = false);

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
inline Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

// Slices along `axis` picked by index (repeats allowed).
Tensor index_select(const Tensor& t, std::size_t axis, std::span<const std::size_t> indices);
// Adjoint of index_select on axis 0: out[indices[i]] += src[i], out has `rows` rows.
Tensor scatter_rows(const Tensor& src, std::span<const std::size_t> indices, std::size_t rows);
// out.flat[i] = t.flat[flat_indices[i]]
Tensor gather(const Tensor& t, std::span<const std::size_t> flat_indices, Shape out_shape);
// out.flat[flat_indices[i]] += src.flat[i]
Tensor scatter(const Tensor& src, std::span<const std::size_t> flat_indices, Shape out_shape);

// Per-row cross-entropy of logits [T, M] against class indices; returns [T].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace aliad::diff
