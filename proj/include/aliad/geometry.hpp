#pragma once

#include <span>

#include "aliad/diffcore/tensor.hpp"

// Hypersphere helpers shared by the losses, the fusion block and the heads.
namespace aliad::geometry {

inline constexpr double kNormFloor = 1e-12;

// z / ||z|| * sqrt(C) along the last axis. Throws DegenerateError naming
// the first slice whose norm is <= kNormFloor.
diff::Tensor mag_norm(const diff::Tensor& z);

double cosine_similarity(std::span<const double> a, std::span<const double> b);
// exp(cos(a, b) / tau)
double critic(std::span<const double> a, std::span<const double> b, double tau);

// Row-wise unit normalisation of a [N, C] tensor (differentiable).
diff::Tensor normalize_rows(const diff::Tensor& z);
// [Na, C] x [Nb, C] -> [Na, Nb] cosine matrix.
diff::Tensor cosine_matrix(const diff::Tensor& a, const diff::Tensor& b);

}  // namespace aliad::geometry
