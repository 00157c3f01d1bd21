#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "trimllm/tensor.hpp"

namespace trimllm {

/// Largest row/column count accepted by singular_values.
inline constexpr std::size_t kMaxSvdDim = 64;

/// Singular values of a small matrix, descending, length min(rows, cols).
/// One-sided Jacobi; throws SizeError above kMaxSvdDim in either dimension.
template <class Real>
std::vector<Real> singular_values(const Tensor<Real>& m);

/// Sum of singular values.
template <class Real>
Real nuclear_norm(const Tensor<Real>& m);

/// Plain value of the Frobenius norm (no tape participation).
template <class Real>
Real frobenius_value(const Tensor<Real>& m);

/// Compares autograd against central differences for a scalar function.
///
/// `x` is perturbed in place (handles alias storage, so x may be a model
/// parameter that `f` reads indirectly). Returns
/// max_i |analytic_i - numeric_i| / (|analytic_i| + abs_floor).
template <class Real>
Real finite_difference_check(const std::function<Tensor<Real>(const Tensor<Real>&)>& f,
                             Tensor<Real> x, Real h, Real abs_floor = Real(1e-6));

}  // namespace trimllm
