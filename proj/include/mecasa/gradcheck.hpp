#pragma once

#include <functional>

#include "mecasa/tensor.hpp"

namespace mecasa {

/// Central-difference gradient of scalar f at x.
///
/// `x` is perturbed in place, one element at a time, and restored before
/// returning, so f may read x directly or through a model that holds it.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, Tensor x, double eps = 1e-5);

/// max|a - b| / max(max|a|, max|b|), or 0 when both are zero.
double relative_error(std::span<const double> a, std::span<const double> b);

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t tensors_checked = 0;
};

/// Compares backward() against finite differences for every tensor in `wrt`.
/// `loss` builds a scalar from the current tensor values; it is run once on a
/// tape for the analytic gradient and then repeatedly without one.
GradCheckResult check_gradients(const std::function<Tensor()>& loss, const std::vector<Tensor>& wrt,
                                double eps = 1e-5);

}  // namespace mecasa
