#include "mecasa/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace mecasa {

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, Tensor x, double eps) {
  auto xs = x.mutable_data();
  std::vector<double> g(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double orig = xs[i];
    xs[i] = orig + eps;
    const double up = f(x);
    xs[i] = orig - eps;
    const double down = f(x);
    xs[i] = orig;
    g[i] = (up - down) / (2.0 * eps);
  }
  return Tensor(x.shape(), std::move(g));
}

double relative_error(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("relative_error: length mismatch");
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
  }
  return scale == 0.0 ? 0.0 : diff / scale;
}

GradCheckResult check_gradients(const std::function<Tensor()>& loss, const std::vector<Tensor>& wrt, double eps) {
  std::vector<bool> saved;
  for (Tensor t : wrt) {
    saved.push_back(t.requires_grad());
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tape tape;
  {
    TapeScope scope(tape);
    for (const auto& t : wrt) tape.watch(t);
    tape.backward(loss());
  }
  GradCheckResult result;
  for (Tensor t : wrt) {
    const Tensor analytic = t.grad_tensor();
    const Tensor numeric = finite_diff_grad([&](const Tensor&) { return loss().item(); }, t, eps);
    result.max_relative_error = std::max(result.max_relative_error, relative_error(analytic.data(), numeric.data()));
    ++result.tensors_checked;
  }
  for (std::size_t i = 0; i < wrt.size(); ++i) {
    Tensor t = wrt[i];
    t.zero_grad();
    t.set_requires_grad(saved[i]);
  }
  return result;
}

}  // namespace mecasa
