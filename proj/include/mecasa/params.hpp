#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mecasa/rng.hpp"
#include "mecasa/tensor.hpp"

namespace mecasa {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

using ParamList = std::vector<NamedTensor>;

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
inline Tensor fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = rng.uniform(-bound, bound);
  return t;
}

inline std::size_t parameter_count(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

inline void set_requires_grad(const ParamList& params, bool value) {
  for (auto p : params) p.tensor.set_requires_grad(value);
}

inline void zero_grad(const ParamList& params) {
  for (auto p : params) p.tensor.zero_grad();
}

}  // namespace mecasa
