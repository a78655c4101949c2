#include "mecasa/casa.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mecasa::attention {

namespace {

constexpr std::size_t kSpatialKernel = 3;

void require_feature_map(const Tensor& x, std::size_t channels, const char* what) {
  if (!x.defined() || x.rank() != 4)
    throw ShapeError(std::string(what) + ": expected [B,C,H,W] input");
  if (x.dim(1) != channels)
    throw ShapeError(std::string(what) + ": channel axis (1) is " + std::to_string(x.dim(1)) +
                     ", parameters expect " + std::to_string(channels));
}

Tensor pointwise(const Tensor& x, const Tensor& w, const Tensor& b) { return conv2d(x, w, b); }

}  // namespace

CasaParams CasaParams::zeros(std::size_t c) {
  CasaParams p;
  p.q_weight = Tensor::zeros({c, c, 1, 1});
  p.q_bias = Tensor::zeros({c});
  p.k_weight = Tensor::zeros({c, c, 1, 1});
  p.k_bias = Tensor::zeros({c});
  p.v_weight = Tensor::zeros({c, c, 1, 1});
  p.v_bias = Tensor::zeros({c});
  p.spatial_weight = Tensor::zeros({c, 1, kSpatialKernel, kSpatialKernel});
  p.spatial_bias = Tensor::zeros({c});
  p.channel_weight = Tensor::zeros({c, c, 1, 1});
  p.channel_bias = Tensor::zeros({c});
  p.gamma_weight = Tensor::zeros({c, c, 1, 1});
  p.gamma_bias = Tensor::zeros({c});
  return p;
}

CasaParams CasaParams::init(std::size_t c, Rng& rng) {
  CasaParams p = zeros(c);
  p.q_weight = fan_in_uniform({c, c, 1, 1}, c, rng);
  p.k_weight = fan_in_uniform({c, c, 1, 1}, c, rng);
  p.v_weight = fan_in_uniform({c, c, 1, 1}, c, rng);
  p.spatial_weight = fan_in_uniform({c, 1, kSpatialKernel, kSpatialKernel}, kSpatialKernel * kSpatialKernel, rng);
  p.channel_weight = fan_in_uniform({c, c, 1, 1}, c, rng);
  p.gamma_weight = fan_in_uniform({c, c, 1, 1}, c, rng);
  return p;
}

ParamList CasaParams::named_parameters(const std::string& prefix) const {
  return {
      {prefix + "q.weight", q_weight},
      {prefix + "q.bias", q_bias},
      {prefix + "k.weight", k_weight},
      {prefix + "k.bias", k_bias},
      {prefix + "v.weight", v_weight},
      {prefix + "v.bias", v_bias},
      {prefix + "spatial.weight", spatial_weight},
      {prefix + "spatial.bias", spatial_bias},
      {prefix + "channel.weight", channel_weight},
      {prefix + "channel.bias", channel_bias},
      {prefix + "gamma.weight", gamma_weight},
      {prefix + "gamma.bias", gamma_bias},
  };
}

Qkv project_qkv(const Tensor& x, const CasaParams& p) {
  require_feature_map(x, p.channels(), "project_qkv");
  return {pointwise(x, p.q_weight, p.q_bias), pointwise(x, p.k_weight, p.k_bias),
          pointwise(x, p.v_weight, p.v_bias)};
}

Tensor spatial_attention(const Tensor& x, const CasaParams& p) {
  require_feature_map(x, p.channels(), "spatial_attention");
  const Conv2dOptions dw{.stride = 1, .padding = kSpatialKernel / 2, .groups = p.channels()};
  return mul(x, sigmoid(conv2d(x, p.spatial_weight, p.spatial_bias, dw)));
}

Tensor channel_attention(const Tensor& x, const CasaParams& p) {
  require_feature_map(x, p.channels(), "channel_attention");
  const std::size_t batch = x.dim(0), c = x.dim(1);
  Tensor pooled = reshape(global_avg_pool(x), {batch, c, 1, 1});
  Tensor gate = sigmoid(pointwise(pooled, p.channel_weight, p.channel_bias));
  return mul(x, gate);
}

Tensor context_map(const Tensor& x, const CasaParams& p) { return channel_attention(spatial_attention(x, p), p); }

Tensor casa_forward(const Tensor& x, const CasaParams& p) {
  const Qkv qkv = project_qkv(x, p);
  Tensor similarity = add(context_map(qkv.q, p), context_map(qkv.k, p));
  Tensor context = pointwise(similarity, p.gamma_weight, p.gamma_bias);
  return mul(context, qkv.v);
}

Tensor softmax_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  for (const Tensor* t : {&q, &k, &v})
    if (!t->defined() || t->rank() != 2) throw ShapeError("softmax_attention: inputs must be [N,d]");
  const std::size_t n = q.dim(0), d = q.dim(1);
  if (k.dim(0) != n || v.dim(0) != n) throw ShapeError("softmax_attention: token axis (0) mismatch");
  if (k.dim(1) != d || v.dim(1) != d) throw ShapeError("softmax_attention: feature axis (1) mismatch");
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  auto qd = q.data();
  auto kd = k.data();
  auto vd = v.data();
  std::vector<double> out(n * d, 0.0);
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* qi = qd.data() + i * d;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      const double* kj = kd.data() + j * d;
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += qi[c] * kj[c];
      scores[j] = s * inv_sqrt_d;
      mx = std::max(mx, scores[j]);
    }
    double z = 0.0;
    double* oi = out.data() + i * d;
    for (std::size_t j = 0; j < n; ++j) {
      const double w = std::exp(scores[j] - mx);
      z += w;
      const double* vj = vd.data() + j * d;
      for (std::size_t c = 0; c < d; ++c) oi[c] += w * vj[c];
    }
    const double inv_z = 1.0 / z;
    for (std::size_t c = 0; c < d; ++c) oi[c] *= inv_z;
  }
  detail::count_ops(2 * n * n * d + 2 * n * n + n * d);
  return Tensor({n, d}, std::move(out));
}

std::uint64_t flop_count(AttentionKind kind, std::uint64_t n, std::uint64_t d) {
  if (n == 0 || d == 0) throw std::invalid_argument("flop_count: N and d must be >= 1");
  if (kind == AttentionKind::softmax) return 2 * n * n * d + 2 * n * n + n * d;
  constexpr std::uint64_t k2 = kSpatialKernel * kSpatialKernel;
  return 4 * n * d * d + 16 * n * d + 2 * n * d * k2 + 2 * d * d + 4 * d;
}

std::uint64_t flop_crossover(std::uint64_t d) {
  std::uint64_t lo = 1, hi = 1;
  while (flop_count(AttentionKind::softmax, hi, d) <= flop_count(AttentionKind::casa, hi, d)) hi *= 2;
  while (lo < hi) {
    const std::uint64_t mid = lo + (hi - lo) / 2;
    if (flop_count(AttentionKind::softmax, mid, d) > flop_count(AttentionKind::casa, mid, d))
      hi = mid;
    else
      lo = mid + 1;
  }
  return lo;
}

}  // namespace mecasa::attention
