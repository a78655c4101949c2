#pragma once

#include <cstdint>

#include "mecasa/ops.hpp"
#include "mecasa/params.hpp"

namespace mecasa::attention {

/// Learnable weights of one convolutional additive self-attention unit on a
/// C-channel feature map. Every shape depends on C only.
struct CasaParams {
  Tensor q_weight, q_bias;  // [C,C,1,1], [C]
  Tensor k_weight, k_bias;
  Tensor v_weight, v_bias;
  Tensor spatial_weight, spatial_bias;  // depthwise [C,1,3,3], [C]
  Tensor channel_weight, channel_bias;  // [C,C,1,1], [C] on the pooled vector
  Tensor gamma_weight, gamma_bias;      // [C,C,1,1], [C]

  static CasaParams zeros(std::size_t channels);
  static CasaParams init(std::size_t channels, Rng& rng);

  std::size_t channels() const { return q_weight.dim(0); }
  /// Stable declaration order; used by checkpoints and optimizers.
  ParamList named_parameters(const std::string& prefix = "") const;
};

struct Qkv {
  Tensor q, k, v;
};

/// Three independent pointwise projections of x [B,C,H,W].
Qkv project_qkv(const Tensor& x, const CasaParams& p);

/// S(x) = x * sigmoid(depthwise3x3(x)).
Tensor spatial_attention(const Tensor& x, const CasaParams& p);

/// C(x) = x * sigmoid(pointwise(global_avg_pool(x))), one gate per channel.
Tensor channel_attention(const Tensor& x, const CasaParams& p);

/// Phi(x) = C(S(x)). The same Phi is applied to Q and K.
Tensor context_map(const Tensor& x, const CasaParams& p);

/// O = Gamma(Phi(Q) + Phi(K)) * V.
///
/// The product with V is elementwise. A matrix product over tokens would
/// cost O(N^2); the elementwise form keeps every intermediate at N*C
/// elements and the whole unit linear in the token count N = H*W.
Tensor casa_forward(const Tensor& x, const CasaParams& p);

/// Reference softmax attention softmax(Q K^T / sqrt(d)) V on [N,d] inputs.
/// Not part of the model; used for complexity comparison and as an oracle.
Tensor softmax_attention(const Tensor& q, const Tensor& k, const Tensor& v);

enum class AttentionKind { casa, softmax };

/// Analytic count of elementary operations (multiply-accumulates plus
/// elementwise evaluations) for one forward pass over N tokens of width d,
/// batch 1. Matches what OpCounter records, up to skipped padding taps.
///   casa:    4*N*d^2 + 16*N*d + 2*N*d*k^2 + 2*d^2 + 4*d   (k = 3)
///   softmax: 2*N^2*d + 2*N^2 + N*d
std::uint64_t flop_count(AttentionKind kind, std::uint64_t tokens, std::uint64_t dim);

/// Smallest N at which softmax attention costs more than CASA for width d.
std::uint64_t flop_crossover(std::uint64_t dim);

}  // namespace mecasa::attention
