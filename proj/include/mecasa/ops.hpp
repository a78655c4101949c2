#pragma once

#include <cstdint>
#include <span>

#include "mecasa/tensor.hpp"

namespace mecasa {

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};

/// Output extent of a convolution along one axis.
std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding);

/// 2-D cross-correlation with zero padding.
/// input [B,Cin,H,W], weight [Cout,Cin/groups,kh,kw], bias [Cout] or undefined.
/// Depthwise convolution is groups == Cin == Cout.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, Conv2dOptions opts = {});

/// input [B,din], weight [dout,din], bias [dout] or undefined.
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

/// max(0, x). The subgradient at 0 is 0.
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// Numerically stable softmax along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis);

/// Elementwise a + b. `b` must have the rank of `a`, each extent equal or 1.
Tensor add(const Tensor& a, const Tensor& b);
/// Elementwise a * b, same broadcasting rule as add().
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

/// Sum of all elements, shape [1].
Tensor sum(const Tensor& x);
/// [B,C,H,W] -> [B,C], mean over H*W.
Tensor global_avg_pool(const Tensor& x);
Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis);
Tensor reshape(const Tensor& x, Shape shape);

/// Mean over the batch of -log softmax(logits)[label]. logits [B,K].
Tensor cross_entropy_loss(const Tensor& logits, std::span<const int> labels);

/// Counts elementary arithmetic performed by the op kernels on this thread
/// while alive: one per multiply-accumulate actually executed (padding taps
/// are skipped, not counted), one per elementwise evaluation.
class OpCounter {
 public:
  OpCounter();
  ~OpCounter();
  OpCounter(const OpCounter&) = delete;
  OpCounter& operator=(const OpCounter&) = delete;

  std::uint64_t count() const;

 private:
  bool previous_enabled_;
  std::uint64_t start_;
};

namespace detail {
void count_ops(std::uint64_t n);
}

}  // namespace mecasa
