#pragma once

#include <span>

#include "mecasa/params.hpp"

namespace mecasa::model {

/// A trainable map from a batch of inputs to class logits [B,K].
///
/// `inputs` holds one batched tensor per input stream (one for a backbone,
/// two for the fusion head).
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual Tensor logits(std::span<const Tensor> inputs) const = 0;
  /// Parameter handles in declaration order. Writes through them update the model.
  virtual ParamList parameters() const = 0;
};

}  // namespace mecasa::model
