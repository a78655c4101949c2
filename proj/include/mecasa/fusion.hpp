#pragma once

#include "mecasa/model.hpp"
#include "mecasa/ops.hpp"

namespace mecasa::model {

struct FusionConfig {
  std::size_t d_eeg = 128;
  std::size_t d_fnirs = 128;
  std::size_t hidden = 64;
  std::size_t num_classes = 2;

  void validate() const;
  bool operator==(const FusionConfig&) const = default;
};

struct FusionParams {
  Tensor fc1_weight, fc1_bias;  // [hidden, d_eeg + d_fnirs], [hidden]
  Tensor fc2_weight, fc2_bias;  // [num_classes, hidden], [num_classes]

  static FusionParams init(const FusionConfig& config, Rng& rng);
  static FusionParams zeros(const FusionConfig& config);
  ParamList named_parameters() const;
};

/// fc2(ReLU(fc1(concat(f_eeg, f_fnirs)))). EEG features come first.
Tensor fuse_logits(const Tensor& f_eeg, const Tensor& f_fnirs, const FusionParams& params, const FusionConfig& config);

/// Row-wise class probabilities, softmax over fuse_logits. The binary case
/// uses the same two-way softmax.
Tensor fuse_forward(const Tensor& f_eeg, const Tensor& f_fnirs, const FusionParams& params, const FusionConfig& config);

class FusionHead final : public Classifier {
 public:
  FusionHead(FusionConfig config, FusionParams params);

  Tensor logits(std::span<const Tensor> inputs) const override;
  ParamList parameters() const override { return params_.named_parameters(); }

  const FusionConfig& config() const { return config_; }
  const FusionParams& params() const { return params_; }

 private:
  FusionConfig config_;
  FusionParams params_;
};

}  // namespace mecasa::model
