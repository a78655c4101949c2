#include "mecasa/fusion.hpp"

namespace mecasa::model {

void FusionConfig::validate() const {
  if (d_eeg == 0 || d_fnirs == 0 || hidden == 0 || num_classes == 0)
    throw std::invalid_argument("fusion config: all dimensions must be >= 1");
}

FusionParams FusionParams::init(const FusionConfig& c, Rng& rng) {
  c.validate();
  const std::size_t din = c.d_eeg + c.d_fnirs;
  return {fan_in_uniform({c.hidden, din}, din, rng), Tensor::zeros({c.hidden}),
          fan_in_uniform({c.num_classes, c.hidden}, c.hidden, rng), Tensor::zeros({c.num_classes})};
}

FusionParams FusionParams::zeros(const FusionConfig& c) {
  c.validate();
  return {Tensor::zeros({c.hidden, c.d_eeg + c.d_fnirs}), Tensor::zeros({c.hidden}),
          Tensor::zeros({c.num_classes, c.hidden}), Tensor::zeros({c.num_classes})};
}

ParamList FusionParams::named_parameters() const {
  return {{"fc1.weight", fc1_weight}, {"fc1.bias", fc1_bias}, {"fc2.weight", fc2_weight}, {"fc2.bias", fc2_bias}};
}

Tensor fuse_logits(const Tensor& f_eeg, const Tensor& f_fnirs, const FusionParams& params, const FusionConfig& config) {
  if (!f_eeg.defined() || !f_fnirs.defined() || f_eeg.rank() != 2 || f_fnirs.rank() != 2)
    throw ShapeError("fusion: features must be [B,d] tensors");
  if (f_eeg.dim(0) != f_fnirs.dim(0))
    throw ShapeError("fusion: batch axis (0) differs, EEG " + std::to_string(f_eeg.dim(0)) + " vs fNIRS " +
                     std::to_string(f_fnirs.dim(0)));
  if (f_eeg.dim(1) != config.d_eeg)
    throw ShapeError("fusion: EEG feature axis (1) is " + std::to_string(f_eeg.dim(1)) + ", config expects " +
                     std::to_string(config.d_eeg));
  if (f_fnirs.dim(1) != config.d_fnirs)
    throw ShapeError("fusion: fNIRS feature axis (1) is " + std::to_string(f_fnirs.dim(1)) + ", config expects " +
                     std::to_string(config.d_fnirs));
  Tensor fused = concat(f_eeg, f_fnirs, 1);
  Tensor hidden = relu(linear(fused, params.fc1_weight, params.fc1_bias));
  return linear(hidden, params.fc2_weight, params.fc2_bias);
}

Tensor fuse_forward(const Tensor& f_eeg, const Tensor& f_fnirs, const FusionParams& params, const FusionConfig& config) {
  return softmax(fuse_logits(f_eeg, f_fnirs, params, config), 1);
}

FusionHead::FusionHead(FusionConfig config, FusionParams params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
}

Tensor FusionHead::logits(std::span<const Tensor> inputs) const {
  if (inputs.size() != 2) throw std::invalid_argument("fusion head takes two input streams (EEG, fNIRS)");
  return fuse_logits(inputs[0], inputs[1], params_, config_);
}

}  // namespace mecasa::model
