#pragma once

#include <string>
#include <vector>

#include "mecasa/casa.hpp"
#include "mecasa/model.hpp"

namespace mecasa::model {

/// Architecture hyperparameters of the MECASA encoder.
struct BackboneConfig {
  std::size_t in_channels = 1;
  std::size_t input_height = 21;  // electrode / channel axis
  std::size_t input_width = 128;  // time samples
  std::vector<std::size_t> stage_dims{16, 32};
  std::vector<std::size_t> blocks_per_stage{2, 2};
  double mlp_ratio = 2.0;
  std::size_t num_classes = 2;

  void validate() const;
  std::size_t feature_dim() const { return stage_dims.back(); }
  std::size_t mlp_hidden(std::size_t channels) const;

  bool operator==(const BackboneConfig&) const = default;
};

/// "64-128" -> {64, 128}.
std::vector<std::size_t> parse_stage_dims(const std::string& text);
std::string format_stage_dims(const std::vector<std::size_t>& dims);

struct ConvParams {
  Tensor weight, bias;
};

struct BlockParams {
  ConvParams dw1, dw2, dw3;  // integration subnet, depthwise 3x3
  attention::CasaParams casa;
  ConvParams mlp1, mlp2;  // pointwise C -> hidden -> C
};

struct BackboneParams {
  ConvParams stem1, stem2;
  std::vector<std::vector<BlockParams>> stages;
  std::vector<ConvParams> patch_embeds;  // one per stage transition
  Tensor head_weight, head_bias;         // [num_classes, C_last], [num_classes]

  static BackboneParams init(const BackboneConfig& config, Rng& rng);
  ParamList named_parameters() const;
};

/// Expected name and shape of every parameter, in declaration order.
std::vector<std::pair<std::string, Shape>> parameter_layout(const BackboneConfig& config);
/// Throws ShapeError naming the first parameter that disagrees with `config`.
void audit_parameters(const BackboneConfig& config, const BackboneParams& params);

/// Two 3x3 stride-2 convolutions with a ReLU between. x [B,in,Ch,T].
Tensor stem_forward(const Tensor& x, const BackboneParams& params);
/// x + DW3(ReLU(DW2(ReLU(DW1(x))))).
Tensor integration_subnet(const Tensor& x, const BlockParams& block);
/// Integration subnet, then CASA and MLP, each behind a residual shortcut.
Tensor mecasa_block(const Tensor& x, const BlockParams& block);
/// 3x3 stride-2 convolution changing the channel width between stages.
Tensor patch_embed(const Tensor& x, const ConvParams& conv);

struct BackboneOutput {
  Tensor features;                // [B, C_last], pooled, before the head
  Tensor logits;                  // [B, num_classes]
  std::vector<Shape> stage_shapes;  // stem output, then each stage output
};

BackboneOutput backbone_forward(const Tensor& x, const BackboneParams& params, const BackboneConfig& config);

/// Per-sample feature-map shapes [C,H,W] of the stem and each stage output,
/// computed from the convolution shape formula alone.
std::vector<Shape> expected_stage_shapes(const BackboneConfig& config);

class Backbone final : public Classifier {
 public:
  Backbone(BackboneConfig config, BackboneParams params);
  Backbone(BackboneConfig config, Rng& rng);

  Tensor logits(std::span<const Tensor> inputs) const override;
  ParamList parameters() const override { return params_.named_parameters(); }

  BackboneOutput forward(const Tensor& x) const { return backbone_forward(x, params_, config_); }
  const BackboneConfig& config() const { return config_; }
  const BackboneParams& params() const { return params_; }

 private:
  BackboneConfig config_;
  BackboneParams params_;
};

}  // namespace mecasa::model
