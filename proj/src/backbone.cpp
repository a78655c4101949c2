#include "mecasa/backbone.hpp"

#include <cmath>
#include <sstream>

namespace mecasa::model {

namespace {

constexpr std::size_t kKernel = 3;
constexpr Conv2dOptions kDownsample{.stride = 2, .padding = 1, .groups = 1};

Conv2dOptions depthwise(std::size_t channels) { return {.stride = 1, .padding = 1, .groups = channels}; }

ConvParams conv_init(std::size_t cout, std::size_t cin_per_group, std::size_t k, Rng& rng) {
  return {fan_in_uniform({cout, cin_per_group, k, k}, cin_per_group * k * k, rng), Tensor::zeros({cout})};
}

BlockParams block_init(std::size_t c, std::size_t hidden, Rng& rng) {
  BlockParams b;
  b.dw1 = conv_init(c, 1, kKernel, rng);
  b.dw2 = conv_init(c, 1, kKernel, rng);
  b.dw3 = conv_init(c, 1, kKernel, rng);
  b.casa = attention::CasaParams::init(c, rng);
  b.mlp1 = conv_init(hidden, c, 1, rng);
  b.mlp2 = conv_init(c, hidden, 1, rng);
  return b;
}

std::string stage_prefix(std::size_t s, std::size_t b) {
  return "stages." + std::to_string(s) + ".blocks." + std::to_string(b) + ".";
}

void push_conv(ParamList& out, const std::string& name, const ConvParams& c) {
  out.push_back({name + ".weight", c.weight});
  out.push_back({name + ".bias", c.bias});
}

}  // namespace

void BackboneConfig::validate() const {
  if (stage_dims.empty()) throw std::invalid_argument("backbone config: stage_dims must not be empty");
  if (stage_dims.size() != blocks_per_stage.size())
    throw std::invalid_argument("backbone config: stage_dims and blocks_per_stage differ in length");
  for (auto d : stage_dims)
    if (d == 0) throw std::invalid_argument("backbone config: stage dims must be >= 1");
  for (auto b : blocks_per_stage)
    if (b == 0) throw std::invalid_argument("backbone config: blocks per stage must be >= 1");
  if (in_channels == 0 || num_classes == 0)
    throw std::invalid_argument("backbone config: in_channels and num_classes must be >= 1");
  if (input_height < 4 || input_width < 4)
    throw std::invalid_argument("backbone config: input must be at least 4x4, got " + std::to_string(input_height) +
                                "x" + std::to_string(input_width));
  if (!(mlp_ratio > 0.0)) throw std::invalid_argument("backbone config: mlp_ratio must be > 0");
}

std::size_t BackboneConfig::mlp_hidden(std::size_t channels) const {
  return static_cast<std::size_t>(std::ceil(mlp_ratio * static_cast<double>(channels)));
}

std::vector<std::size_t> parse_stage_dims(const std::string& text) {
  std::vector<std::size_t> dims;
  if (!text.empty() && text.back() == '-') throw std::invalid_argument("stage dims '" + text + "' must look like 64-128");
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, '-')) {
    if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos)
      throw std::invalid_argument("stage dims '" + text + "' must look like 64-128");
    const auto v = std::stoul(part);
    if (v == 0) throw std::invalid_argument("stage dims '" + text + "' contain a zero");
    dims.push_back(v);
  }
  if (dims.empty()) throw std::invalid_argument("stage dims '" + text + "' are empty");
  return dims;
}

std::string format_stage_dims(const std::vector<std::size_t>& dims) {
  std::string s;
  for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? "-" : "") + std::to_string(dims[i]);
  return s;
}

BackboneParams BackboneParams::init(const BackboneConfig& config, Rng& rng) {
  config.validate();
  BackboneParams p;
  const std::size_t c1 = config.stage_dims.front();
  p.stem1 = conv_init(c1, config.in_channels, kKernel, rng);
  p.stem2 = conv_init(c1, c1, kKernel, rng);
  for (std::size_t s = 0; s < config.stage_dims.size(); ++s) {
    const std::size_t c = config.stage_dims[s];
    std::vector<BlockParams> blocks;
    for (std::size_t b = 0; b < config.blocks_per_stage[s]; ++b)
      blocks.push_back(block_init(c, config.mlp_hidden(c), rng));
    p.stages.push_back(std::move(blocks));
    if (s + 1 < config.stage_dims.size()) p.patch_embeds.push_back(conv_init(config.stage_dims[s + 1], c, kKernel, rng));
  }
  p.head_weight = fan_in_uniform({config.num_classes, config.feature_dim()}, config.feature_dim(), rng);
  p.head_bias = Tensor::zeros({config.num_classes});
  return p;
}

ParamList BackboneParams::named_parameters() const {
  ParamList out;
  push_conv(out, "stem.0", stem1);
  push_conv(out, "stem.1", stem2);
  for (std::size_t s = 0; s < stages.size(); ++s) {
    for (std::size_t b = 0; b < stages[s].size(); ++b) {
      const auto& blk = stages[s][b];
      const std::string pre = stage_prefix(s, b);
      push_conv(out, pre + "integration.0", blk.dw1);
      push_conv(out, pre + "integration.1", blk.dw2);
      push_conv(out, pre + "integration.2", blk.dw3);
      for (auto& np : blk.casa.named_parameters(pre + "casa.")) out.push_back(std::move(np));
      push_conv(out, pre + "mlp.0", blk.mlp1);
      push_conv(out, pre + "mlp.1", blk.mlp2);
    }
    if (s < patch_embeds.size()) push_conv(out, "patch_embed." + std::to_string(s), patch_embeds[s]);
  }
  out.push_back({"head.weight", head_weight});
  out.push_back({"head.bias", head_bias});
  return out;
}

std::vector<std::pair<std::string, Shape>> parameter_layout(const BackboneConfig& config) {
  config.validate();
  std::vector<std::pair<std::string, Shape>> out;
  auto conv = [&](const std::string& name, std::size_t cout, std::size_t cin_g, std::size_t k) {
    out.push_back({name + ".weight", {cout, cin_g, k, k}});
    out.push_back({name + ".bias", {cout}});
  };
  const std::size_t c1 = config.stage_dims.front();
  conv("stem.0", c1, config.in_channels, kKernel);
  conv("stem.1", c1, c1, kKernel);
  for (std::size_t s = 0; s < config.stage_dims.size(); ++s) {
    const std::size_t c = config.stage_dims[s];
    const std::size_t h = config.mlp_hidden(c);
    for (std::size_t b = 0; b < config.blocks_per_stage[s]; ++b) {
      const std::string pre = stage_prefix(s, b);
      for (int i = 0; i < 3; ++i) conv(pre + "integration." + std::to_string(i), c, 1, kKernel);
      for (const char* name : {"q", "k", "v"}) conv(pre + "casa." + name, c, c, 1);
      conv(pre + "casa.spatial", c, 1, kKernel);
      conv(pre + "casa.channel", c, c, 1);
      conv(pre + "casa.gamma", c, c, 1);
      conv(pre + "mlp.0", h, c, 1);
      conv(pre + "mlp.1", c, h, 1);
    }
    if (s + 1 < config.stage_dims.size())
      conv("patch_embed." + std::to_string(s), config.stage_dims[s + 1], c, kKernel);
  }
  out.push_back({"head.weight", {config.num_classes, config.feature_dim()}});
  out.push_back({"head.bias", {config.num_classes}});
  return out;
}

void audit_parameters(const BackboneConfig& config, const BackboneParams& params) {
  const auto layout = parameter_layout(config);
  const auto actual = params.named_parameters();
  if (layout.size() != actual.size())
    throw ShapeError("backbone parameters: expected " + std::to_string(layout.size()) + " tensors, found " +
                     std::to_string(actual.size()));
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (layout[i].first != actual[i].name)
      throw ShapeError("backbone parameter " + std::to_string(i) + ": expected " + layout[i].first + ", found " +
                       actual[i].name);
    if (!actual[i].tensor.defined() || layout[i].second != actual[i].tensor.shape())
      throw ShapeError("backbone parameter " + actual[i].name + ": expected shape " + to_string(layout[i].second) +
                       ", found " + (actual[i].tensor.defined() ? to_string(actual[i].tensor.shape()) : "<undefined>"));
  }
}

Tensor stem_forward(const Tensor& x, const BackboneParams& params) {
  if (!x.defined() || x.rank() != 4) throw ShapeError("stem: expected [B,C,Ch,T] input");
  if (x.dim(2) < 4 || x.dim(3) < 4)
    throw ShapeError("stem: input " + to_string(x.shape()) + " is too small; height and width must be >= 4");
  Tensor h = relu(conv2d(x, params.stem1.weight, params.stem1.bias, kDownsample));
  return conv2d(h, params.stem2.weight, params.stem2.bias, kDownsample);
}

Tensor integration_subnet(const Tensor& x, const BlockParams& block) {
  const auto dw = depthwise(x.dim(1));
  Tensor h = relu(conv2d(x, block.dw1.weight, block.dw1.bias, dw));
  h = relu(conv2d(h, block.dw2.weight, block.dw2.bias, dw));
  h = conv2d(h, block.dw3.weight, block.dw3.bias, dw);
  return add(x, h);
}

Tensor mecasa_block(const Tensor& x, const BlockParams& block) {
  Tensor y1 = integration_subnet(x, block);
  Tensor y2 = add(y1, attention::casa_forward(y1, block.casa));
  Tensor hidden = relu(conv2d(y2, block.mlp1.weight, block.mlp1.bias));
  return add(y2, conv2d(hidden, block.mlp2.weight, block.mlp2.bias));
}

Tensor patch_embed(const Tensor& x, const ConvParams& conv) {
  if (!x.defined() || x.rank() != 4) throw ShapeError("patch_embed: expected [B,C,H,W] input");
  if (x.dim(2) < 2 || x.dim(3) < 2)
    throw ShapeError("patch_embed: input " + to_string(x.shape()) + " is too small; height and width must be >= 2");
  return conv2d(x, conv.weight, conv.bias, kDownsample);
}

BackboneOutput backbone_forward(const Tensor& x, const BackboneParams& params, const BackboneConfig& config) {
  if (!x.defined() || x.rank() != 4) throw ShapeError("backbone: expected [B,C,Ch,T] input");
  if (x.dim(1) != config.in_channels)
    throw ShapeError("backbone: channel axis (1) is " + std::to_string(x.dim(1)) + ", config expects " +
                     std::to_string(config.in_channels));
  if (x.dim(2) != config.input_height)
    throw ShapeError("backbone: height axis (2) is " + std::to_string(x.dim(2)) + ", config expects " +
                     std::to_string(config.input_height));
  if (x.dim(3) != config.input_width)
    throw ShapeError("backbone: width axis (3) is " + std::to_string(x.dim(3)) + ", config expects " +
                     std::to_string(config.input_width));
  BackboneOutput out;
  auto per_sample = [](const Tensor& t) { return Shape(t.shape().begin() + 1, t.shape().end()); };
  Tensor h = stem_forward(x, params);
  out.stage_shapes.push_back(per_sample(h));
  for (std::size_t s = 0; s < params.stages.size(); ++s) {
    if (s > 0) h = patch_embed(h, params.patch_embeds[s - 1]);
    for (const auto& block : params.stages[s]) h = mecasa_block(h, block);
    out.stage_shapes.push_back(per_sample(h));
  }
  out.features = global_avg_pool(h);
  out.logits = linear(out.features, params.head_weight, params.head_bias);
  return out;
}

std::vector<Shape> expected_stage_shapes(const BackboneConfig& config) {
  config.validate();
  auto down = [](std::size_t n) { return conv_out_extent(n, kKernel, 2, 1); };
  std::size_t h = down(down(config.input_height));
  std::size_t w = down(down(config.input_width));
  std::vector<Shape> shapes{{config.stage_dims.front(), h, w}};
  for (std::size_t s = 0; s < config.stage_dims.size(); ++s) {
    if (s > 0) {
      h = down(h);
      w = down(w);
    }
    shapes.push_back({config.stage_dims[s], h, w});
  }
  return shapes;
}

Backbone::Backbone(BackboneConfig config, BackboneParams params)
    : config_(std::move(config)), params_(std::move(params)) {
  audit_parameters(config_, params_);
}

Backbone::Backbone(BackboneConfig config, Rng& rng) : config_(std::move(config)) {
  params_ = BackboneParams::init(config_, rng);
}

Tensor Backbone::logits(std::span<const Tensor> inputs) const {
  if (inputs.size() != 1) throw std::invalid_argument("backbone takes exactly one input stream");
  return forward(inputs[0]).logits;
}

}  // namespace mecasa::model
