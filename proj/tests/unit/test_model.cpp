#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "mecasa/backbone.hpp"
#include "mecasa/casa.hpp"
#include "mecasa/checkpoint.hpp"
#include "mecasa/fusion.hpp"

using namespace mecasa;
namespace fs = std::filesystem;

namespace {

Tensor randn(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = rng.normal();
  return t;
}

model::BackboneConfig config_for(std::size_t h, std::size_t w, const std::string& dims) {
  model::BackboneConfig c;
  c.input_height = h;
  c.input_width = w;
  c.stage_dims = model::parse_stage_dims(dims);
  c.blocks_per_stage.assign(c.stage_dims.size(), 1);
  return c;
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mecasa_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

// --- CASA --------------------------------------------------------------------

TEST(Casa, PreservesShape) {
  Rng rng(1);
  const auto p = attention::CasaParams::init(8, rng);
  const Tensor x = randn({2, 8, 5, 7}, rng);
  EXPECT_EQ(attention::casa_forward(x, p).shape(), x.shape());
}

TEST(Casa, RejectsChannelMismatch) {
  Rng rng(1);
  const auto p = attention::CasaParams::init(8, rng);
  EXPECT_THROW(attention::casa_forward(Tensor({1, 4, 3, 3}), p), ShapeError);
}

TEST(Casa, ZeroParamsGiveZeroOutput) {
  // V = 0 everywhere, so the elementwise product vanishes.
  const auto p = attention::CasaParams::zeros(4);
  Rng rng(2);
  const Tensor y = attention::casa_forward(randn({1, 4, 3, 3}, rng), p);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Casa, ChannelGateOfZeroWeightsHalvesInput) {
  // sigmoid(0) = 0.5 for every channel.
  const auto p = attention::CasaParams::zeros(3);
  Rng rng(3);
  const Tensor x = randn({1, 3, 2, 2}, rng);
  const Tensor y = attention::channel_attention(x, p);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(y[i], 0.5 * x[i], 1e-15);
}

TEST(Casa, SoftmaxAttentionMatchesNaiveOracle) {
  Rng rng(4);
  const std::size_t n = 5, d = 3;
  const Tensor q = randn({n, d}, rng), k = randn({n, d}, rng), v = randn({n, d}, rng);
  const Tensor out = attention::softmax_attention(q, k, v);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> s(n);
    double mx = -1e300, z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += q[i * d + c] * k[j * d + c];
      s[j] = dot / std::sqrt(static_cast<double>(d));
      mx = std::max(mx, s[j]);
    }
    for (auto& e : s) z += (e = std::exp(e - mx));
    for (std::size_t c = 0; c < d; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += s[j] / z * v[j * d + c];
      EXPECT_NEAR(out[i * d + c], acc, 1e-12);
    }
  }
}

TEST(Casa, FlopModelDoublesWithTokens) {
  for (std::uint64_t n : {4096u, 8192u}) {
    const double r = static_cast<double>(attention::flop_count(attention::AttentionKind::casa, 2 * n, 64)) /
                     static_cast<double>(attention::flop_count(attention::AttentionKind::casa, n, 64));
    EXPECT_NEAR(r, 2.0, 0.1);
  }
  const double rs = static_cast<double>(attention::flop_count(attention::AttentionKind::softmax, 8192, 64)) /
                    static_cast<double>(attention::flop_count(attention::AttentionKind::softmax, 4096, 64));
  EXPECT_NEAR(rs, 4.0, 0.1);
}

TEST(Casa, FlopModelMatchesCountedOps) {
  Rng rng(5);
  const std::size_t d = 16;
  const auto p = attention::CasaParams::init(d, rng);
  const Tensor x = randn({1, d, 16, 32}, rng);
  OpCounter counter;
  attention::casa_forward(x, p);
  const double predicted = static_cast<double>(attention::flop_count(attention::AttentionKind::casa, 16 * 32, d));
  const double counted = static_cast<double>(counter.count());
  // Only padding taps of the 3x3 depthwise conv are skipped: border pixels miss
  // some of the 9 taps, at most 2*(16+32) pixels' worth times 3 taps per channel.
  EXPECT_LE(counted, predicted);
  EXPECT_GE(counted, predicted - 2.0 * d * 3.0 * 2 * (16 + 32));
}

TEST(Casa, CrossoverIsWhereSoftmaxBecomesDearer) {
  const auto n = attention::flop_crossover(64);
  using attention::AttentionKind;
  EXPECT_GT(attention::flop_count(AttentionKind::softmax, n, 64), attention::flop_count(AttentionKind::casa, n, 64));
  EXPECT_LE(attention::flop_count(AttentionKind::softmax, n - 1, 64),
            attention::flop_count(AttentionKind::casa, n - 1, 64));
}

// --- backbone ------------------------------------------------------------------

TEST(Backbone, ParsesStageDims) {
  EXPECT_EQ(model::parse_stage_dims("64-128"), (std::vector<std::size_t>{64, 128}));
  EXPECT_EQ(model::parse_stage_dims("48"), (std::vector<std::size_t>{48}));
  EXPECT_THROW(model::parse_stage_dims(""), std::invalid_argument);
  EXPECT_THROW(model::parse_stage_dims("64-0"), std::invalid_argument);
  EXPECT_THROW(model::parse_stage_dims("a-b"), std::invalid_argument);
  EXPECT_EQ(model::format_stage_dims({32, 64}), "32-64");
}

TEST(Backbone, EegStageShapes) {
  // (1,21,128): stem halves twice -> 6x32, the patch embed halves again -> 3x16.
  const auto cfg = config_for(21, 128, "16-32");
  const auto shapes = model::expected_stage_shapes(cfg);
  ASSERT_EQ(shapes.size(), 3u);
  EXPECT_EQ(shapes[0], (Shape{16, 6, 32}));
  EXPECT_EQ(shapes[1], (Shape{16, 6, 32}));
  EXPECT_EQ(shapes[2], (Shape{32, 3, 16}));
}

TEST(Backbone, ForwardMatchesFormulaShapesOnEveryInput) {
  const std::vector<std::pair<std::size_t, std::size_t>> inputs{{21, 128}, {68, 128}, {68, 10}, {34, 128}};
  for (const auto& [h, w] : inputs) {
    const auto cfg = config_for(h, w, "16-32");
    Rng rng(6);
    const model::Backbone net(cfg, rng);
    const auto out = net.forward(Tensor({2, 1, h, w}, 0.1));
    EXPECT_EQ(out.stage_shapes, model::expected_stage_shapes(cfg)) << h << "x" << w;
    EXPECT_EQ(out.features.shape(), (Shape{2, 32}));
    EXPECT_EQ(out.logits.shape(), (Shape{2, 2}));
  }
}

TEST(Backbone, RejectsWrongInputShape) {
  const auto cfg = config_for(21, 128, "16-32");
  Rng rng(7);
  const model::Backbone net(cfg, rng);
  EXPECT_THROW(net.forward(Tensor({1, 1, 20, 128})), ShapeError);
}

TEST(Backbone, AuditCatchesMismatchedParameters) {
  Rng rng(8);
  const auto cfg = config_for(21, 128, "16-32");
  const auto other = config_for(21, 128, "16-24");
  const auto params = model::BackboneParams::init(other, rng);
  EXPECT_THROW(model::audit_parameters(cfg, params), ShapeError);
  EXPECT_NO_THROW(model::audit_parameters(other, params));
}

TEST(Backbone, InitIsSeedDeterministic) {
  const auto cfg = config_for(21, 128, "16-32");
  Rng a(9), b(9);
  const auto pa = model::BackboneParams::init(cfg, a).named_parameters();
  const auto pb = model::BackboneParams::init(cfg, b).named_parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i)
    EXPECT_TRUE(std::equal(pa[i].tensor.data().begin(), pa[i].tensor.data().end(), pb[i].tensor.data().begin()));
}

TEST(Backbone, CheckpointRoundTrip) {
  const auto dir = temp_dir("ckpt");
  const auto cfg = config_for(21, 128, "16-32");
  Rng rng(10);
  const model::Backbone net(cfg, rng);
  signal::ChannelStats stats{std::vector<double>(21, 0.5), std::vector<double>(21, 2.0)};
  io::save_backbone(dir / "m", net, stats, {{"fold", 3}});
  const auto ck = io::load_backbone(dir / "m");
  EXPECT_EQ(ck.config, cfg);
  EXPECT_EQ(ck.meta.at("fold"), 3);
  EXPECT_EQ(ck.stats.stddev, stats.stddev);
  const Tensor x = Tensor({1, 1, 21, 128}, 0.3);
  const Tensor a = net.forward(x).logits;
  const Tensor b = model::Backbone(ck.config, ck.params).forward(x).logits;
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Backbone, CheckpointWithMissingPayloadIsNamed) {
  const auto dir = temp_dir("ckpt_missing");
  const auto cfg = config_for(21, 128, "16-32");
  Rng rng(11);
  io::save_backbone(dir / "m", model::Backbone(cfg, rng), {std::vector<double>(21), std::vector<double>(21, 1.0)},
                    io::json::object());
  fs::remove(dir / "m.bin");
  try {
    io::load_backbone(dir / "m");
    FAIL() << "expected an exception";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("m.bin"), std::string::npos);
  }
}

// --- fusion ----------------------------------------------------------------------

TEST(Fusion, ProbabilitiesSumToOne) {
  model::FusionConfig cfg;
  cfg.d_eeg = 4;
  cfg.d_fnirs = 6;
  Rng rng(12);
  const auto p = model::FusionParams::init(cfg, rng);
  const Tensor probs = model::fuse_forward(randn({5, 4}, rng), randn({5, 6}, rng), p, cfg);
  ASSERT_EQ(probs.shape(), (Shape{5, 2}));
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(probs[2 * i] + probs[2 * i + 1], 1.0, 1e-12);
}

TEST(Fusion, ZeroParamsGiveUniformProbabilities) {
  model::FusionConfig cfg;
  cfg.d_eeg = 2;
  cfg.d_fnirs = 2;
  const auto p = model::FusionParams::zeros(cfg);
  const Tensor probs = model::fuse_forward(Tensor({1, 2}, 3.0), Tensor({1, 2}, -1.0), p, cfg);
  EXPECT_NEAR(probs[0], 0.5, 1e-15);
}

TEST(Fusion, EegFeaturesComeFirst) {
  // fc1 reads only the first input column; the EEG value must be what reaches it.
  model::FusionConfig cfg;
  cfg.d_eeg = 1;
  cfg.d_fnirs = 1;
  cfg.hidden = 1;
  auto p = model::FusionParams::zeros(cfg);
  p.fc1_weight.mutable_data()[0] = 1.0;
  p.fc2_weight.mutable_data()[0] = 1.0;
  const Tensor logits = model::fuse_logits(Tensor({1, 1}, 2.0), Tensor({1, 1}, 7.0), p, cfg);
  EXPECT_EQ(logits[0], 2.0);
}

TEST(Fusion, RejectsDimensionMismatch) {
  model::FusionConfig cfg;
  cfg.d_eeg = 3;
  cfg.d_fnirs = 3;
  const auto p = model::FusionParams::zeros(cfg);
  EXPECT_THROW(model::fuse_logits(Tensor({2, 3}), Tensor({2, 4}), p, cfg), ShapeError);
  EXPECT_THROW(model::fuse_logits(Tensor({2, 3}), Tensor({3, 3}), p, cfg), ShapeError);
}
