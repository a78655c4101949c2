#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "mecasa/backbone.hpp"
#include "mecasa/fusion.hpp"
#include "mecasa/signal.hpp"

namespace mecasa::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

/// Named float64 tensors plus a JSON header.
///
/// Stored as `<stem>.json` (header, tensor index) and `<stem>.bin`
/// (little-endian float64, tensors concatenated in index order).
struct Bundle {
  json header;
  ParamList tensors;

  const Tensor& at(const std::string& name) const;
};

void save_bundle(const fs::path& stem, const json& header, const ParamList& tensors);
Bundle load_bundle(const fs::path& stem);

json to_json(const model::BackboneConfig& c);
model::BackboneConfig backbone_config_from_json(const json& j);
json to_json(const model::FusionConfig& c);
model::FusionConfig fusion_config_from_json(const json& j);
json to_json(const signal::ChannelStats& s);
signal::ChannelStats channel_stats_from_json(const json& j);

/// A trained backbone with the per-channel statistics it was trained on.
struct BackboneCheckpoint {
  model::BackboneConfig config;
  model::BackboneParams params;
  signal::ChannelStats stats;
  json meta;  // modality, representation, fold, partition, run config
};

void save_backbone(const fs::path& stem, const model::Backbone& model, const signal::ChannelStats& stats,
                   const json& meta);
/// Throws if the stored tensors disagree with the stored configuration.
BackboneCheckpoint load_backbone(const fs::path& stem);

/// Cached pooled features of one split: [count, dim] row-major.
struct FeatureCache {
  std::string modality;
  std::string split;
  std::size_t count = 0;
  std::size_t dim = 0;
  std::vector<double> values;
  std::vector<int> labels;
};

void save_features(const fs::path& stem, const FeatureCache& cache);
FeatureCache load_features(const fs::path& stem);

}  // namespace mecasa::io
