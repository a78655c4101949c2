#include "mecasa/checkpoint.hpp"

#include <fstream>

#include "mecasa/data.hpp"

namespace mecasa::io {

namespace {

fs::path with_suffix(const fs::path& stem, const char* ext) {
  fs::path p = stem;
  p += ext;
  return p;
}

}  // namespace

const Tensor& Bundle::at(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.tensor;
  throw std::out_of_range("bundle has no tensor '" + name + "'");
}

void save_bundle(const fs::path& stem, const json& header, const ParamList& tensors) {
  json index = json::array();
  std::vector<double> flat;
  for (const auto& t : tensors) {
    index.push_back({{"name", t.name}, {"shape", t.tensor.shape()}, {"offset", flat.size()}});
    flat.insert(flat.end(), t.tensor.data().begin(), t.tensor.data().end());
  }
  json doc = header;
  doc["tensors"] = index;
  doc["dtype"] = "float64";
  doc["byte_order"] = "little";
  doc["payload"] = with_suffix(stem, ".bin").filename().string();
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
  data::write_f64_le(with_suffix(stem, ".bin"), flat);
  std::ofstream out(with_suffix(stem, ".json"), std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + with_suffix(stem, ".json").string());
  out << doc.dump(2) << '\n';
}

Bundle load_bundle(const fs::path& stem) {
  const fs::path jpath = with_suffix(stem, ".json");
  std::ifstream in(jpath);
  if (!in) throw std::runtime_error("missing checkpoint header " + jpath.string());
  Bundle b;
  try {
    b.header = json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument(jpath.string() + ": " + e.what());
  }
  const fs::path bpath = jpath.parent_path() / b.header.at("payload").get<std::string>();
  if (!fs::exists(bpath)) throw std::runtime_error("missing checkpoint payload " + bpath.string());
  const auto flat = data::read_f64_le(bpath);
  for (const auto& t : b.header.at("tensors")) {
    const auto shape = t.at("shape").get<Shape>();
    const auto offset = t.at("offset").get<std::size_t>();
    const std::size_t n = numel(shape);
    if (offset + n > flat.size())
      throw std::invalid_argument(bpath.string() + ": tensor '" + t.at("name").get<std::string>() +
                                  "' extends past the payload");
    b.tensors.push_back({t.at("name").get<std::string>(),
                         Tensor(shape, std::vector<double>(flat.begin() + static_cast<std::ptrdiff_t>(offset),
                                                           flat.begin() + static_cast<std::ptrdiff_t>(offset + n)))});
  }
  b.header.erase("tensors");
  return b;
}

json to_json(const model::BackboneConfig& c) {
  return {{"in_channels", c.in_channels},
          {"input_height", c.input_height},
          {"input_width", c.input_width},
          {"stage_dims", c.stage_dims},
          {"blocks_per_stage", c.blocks_per_stage},
          {"mlp_ratio", c.mlp_ratio},
          {"num_classes", c.num_classes}};
}

model::BackboneConfig backbone_config_from_json(const json& j) {
  model::BackboneConfig c;
  c.in_channels = j.at("in_channels").get<std::size_t>();
  c.input_height = j.at("input_height").get<std::size_t>();
  c.input_width = j.at("input_width").get<std::size_t>();
  c.stage_dims = j.at("stage_dims").get<std::vector<std::size_t>>();
  c.blocks_per_stage = j.at("blocks_per_stage").get<std::vector<std::size_t>>();
  c.mlp_ratio = j.at("mlp_ratio").get<double>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.validate();
  return c;
}

json to_json(const model::FusionConfig& c) {
  return {{"d_eeg", c.d_eeg}, {"d_fnirs", c.d_fnirs}, {"hidden", c.hidden}, {"num_classes", c.num_classes}};
}

model::FusionConfig fusion_config_from_json(const json& j) {
  model::FusionConfig c;
  c.d_eeg = j.at("d_eeg").get<std::size_t>();
  c.d_fnirs = j.at("d_fnirs").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.validate();
  return c;
}

json to_json(const signal::ChannelStats& s) { return {{"mean", s.mean}, {"std", s.stddev}}; }

signal::ChannelStats channel_stats_from_json(const json& j) {
  return {j.at("mean").get<std::vector<double>>(), j.at("std").get<std::vector<double>>()};
}

void save_backbone(const fs::path& stem, const model::Backbone& model, const signal::ChannelStats& stats,
                   const json& meta) {
  json header = {{"kind", "mecasa-backbone"},
                 {"version", 1},
                 {"config", to_json(model.config())},
                 {"channel_stats", to_json(stats)},
                 {"meta", meta}};
  save_bundle(stem, header, model.parameters());
}

BackboneCheckpoint load_backbone(const fs::path& stem) {
  Bundle b = load_bundle(stem);
  if (b.header.value("kind", std::string()) != "mecasa-backbone")
    throw std::invalid_argument(stem.string() + ": not a backbone checkpoint");
  BackboneCheckpoint ck;
  try {
    ck.config = backbone_config_from_json(b.header.at("config"));
    ck.stats = channel_stats_from_json(b.header.at("channel_stats"));
    ck.meta = b.header.value("meta", json::object());
  } catch (const json::exception& e) {
    throw std::invalid_argument(stem.string() + ": " + e.what());
  }
  Rng unused(0);
  ck.params = model::BackboneParams::init(ck.config, unused);
  const auto named = ck.params.named_parameters();
  if (named.size() != b.tensors.size())
    throw std::invalid_argument(stem.string() + ": checkpoint holds " + std::to_string(b.tensors.size()) +
                                " tensors, configuration expects " + std::to_string(named.size()));
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto& stored = b.tensors[i];
    if (stored.name != named[i].name || stored.tensor.shape() != named[i].tensor.shape())
      throw ShapeError(stem.string() + ": tensor " + std::to_string(i) + " is '" + stored.name + "' " +
                       to_string(stored.tensor.shape()) + ", expected '" + named[i].name + "' " +
                       to_string(named[i].tensor.shape()));
    Tensor dst = named[i].tensor;
    std::copy(stored.tensor.data().begin(), stored.tensor.data().end(), dst.mutable_data().begin());
  }
  model::audit_parameters(ck.config, ck.params);
  return ck;
}

void save_features(const fs::path& stem, const FeatureCache& cache) {
  if (cache.values.size() != cache.count * cache.dim || cache.labels.size() != cache.count)
    throw ShapeError("feature cache: values/labels disagree with count x dim");
  json header = {{"kind", "mecasa-features"},
                 {"modality", cache.modality},
                 {"split", cache.split},
                 {"count", cache.count},
                 {"dim", cache.dim},
                 {"labels", cache.labels}};
  save_bundle(stem, header, {{"features", Tensor({cache.count, cache.dim}, cache.values)}});
}

FeatureCache load_features(const fs::path& stem) {
  Bundle b = load_bundle(stem);
  if (b.header.value("kind", std::string()) != "mecasa-features")
    throw std::invalid_argument(stem.string() + ": not a feature cache");
  FeatureCache c;
  c.modality = b.header.at("modality").get<std::string>();
  c.split = b.header.at("split").get<std::string>();
  c.count = b.header.at("count").get<std::size_t>();
  c.dim = b.header.at("dim").get<std::size_t>();
  c.labels = b.header.at("labels").get<std::vector<int>>();
  const Tensor& t = b.at("features");
  if (t.shape() != Shape{c.count, c.dim}) throw ShapeError(stem.string() + ": feature tensor shape mismatch");
  c.values.assign(t.data().begin(), t.data().end());
  return c;
}

}  // namespace mecasa::io
