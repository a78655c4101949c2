#include "mecasa/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "mecasa/rng.hpp"

namespace mecasa::data {

using json = nlohmann::json;

namespace {

std::string label_name(int label) { return label == signal::kTask ? "TASK" : "REST"; }

int parse_label(const std::string& s) {
  if (s == "REST") return signal::kRest;
  if (s == "TASK") return signal::kTask;
  throw std::invalid_argument("unknown label '" + s + "' (expected REST or TASK)");
}

template <class UInt>
void put_le(std::vector<char>& buf, UInt v) {
  for (std::size_t b = 0; b < sizeof(UInt); ++b) buf.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}

template <class UInt>
UInt get_le(const unsigned char* p) {
  UInt v = 0;
  for (std::size_t b = 0; b < sizeof(UInt); ++b) v |= static_cast<UInt>(p[b]) << (8 * b);
  return v;
}

std::vector<unsigned char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, const std::vector<char>& buf) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json to_json(const RecordingManifest& m) {
  json labels = json::array();
  for (const auto& iv : m.labels)
    labels.push_back({{"start", iv.start_s}, {"end", iv.end_s}, {"label", label_name(iv.label)}, {"trial", iv.trial}});
  json meta = json::array();
  for (const auto& c : m.channel_meta)
    meta.push_back({{"label", c.label}, {"wavelength_nm", c.wavelength_nm}, {"site", c.site}});
  return {{"subject_id", m.subject_id}, {"session_id", m.session_id}, {"modality", signal::to_string(m.modality)},
          {"fs", m.fs},                 {"channels", m.channels},     {"samples", m.samples},
          {"dtype", m.dtype},           {"byte_order", m.byte_order}, {"labels", labels},
          {"payload", m.payload},       {"channel_meta", meta}};
}

RecordingManifest manifest_from_json(const json& j) {
  RecordingManifest m;
  try {
    m.subject_id = j.at("subject_id").get<std::string>();
    m.session_id = j.at("session_id").get<std::string>();
    m.modality = signal::parse_modality(j.at("modality").get<std::string>());
    m.fs = j.at("fs").get<double>();
    m.channels = j.at("channels").get<std::size_t>();
    m.samples = j.at("samples").get<std::size_t>();
    m.dtype = j.at("dtype").get<std::string>();
    m.byte_order = j.at("byte_order").get<std::string>();
    m.payload = j.at("payload").get<std::string>();
    for (const auto& l : j.at("labels"))
      m.labels.push_back({l.at("start").get<double>(), l.at("end").get<double>(),
                          parse_label(l.at("label").get<std::string>()), l.value("trial", -1)});
    if (j.contains("channel_meta"))
      for (const auto& c : j.at("channel_meta"))
        m.channel_meta.push_back({c.value("label", std::string()), c.value("wavelength_nm", 0.0), c.value("site", -1)});
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("manifest: ") + e.what());
  }
  return m;
}

void check_sorted_unique_cover(std::vector<std::size_t> all, std::size_t n, const char* what) {
  std::sort(all.begin(), all.end());
  if (std::adjacent_find(all.begin(), all.end()) != all.end())
    throw std::logic_error(std::string(what) + ": index sets overlap");
  if (all.size() != n || (n > 0 && all.back() != n - 1))
    throw std::logic_error(std::string(what) + ": index sets do not cover all " + std::to_string(n) + " epochs");
}

std::map<int, std::vector<std::size_t>> indices_by_class(std::span<const int> labels) {
  std::map<int, std::vector<std::size_t>> by;
  for (std::size_t i = 0; i < labels.size(); ++i) by[labels[i]].push_back(i);
  return by;
}

}  // namespace

void RecordingManifest::validate() const {
  if (!(fs > 0.0) || !std::isfinite(fs)) throw std::invalid_argument("manifest " + session_id + ": fs must be > 0");
  if (channels == 0 || samples == 0)
    throw std::invalid_argument("manifest " + session_id + ": channels and samples must be >= 1");
  if (dtype != "float32") throw std::invalid_argument("manifest " + session_id + ": unsupported dtype " + dtype);
  if (byte_order != "little")
    throw std::invalid_argument("manifest " + session_id + ": unsupported byte order " + byte_order);
  if (payload.empty()) throw std::invalid_argument("manifest " + session_id + ": missing payload path");
  if (!channel_meta.empty() && channel_meta.size() != channels)
    throw std::invalid_argument("manifest " + session_id + ": channel_meta count differs from channels");
  const double duration = static_cast<double>(samples) / fs;
  for (const auto& iv : labels)
    if (iv.start_s < 0.0 || iv.end_s > duration + 1e-9 || !(iv.start_s < iv.end_s))
      throw std::invalid_argument("manifest " + session_id + ": label interval [" + std::to_string(iv.start_s) + ", " +
                                  std::to_string(iv.end_s) + ") outside [0, " + std::to_string(duration) + "]");
}

void write_f32_le(const fs::path& path, std::span<const double> values) {
  std::vector<char> buf;
  buf.reserve(values.size() * 4);
  for (double v : values) put_le(buf, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  write_bytes(path, buf);
}

std::vector<double> read_f32_le(const fs::path& path) {
  const auto bytes = read_bytes(path);
  if (bytes.size() % 4 != 0) throw std::invalid_argument(path.string() + ": length is not a multiple of 4 bytes");
  std::vector<double> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::bit_cast<float>(get_le<std::uint32_t>(bytes.data() + 4 * i));
  return out;
}

void write_f64_le(const fs::path& path, std::span<const double> values) {
  std::vector<char> buf;
  buf.reserve(values.size() * 8);
  for (double v : values) put_le(buf, std::bit_cast<std::uint64_t>(v));
  write_bytes(path, buf);
}

std::vector<double> read_f64_le(const fs::path& path) {
  const auto bytes = read_bytes(path);
  if (bytes.size() % 8 != 0) throw std::invalid_argument(path.string() + ": length is not a multiple of 8 bytes");
  std::vector<double> out(bytes.size() / 8);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::bit_cast<double>(get_le<std::uint64_t>(bytes.data() + 8 * i));
  return out;
}

RecordingManifest read_manifest(const fs::path& manifest_path) {
  auto m = manifest_from_json(read_json(manifest_path));
  m.validate();
  return m;
}

LoadedRecording load_recording(const fs::path& manifest_path) {
  LoadedRecording out;
  out.manifest = read_manifest(manifest_path);
  const auto& m = out.manifest;
  const fs::path root = manifest_path.parent_path().parent_path();
  const fs::path payload = root / m.payload;
  if (!fs::exists(payload)) throw std::invalid_argument(manifest_path.string() + ": payload " + payload.string() + " not found");
  const auto expected = m.channels * m.samples * 4;
  const auto actual = fs::file_size(payload);
  if (actual != expected)
    throw std::invalid_argument(payload.string() + ": length mismatch, " + std::to_string(actual) +
                                " bytes on disk, manifest declares " + std::to_string(m.channels) + "x" +
                                std::to_string(m.samples) + " float32 = " + std::to_string(expected));
  auto& rec = out.recording;
  rec.data = read_f32_le(payload);
  for (std::size_t i = 0; i < rec.data.size(); ++i)
    if (!std::isfinite(rec.data[i]))
      throw std::invalid_argument(payload.string() + ": non-finite value at channel " + std::to_string(i / m.samples) +
                                  ", sample " + std::to_string(i % m.samples));
  rec.channels = m.channels;
  rec.samples = m.samples;
  rec.fs = m.fs;
  rec.modality = m.modality;
  rec.channel_meta = m.channel_meta;
  rec.validate();
  return out;
}

fs::path save_recording(const fs::path& root, const signal::SignalRecording& rec, RecordingManifest manifest) {
  rec.validate();
  manifest.modality = rec.modality;
  manifest.fs = rec.fs;
  manifest.channels = rec.channels;
  manifest.samples = rec.samples;
  manifest.dtype = "float32";
  manifest.byte_order = "little";
  manifest.channel_meta = rec.channel_meta;
  manifest.payload = "payloads/" + manifest.session_id + ".bin";
  manifest.validate();
  write_f32_le(root / manifest.payload, rec.data);
  const fs::path mpath = root / "manifests" / (manifest.session_id + ".json");
  write_json(mpath, to_json(manifest));
  return mpath;
}

std::vector<fs::path> list_manifests(const fs::path& root) {
  const fs::path dir = root / "manifests";
  if (!fs::is_directory(dir)) throw std::invalid_argument(root.string() + ": no manifests/ directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<ValidationIssue> validate_root(const fs::path& root) {
  std::vector<ValidationIssue> issues;
  for (const auto& p : list_manifests(root)) {
    try {
      load_recording(p);
    } catch (const std::exception& e) {
      issues.push_back({p, e.what()});
    }
  }
  return issues;
}

// ---------------------------------------------------------------------------

void SplitSpec::validate() const {
  if (folds == 1) throw std::invalid_argument("split: k-fold needs k >= 2");
  if (folds == 0) {
    if (train < 0.0 || val < 0.0 || test < 0.0) throw std::invalid_argument("split: ratios must be non-negative");
    if (std::abs(train + val + test - 1.0) > 1e-9) throw std::invalid_argument("split: ratios must sum to 1");
  }
}

Partition stratified_holdout(std::span<const int> labels, const SplitSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  Partition p;
  for (auto& [label, idx] : indices_by_class(labels)) {
    rng.shuffle(idx);
    const double n = static_cast<double>(idx.size());
    const auto n_train = std::min<std::size_t>(idx.size(), static_cast<std::size_t>(std::llround(spec.train * n)));
    const auto n_val = std::min<std::size_t>(idx.size() - n_train, static_cast<std::size_t>(std::llround(spec.val * n)));
    p.train.insert(p.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    p.val.insert(p.val.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                 idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    p.test.insert(p.test.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
  }
  std::sort(p.train.begin(), p.train.end());
  std::sort(p.val.begin(), p.val.end());
  std::sort(p.test.begin(), p.test.end());
  return p;
}

std::vector<std::vector<std::size_t>> stratified_folds(std::span<const int> labels, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("k-fold: k must be >= 2");
  Rng rng(seed);
  std::vector<std::vector<std::size_t>> folds(k);
  for (auto& [label, idx] : indices_by_class(labels)) {
    if (idx.size() < k)
      throw std::invalid_argument("k-fold: class " + std::to_string(label) + " has " + std::to_string(idx.size()) +
                                  " epochs, fewer than " + std::to_string(k) + " folds");
    rng.shuffle(idx);
    for (std::size_t f = 0; f < k; ++f) {
      const std::size_t lo = f * idx.size() / k, hi = (f + 1) * idx.size() / k;
      folds[f].insert(folds[f].end(), idx.begin() + static_cast<std::ptrdiff_t>(lo),
                      idx.begin() + static_cast<std::ptrdiff_t>(hi));
    }
  }
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

void check_partition(const Partition& p, std::size_t n) {
  std::vector<std::size_t> all = p.train;
  all.insert(all.end(), p.val.begin(), p.val.end());
  all.insert(all.end(), p.test.begin(), p.test.end());
  check_sorted_unique_cover(std::move(all), n, "partition");
}

void check_folds(const std::vector<std::vector<std::size_t>>& folds, std::size_t n) {
  std::vector<std::size_t> all;
  for (const auto& f : folds) all.insert(all.end(), f.begin(), f.end());
  check_sorted_unique_cover(std::move(all), n, "folds");
}

void EpochDataset::append(const std::vector<signal::Epoch>& epochs) {
  for (const auto& e : epochs) {
    if (channels == 0 && window == 0) {
      channels = e.channels;
      window = e.window;
    }
    if (e.channels != channels || e.window != window)
      throw std::invalid_argument("epoch dataset: epoch shape (1," + std::to_string(e.channels) + "," +
                                  std::to_string(e.window) + ") differs from (1," + std::to_string(channels) + "," +
                                  std::to_string(window) + ")");
    data.insert(data.end(), e.data.begin(), e.data.end());
    labels.push_back(e.label);
    subject_ids.push_back(e.subject_id);
    trial_ids.push_back(e.trial_id);
  }
}

void EpochDataset::validate() const {
  const std::size_t n = labels.size();
  if (data.size() != n * channels * window)
    throw std::invalid_argument("epoch dataset: data length does not match count x channels x window");
  if (subject_ids.size() != n || trial_ids.size() != n)
    throw std::invalid_argument("epoch dataset: per-epoch metadata length mismatch");
  for (int l : labels)
    if (l != signal::kRest && l != signal::kTask) throw std::invalid_argument("epoch dataset: invalid label");
  if (split) check_partition(*split, n);
  if (!folds.empty()) check_folds(folds, n);
}

void stratified_split(EpochDataset& ds, const SplitSpec& spec) {
  if (spec.folds == 0) {
    ds.split = stratified_holdout(ds.labels, spec);
    check_partition(*ds.split, ds.size());
  } else {
    ds.folds = stratified_folds(ds.labels, spec.folds, spec.seed);
    check_folds(ds.folds, ds.size());
  }
}

void save_epochs(const fs::path& dir, const EpochDataset& ds) {
  ds.validate();
  fs::create_directories(dir);
  write_f32_le(dir / "epochs.bin", ds.data);
  json j = {{"format", "mecasa-epochs"},
            {"version", 1},
            {"modality", ds.modality},
            {"representation", ds.representation},
            {"fs", ds.fs},
            {"shape", {1, ds.channels, ds.window}},
            {"count", ds.size()},
            {"dtype", "float32"},
            {"byte_order", "little"},
            {"payload", "epochs.bin"},
            {"labels", ds.labels},
            {"subject_ids", ds.subject_ids},
            {"trial_ids", ds.trial_ids}};
  if (ds.split) j["split"] = {{"train", ds.split->train}, {"val", ds.split->val}, {"test", ds.split->test}};
  if (!ds.folds.empty()) j["folds"] = ds.folds;
  write_json(dir / "epochs.json", j);
}

EpochDataset load_epochs(const fs::path& dir) {
  const json j = read_json(dir / "epochs.json");
  EpochDataset ds;
  try {
    if (j.at("format").get<std::string>() != "mecasa-epochs")
      throw std::invalid_argument((dir / "epochs.json").string() + ": not an epoch dataset");
    ds.modality = j.at("modality").get<std::string>();
    ds.representation = j.at("representation").get<std::string>();
    ds.fs = j.at("fs").get<double>();
    const auto shape = j.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 3 || shape[0] != 1) throw std::invalid_argument("epoch dataset: shape must be (1, C, W)");
    ds.channels = shape[1];
    ds.window = shape[2];
    ds.labels = j.at("labels").get<std::vector<int>>();
    ds.subject_ids = j.at("subject_ids").get<std::vector<int>>();
    ds.trial_ids = j.at("trial_ids").get<std::vector<int>>();
    if (j.at("count").get<std::size_t>() != ds.labels.size())
      throw std::invalid_argument("epoch dataset: count disagrees with label list");
    if (j.contains("split"))
      ds.split = Partition{j["split"].at("train").get<std::vector<std::size_t>>(),
                           j["split"].at("val").get<std::vector<std::size_t>>(),
                           j["split"].at("test").get<std::vector<std::size_t>>()};
    if (j.contains("folds")) ds.folds = j.at("folds").get<std::vector<std::vector<std::size_t>>>();
  } catch (const json::exception& e) {
    throw std::invalid_argument((dir / "epochs.json").string() + ": " + e.what());
  }
  const fs::path payload = dir / "epochs.bin";
  const auto expected = ds.labels.size() * ds.channels * ds.window * 4;
  if (!fs::exists(payload) || fs::file_size(payload) != expected)
    throw std::invalid_argument(payload.string() + ": length mismatch with epochs.json");
  ds.data = read_f32_le(payload);
  ds.validate();
  return ds;
}

}  // namespace mecasa::data
