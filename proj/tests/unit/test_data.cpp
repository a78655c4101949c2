#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <set>

#include <json.hpp>

#include "mecasa/data.hpp"
#include "mecasa/pipeline.hpp"
#include "mecasa/synth.hpp"

using namespace mecasa;
using namespace mecasa::data;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mecasa_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

signal::SignalRecording small_eeg() {
  signal::SignalRecording r;
  r.channels = 2;
  r.samples = 8;
  r.fs = 4.0;
  r.data = {0.5, -1.25, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15.5};
  return r;
}

RecordingManifest manifest_for(const std::string& session) {
  RecordingManifest m;
  m.subject_id = "sub-01";
  m.session_id = session;
  m.labels = {{0.0, 1.0, signal::kRest, 0}, {1.0, 2.0, signal::kTask, 0}};
  return m;
}

std::vector<int> balanced_labels(std::size_t n) {
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % 2);
  return labels;
}

std::size_t count_label(const std::vector<std::size_t>& idx, const std::vector<int>& labels, int label) {
  return static_cast<std::size_t>(std::count_if(idx.begin(), idx.end(), [&](auto i) { return labels[i] == label; }));
}

void edit_manifest(const fs::path& path, const std::function<void(nlohmann::json&)>& edit) {
  nlohmann::json j;
  {
    std::ifstream in(path);
    j = nlohmann::json::parse(in);
  }
  edit(j);
  std::ofstream(path) << j.dump();
}

}  // namespace

// --- raw recording I/O ------------------------------------------------------

TEST(RecordingIo, RoundTrip) {
  const auto root = temp_dir("io_roundtrip");
  const auto rec = small_eeg();
  const auto path = save_recording(root, rec, manifest_for("s1"));
  const auto loaded = load_recording(path);
  EXPECT_EQ(loaded.recording.channels, 2u);
  EXPECT_EQ(loaded.recording.samples, 8u);
  EXPECT_EQ(loaded.recording.fs, 4.0);
  EXPECT_EQ(loaded.recording.data, rec.data);  // values are exact in float32
  ASSERT_EQ(loaded.manifest.labels.size(), 2u);
  EXPECT_EQ(loaded.manifest.labels[1].label, signal::kTask);
  EXPECT_EQ(loaded.manifest.subject_id, "sub-01");
}

TEST(RecordingIo, TruncatedPayloadReportsBothSizes) {
  const auto root = temp_dir("io_truncated");
  const auto path = save_recording(root, small_eeg(), manifest_for("s1"));
  fs::resize_file(root / "payloads" / "s1.bin", 60);
  try {
    load_recording(path);
    FAIL() << "expected an exception";
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("60"), std::string::npos) << msg;
    EXPECT_NE(msg.find("64"), std::string::npos) << msg;
  }
}

TEST(RecordingIo, ZeroSamplingRateRejected) {
  const auto root = temp_dir("io_fs0");
  const auto path = save_recording(root, small_eeg(), manifest_for("s1"));
  edit_manifest(path, [](auto& j) { j["fs"] = 0.0; });
  EXPECT_THROW(load_recording(path), std::invalid_argument);
}

TEST(RecordingIo, NanInPayloadNamesChannel) {
  const auto root = temp_dir("io_nan");
  auto rec = small_eeg();
  const auto path = save_recording(root, rec, manifest_for("s1"));
  rec.data[10] = std::nan("");
  write_f32_le(root / "payloads" / "s1.bin", rec.data);
  try {
    load_recording(path);
    FAIL() << "expected an exception";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("channel 1"), std::string::npos) << e.what();
  }
}

TEST(RecordingIo, LabelOutsideRecordingRejected) {
  const auto root = temp_dir("io_label");
  auto m = manifest_for("s1");
  m.labels.push_back({1.5, 3.0, signal::kTask, 1});
  EXPECT_THROW(save_recording(root, small_eeg(), m), std::invalid_argument);
}

TEST(RecordingIo, ValidateRootListsEveryBadFile) {
  const auto root = temp_dir("io_validate");
  save_recording(root, small_eeg(), manifest_for("a"));
  save_recording(root, small_eeg(), manifest_for("b"));
  fs::remove(root / "payloads" / "b.bin");
  const auto issues = validate_root(root);
  ASSERT_EQ(issues.size(), 1u);
  EXPECT_EQ(issues[0].file.filename(), "b.json");
}

TEST(FloatIo, LittleEndianBytes) {
  const auto dir = temp_dir("io_le");
  write_f32_le(dir / "x.bin", std::vector<double>{1.0});
  std::ifstream in(dir / "x.bin", std::ios::binary);
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  // 1.0f = 0x3F800000
  EXPECT_EQ(b[0], 0x00);
  EXPECT_EQ(b[2], 0x80);
  EXPECT_EQ(b[3], 0x3F);
  write_f64_le(dir / "y.bin", std::vector<double>{0.1, -2.5});
  EXPECT_EQ(read_f64_le(dir / "y.bin"), (std::vector<double>{0.1, -2.5}));
}

// --- splits ---------------------------------------------------------------------

TEST(Split, HoldoutSizesOnThousandEpochs) {
  const auto labels = balanced_labels(1000);
  const auto p = stratified_holdout(labels, SplitSpec{});
  EXPECT_EQ(p.train.size(), 700u);
  EXPECT_EQ(p.val.size(), 150u);
  EXPECT_EQ(p.test.size(), 150u);
  EXPECT_NO_THROW(check_partition(p, 1000));
  for (const auto* part : {&p.train, &p.val, &p.test})
    EXPECT_EQ(count_label(*part, labels, 0), part->size() / 2);
}

TEST(Split, HoldoutIsClassBalancedForUnevenClasses) {
  std::vector<int> labels(300, 0);
  std::fill(labels.begin(), labels.begin() + 100, 1);
  const auto p = stratified_holdout(labels, SplitSpec{});
  EXPECT_EQ(count_label(p.train, labels, 1), 70u);
  EXPECT_EQ(count_label(p.train, labels, 0), 140u);
  EXPECT_EQ(count_label(p.val, labels, 1), 15u);
  EXPECT_EQ(count_label(p.test, labels, 0), 30u);
}

TEST(Split, HoldoutIsSeedDeterministic) {
  const auto labels = balanced_labels(200);
  SplitSpec a, b;
  a.seed = b.seed = 5;
  EXPECT_EQ(stratified_holdout(labels, a).test, stratified_holdout(labels, b).test);
  b.seed = 6;
  EXPECT_NE(stratified_holdout(labels, a).test, stratified_holdout(labels, b).test);
}

TEST(Split, FoldsCoverDisjointBalanced) {
  const auto labels = balanced_labels(1000);
  const auto folds = stratified_folds(labels, 5, 1);
  ASSERT_EQ(folds.size(), 5u);
  EXPECT_NO_THROW(check_folds(folds, 1000));
  for (const auto& f : folds) {
    EXPECT_EQ(f.size(), 200u);
    EXPECT_EQ(count_label(f, labels, 1), 100u);
  }
}

TEST(Split, FoldsNeedEnoughEpochsPerClass) {
  const std::vector<int> labels{0, 0, 0, 0, 0, 1, 1, 1};
  EXPECT_THROW(stratified_folds(labels, 5, 0), std::invalid_argument);
}

TEST(Split, SpecValidation) {
  SplitSpec s;
  s.folds = 1;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = SplitSpec{};
  s.train = 0.8;
  EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(Split, CheckPartitionCatchesOverlapAndGaps) {
  EXPECT_THROW(check_partition({{0, 1}, {1}, {2}}, 3), std::logic_error);
  EXPECT_THROW(check_partition({{0}, {1}, {}}, 3), std::logic_error);
  EXPECT_NO_THROW(check_partition({{0}, {1}, {2}}, 3));
}

// --- epoch datasets -----------------------------------------------------------------

TEST(Epochs, SaveLoadRoundTrip) {
  const auto dir = temp_dir("epochs_rt");
  EpochDataset ds;
  ds.modality = "eeg";
  ds.representation = "eeg";
  ds.fs = 128.0;
  ds.channels = 2;
  ds.window = 3;
  for (int i = 0; i < 20; ++i) {
    signal::Epoch e;
    e.channels = 2;
    e.window = 3;
    e.data.assign(6, 0.25 * i);
    e.label = i % 2;
    e.subject_id = i % 3;
    e.trial_id = i / 2;
    ds.append({e});
  }
  stratified_split(ds, SplitSpec{});
  SplitSpec k;
  k.folds = 5;
  stratified_split(ds, k);
  save_epochs(dir, ds);
  const auto back = load_epochs(dir);
  EXPECT_EQ(back.data, ds.data);
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_EQ(back.subject_ids, ds.subject_ids);
  EXPECT_EQ(back.trial_ids, ds.trial_ids);
  ASSERT_TRUE(back.split);
  EXPECT_EQ(back.split->test, ds.split->test);
  EXPECT_EQ(back.folds, ds.folds);
}

TEST(Epochs, AppendRejectsShapeChange) {
  EpochDataset ds;
  ds.channels = 2;
  ds.window = 3;
  signal::Epoch e;
  e.channels = 2;
  e.window = 4;
  e.data.assign(8, 0.0);
  EXPECT_THROW(ds.append({e}), std::invalid_argument);
}

// --- synthetic data and pipeline --------------------------------------------------------

class SynthPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    for (double snr : {2.0, 0.0}) {
      SynthConfig c;
      c.n_trials = 40;
      c.seed = 11;
      c.snr = snr;
      const fs::path root = temp_dir(snr > 0 ? "synth_snr2" : "synth_snr0");
      write_synth_dataset(root, synth_hybrid_dataset(c));
      roots().push_back(root);
    }
  }
  static std::vector<fs::path>& roots() {
    static std::vector<fs::path> r;
    return r;
  }
  static EpochDataset build(std::size_t which, const std::string& modality, const std::string& repr) {
    PipelineConfig p;
    p.modality = modality;
    p.representation = repr;
    return build_epoch_dataset(roots()[which], p);
  }
  static double oracle_accuracy(const EpochDataset& ds) {
    SynthConfig c;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const int y = ds.modality == "eeg" ? eeg_oracle(ds.epoch(i), ds.window, ds.fs, c)
                                         : fnirs_oracle(ds.epoch(i), ds.window, c);
      hits += y == ds.labels[i];
    }
    return static_cast<double>(hits) / static_cast<double>(ds.size());
  }
};

TEST_F(SynthPipeline, EegEpochShape) {
  const auto ds = build(0, "eeg", "od128");
  EXPECT_EQ(ds.channels, 21u);
  EXPECT_EQ(ds.window, 128u);
  EXPECT_EQ(ds.representation, "eeg");
  // 40 trials x (11 rest + 11 task) epochs
  EXPECT_EQ(ds.size(), 40u * 22);
}

TEST_F(SynthPipeline, FnirsRepresentationShapes) {
  const auto od128 = build(0, "fnirs", "od128");
  EXPECT_EQ(od128.channels, 68u);
  EXPECT_EQ(od128.window, 128u);
  const auto od10 = build(0, "fnirs", "od10");
  EXPECT_EQ(od10.channels, 68u);
  EXPECT_EQ(od10.window, 10u);
  const auto hbt = build(0, "fnirs", "hbt");
  EXPECT_EQ(hbt.channels, 34u);
  EXPECT_EQ(hbt.window, 128u);
  EXPECT_EQ(od128.labels, hbt.labels);
  EXPECT_EQ(od128.trial_ids, od10.trial_ids);
}

TEST_F(SynthPipeline, ModalitiesAreAligned) {
  const auto eeg = build(0, "eeg", "od128");
  const auto fn = build(0, "fnirs", "od128");
  EXPECT_EQ(eeg.labels, fn.labels);
  EXPECT_EQ(eeg.trial_ids, fn.trial_ids);
  EXPECT_EQ(eeg.subject_ids, fn.subject_ids);
  EXPECT_EQ(std::set<int>(eeg.subject_ids.begin(), eeg.subject_ids.end()).size(), 4u);
}

TEST_F(SynthPipeline, OraclesSeparateAtSnrTwo) {
  EXPECT_GE(oracle_accuracy(build(0, "eeg", "od128")), 0.95);
  EXPECT_GE(oracle_accuracy(build(0, "fnirs", "od128")), 0.95);
  EXPECT_GE(oracle_accuracy(build(0, "fnirs", "od10")), 0.95);
}

TEST_F(SynthPipeline, OraclesAtChanceForSnrZero) {
  EXPECT_NEAR(oracle_accuracy(build(1, "eeg", "od128")), 0.5, 0.05);
  EXPECT_NEAR(oracle_accuracy(build(1, "fnirs", "od128")), 0.5, 0.05);
}

TEST(Synth, SameSeedSameData) {
  SynthConfig c;
  c.n_trials = 10;
  c.seed = 3;
  const auto a = synth_hybrid_dataset(c), b = synth_hybrid_dataset(c);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0].eeg.data, b[0].eeg.data);
  EXPECT_EQ(a[0].fnirs.data, b[0].fnirs.data);
  c.seed = 4;
  EXPECT_NE(synth_hybrid_dataset(c)[0].eeg.data, a[0].eeg.data);
}

TEST(Synth, TrialLayout) {
  SynthConfig c;
  c.n_trials = 20;
  const auto s = synth_hybrid_dataset(c);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[1].intervals.size(), 20u);
  EXPECT_EQ(s[1].intervals[0].trial, 10);
  EXPECT_EQ(s[1].intervals[1].label, signal::kTask);
  EXPECT_DOUBLE_EQ(s[0].eeg.duration(), 120.0);
  EXPECT_EQ(s[0].fnirs.channels, 68u);
  EXPECT_EQ(s[0].eeg.channels, 21u);
}

TEST(Synth, DftAmplitudeOfPureTone) {
  std::vector<double> x(128);
  for (std::size_t i = 0; i < 128; ++i) x[i] = 1.5 * std::sin(2 * std::numbers::pi * 10.0 * i / 128.0 + 0.3);
  EXPECT_NEAR(dft_amplitude(x, 128.0, 10.0), 1.5, 1e-12);
}

TEST(Pipeline, ConfigValidation) {
  PipelineConfig p;
  p.modality = "meg";
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = PipelineConfig{};
  p.modality = "fnirs";
  p.representation = "hbo";
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p.representation = "hbt";
  EXPECT_NO_THROW(p.validate());
}
