#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mecasa/signal.hpp"

namespace mecasa::data {

namespace fs = std::filesystem;

/// JSON sidecar describing one raw recording payload.
///
/// Payloads are little-endian float32, row-major channels x samples.
/// A dataset root holds manifests/*.json and payloads/*.bin.
struct RecordingManifest {
  std::string subject_id;
  std::string session_id;
  signal::Modality modality = signal::Modality::eeg;
  double fs = 0.0;
  std::size_t channels = 0;
  std::size_t samples = 0;
  std::string dtype = "float32";
  std::string byte_order = "little";
  std::vector<signal::Interval> labels;
  std::string payload;  // relative to the dataset root
  std::vector<signal::ChannelMeta> channel_meta;

  /// Throws std::invalid_argument on any inconsistency that does not need the payload.
  void validate() const;
};

struct LoadedRecording {
  RecordingManifest manifest;
  signal::SignalRecording recording;
};

RecordingManifest read_manifest(const fs::path& manifest_path);
/// Loads and strictly validates a manifest and its payload.
LoadedRecording load_recording(const fs::path& manifest_path);
/// Writes manifests/<session_id>.json and payloads/<session_id>.bin under `root`
/// and returns the manifest path. Values are stored as float32.
fs::path save_recording(const fs::path& root, const signal::SignalRecording& rec, RecordingManifest manifest);

/// Sorted manifest paths under root/manifests.
std::vector<fs::path> list_manifests(const fs::path& root);

struct ValidationIssue {
  fs::path file;
  std::string message;
};

/// Loads every recording under `root`; returns one issue per failing file.
std::vector<ValidationIssue> validate_root(const fs::path& root);

// --- little-endian float I/O ------------------------------------------------

void write_f32_le(const fs::path& path, std::span<const double> values);
std::vector<double> read_f32_le(const fs::path& path);
void write_f64_le(const fs::path& path, std::span<const double> values);
std::vector<double> read_f64_le(const fs::path& path);

// --- epochs and splits --------------------------------------------------------

struct Partition {
  std::vector<std::size_t> train, val, test;
};

struct SplitSpec {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
  std::size_t folds = 0;  // 0: ratio split; k >= 2: k-fold
  std::uint64_t seed = 0;

  void validate() const;
};

/// Class-stratified ratio split. Per class c with n_c epochs, round(train*n_c)
/// go to train and round(val*n_c) to val; the rest go to test. Deterministic
/// in the seed; index lists are sorted.
Partition stratified_holdout(std::span<const int> labels, const SplitSpec& spec);

/// Class-stratified k folds. Each class is shuffled and dealt into contiguous
/// near-equal chunks. Throws if a class has fewer epochs than folds.
std::vector<std::vector<std::size_t>> stratified_folds(std::span<const int> labels, std::size_t k, std::uint64_t seed);

/// Epoched samples of one modality/representation, (1, channels, window) each.
struct EpochDataset {
  std::string modality;        // "eeg" | "fnirs"
  std::string representation;  // "eeg" | "od10" | "hbt" | "od128"
  double fs = 0.0;
  std::size_t channels = 0;
  std::size_t window = 0;
  std::vector<double> data;  // n x channels x window
  std::vector<int> labels;
  std::vector<int> subject_ids;
  std::vector<int> trial_ids;
  std::optional<Partition> split;
  std::vector<std::vector<std::size_t>> folds;

  std::size_t size() const { return labels.size(); }
  std::size_t epoch_numel() const { return channels * window; }
  std::span<const double> epoch(std::size_t i) const { return {data.data() + i * epoch_numel(), epoch_numel()}; }

  void append(const std::vector<signal::Epoch>& epochs);
  void validate() const;
};

/// Fills ds.split (spec.folds == 0) or ds.folds.
void stratified_split(EpochDataset& ds, const SplitSpec& spec);

/// Throws std::logic_error if the partition overlaps or fails to cover [0, n).
void check_partition(const Partition& p, std::size_t n);
void check_folds(const std::vector<std::vector<std::size_t>>& folds, std::size_t n);

/// epochs.json + epochs.bin (float32 LE, n x channels x window) in `dir`.
void save_epochs(const fs::path& dir, const EpochDataset& ds);
EpochDataset load_epochs(const fs::path& dir);

}  // namespace mecasa::data
