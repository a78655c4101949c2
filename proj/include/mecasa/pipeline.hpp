#pragma once

#include <filesystem>
#include <string>

#include "mecasa/data.hpp"
#include "mecasa/signal.hpp"

namespace mecasa::data {

/// Preprocessing settings from raw recordings to model-ready epochs.
///
/// EEG: band-pass, then resample to `eeg_fs`.
/// fNIRS: intensity -> OD, then per representation
///   od10:  resample to `od10_fs`
///   od128: resample to `od10_fs`, then to `od128_fs`
///   hbt:   resample to `od10_fs`, MBLL -> HbT, then resample to `od128_fs`
struct PipelineConfig {
  std::string modality = "eeg";         // eeg | fnirs
  std::string representation = "od128";  // fnirs only: od10 | hbt | od128
  double band_lo_hz = 0.5;
  double band_hi_hz = 45.0;
  int filter_order = 4;
  double eeg_fs = 128.0;
  double od10_fs = 10.0;
  double od128_fs = 128.0;
  double window_s = 1.0;
  double step_s = 0.5;
  signal::MbllConfig mbll;

  void validate() const;
  /// "eeg" for EEG, otherwise the fNIRS representation.
  std::string dataset_representation() const { return modality == "eeg" ? "eeg" : representation; }
};

/// Raw recording -> the configured representation (continuous).
signal::SignalRecording prepare_signal(const signal::SignalRecording& raw, const PipelineConfig& config);

/// Loads every recording of the configured modality under `raw_root`
/// (sorted by manifest path), preprocesses and epochs it. No split is set.
EpochDataset build_epoch_dataset(const std::filesystem::path& raw_root, const PipelineConfig& config);

}  // namespace mecasa::data
