#include "mecasa/pipeline.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

#include "mecasa/log.hpp"

namespace mecasa::data {

void PipelineConfig::validate() const {
  if (modality != "eeg" && modality != "fnirs")
    throw std::invalid_argument("modality must be eeg or fnirs, got '" + modality + "'");
  if (modality == "fnirs" && representation != "od10" && representation != "hbt" && representation != "od128")
    throw std::invalid_argument("fNIRS representation must be od10, hbt or od128, got '" + representation + "'");
  if (!(window_s > 0.0) || !(step_s > 0.0)) throw std::invalid_argument("epoch window and step must be > 0");
  if (!(eeg_fs > 0.0) || !(od10_fs > 0.0) || !(od128_fs > 0.0))
    throw std::invalid_argument("target sampling rates must be > 0");
}

signal::SignalRecording prepare_signal(const signal::SignalRecording& raw, const PipelineConfig& config) {
  using signal::Modality;
  if (config.modality == "eeg") {
    if (raw.modality != Modality::eeg) throw std::invalid_argument("EEG pipeline needs an EEG recording");
    auto filtered = signal::bandpass_filter(raw, config.band_lo_hz, config.band_hi_hz, config.filter_order);
    return signal::resample(filtered, config.eeg_fs);
  }
  if (raw.modality != Modality::fnirs_raw) throw std::invalid_argument("fNIRS pipeline needs an FNIRS_RAW recording");
  auto od10 = signal::resample(signal::to_optical_density(raw), config.od10_fs);
  if (config.representation == "od10") return od10;
  if (config.representation == "od128") return signal::resample(od10, config.od128_fs);
  return signal::resample(signal::mbll_to_hbt(od10, config.mbll), config.od128_fs);
}

EpochDataset build_epoch_dataset(const std::filesystem::path& raw_root, const PipelineConfig& config) {
  config.validate();
  const auto wanted = config.modality == "eeg" ? signal::Modality::eeg : signal::Modality::fnirs_raw;
  EpochDataset ds;
  ds.modality = config.modality;
  ds.representation = config.dataset_representation();

  std::vector<std::filesystem::path> paths;
  std::vector<RecordingManifest> manifests;
  for (const auto& p : list_manifests(raw_root)) {
    auto m = read_manifest(p);
    if (m.modality != wanted) continue;
    paths.push_back(p);
    manifests.push_back(std::move(m));
  }
  if (paths.empty())
    throw std::invalid_argument(raw_root.string() + ": no " + signal::to_string(wanted) + " recordings found");

  std::vector<std::string> subjects;
  for (const auto& m : manifests) subjects.push_back(m.subject_id);
  std::sort(subjects.begin(), subjects.end());
  subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());

  for (std::size_t i = 0; i < paths.size(); ++i) {
    signal::SignalRecording rec;
    try {
      rec = prepare_signal(load_recording(paths[i]).recording, config);
    } catch (const std::exception& e) {
      throw std::invalid_argument(paths[i].string() + ": " + e.what());
    }
    const int subject = static_cast<int>(
        std::lower_bound(subjects.begin(), subjects.end(), manifests[i].subject_id) - subjects.begin());
    if (ds.fs == 0.0) ds.fs = rec.fs;
    ds.append(signal::epoch_signal(rec, manifests[i].labels, config.window_s, config.step_s, subject));
    log::info("epoched " + paths[i].filename().string() + ": " + std::to_string(ds.size()) + " epochs so far");
  }
  ds.validate();
  return ds;
}

}  // namespace mecasa::data
