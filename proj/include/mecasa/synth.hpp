#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mecasa/signal.hpp"

namespace mecasa::data {

/// Parameters of the synthetic hybrid EEG/fNIRS benchmark.
///
/// Each trial is `rest_s` of rest followed by `task_s` of task. EEG is unit-RMS
/// pink noise per channel; during task a 10 Hz sinusoid of peak amplitude
/// `snr` is added on the first `eeg_informative` channels. fNIRS intensities
/// come from white optical-density noise of std `fnirs_noise_od` plus, on the
/// first `fnirs_informative` sites, a hemodynamic step (HbO up, HbR down by a
/// third) with first-order rise/decay whose 850 nm OD plateau is
/// snr * fnirs_noise_od.
struct SynthConfig {
  std::size_t n_trials = 200;
  std::uint64_t seed = 0;
  double snr = 2.0;
  std::size_t trials_per_session = 10;
  std::size_t subjects = 5;

  double rest_s = 6.0;
  double task_s = 6.0;

  double eeg_fs = 256.0;
  std::size_t eeg_channels = 21;
  std::size_t eeg_informative = 7;
  double burst_hz = 10.0;

  double fnirs_fs = 12.5;
  std::size_t fnirs_sites = 34;
  std::size_t fnirs_informative = 12;
  double fnirs_noise_od = 0.01;
  double hemo_tau_s = 0.3;

  void validate() const;
  double trial_s() const { return rest_s + task_s; }
};

struct SynthSession {
  std::string subject_id;
  std::string session_id;
  signal::SignalRecording eeg;    // EEG, eeg_fs
  signal::SignalRecording fnirs;  // FNIRS_RAW intensities, 34 sites x (760, 850) nm
  std::vector<signal::Interval> intervals;
};

/// Sessions of `trials_per_session` consecutive trials (the last may be
/// shorter). Deterministic in the seed.
std::vector<SynthSession> synth_hybrid_dataset(const SynthConfig& config);

/// Writes every session as an EEG and an FNIRS_RAW recording under `root`.
void write_synth_dataset(const std::filesystem::path& root, const std::vector<SynthSession>& sessions);

/// Extinction-weighted 850 nm OD change of the synthetic task response per
/// mol/L of HbO (HbR moves by -1/3 of it).
double synth_od850_per_hbo();

// --- closed-form oracles on epochs ------------------------------------------

/// Single-bin DFT amplitude 2|X(f)|/N of `x` sampled at `fs`.
double dft_amplitude(std::span<const double> x, double fs, double freq_hz);

/// Task iff the mean 10 Hz amplitude over the informative channels exceeds
/// half the burst amplitude. `epoch` is channels x window.
int eeg_oracle(std::span<const double> epoch, std::size_t window, double fs, const SynthConfig& config);

/// Task iff the mean 850 nm OD over the informative sites is positive. With
/// OD referenced to the session mean, rest sits below zero and task above.
/// `epoch` is an OD epoch, channels site-major (760, 850).
int fnirs_oracle(std::span<const double> epoch, std::size_t window, const SynthConfig& config);

}  // namespace mecasa::data
