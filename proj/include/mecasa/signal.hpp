#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace mecasa::signal {

enum class Modality { eeg, fnirs_raw, fnirs_od, fnirs_hbt };

std::string to_string(Modality m);
Modality parse_modality(const std::string& text);

struct ChannelMeta {
  std::string label;
  double wavelength_nm = 0.0;  // fNIRS only
  int site = -1;               // source-detector pair; fNIRS only
};

/// Multichannel time series, row-major channels x samples.
struct SignalRecording {
  std::size_t channels = 0;
  std::size_t samples = 0;
  std::vector<double> data;
  double fs = 0.0;
  Modality modality = Modality::eeg;
  std::vector<ChannelMeta> channel_meta;

  std::span<const double> channel(std::size_t c) const { return {data.data() + c * samples, samples}; }
  std::span<double> channel(std::size_t c) { return {data.data() + c * samples, samples}; }
  double duration() const { return static_cast<double>(samples) / fs; }

  /// Throws std::invalid_argument on fs <= 0, empty data, size mismatch,
  /// non-finite values, or non-positive raw fNIRS intensity.
  void validate() const;
};

// --- filtering -------------------------------------------------------------

/// One second-order section, transposed direct form II, a0 normalized to 1.
struct Biquad {
  double b0, b1, b2, a1, a2;
};

std::vector<Biquad> butterworth_lowpass(int order, double cutoff_hz, double fs);
std::vector<Biquad> butterworth_highpass(int order, double cutoff_hz, double fs);
/// High-pass at `lo` cascaded with low-pass at `hi`, each of the given order.
std::vector<Biquad> butterworth_bandpass(int order, double lo_hz, double hi_hz, double fs);

/// Causal filtering with steady-state initial conditions scaled by x[0].
std::vector<double> sosfilt(std::span<const Biquad> sections, std::span<const double> x);
/// Zero-phase forward-backward filtering with odd-extension padding.
std::vector<double> sosfiltfilt(std::span<const Biquad> sections, std::span<const double> x, std::size_t padlen);

/// Zero-phase 4th-order Butterworth band-pass (0.5-45 Hz by default).
/// Throws if fs <= 2*hi.
SignalRecording bandpass_filter(const SignalRecording& rec, double lo_hz = 0.5, double hi_hz = 45.0, int order = 4);

// --- resampling ------------------------------------------------------------

/// Windowed-sinc (Kaiser) resampling of a single channel. The kernel
/// cutoff sits at 0.45 * min(fs_in, fs_out), so downsampling is anti-aliased
/// and upsampling is band-limited. Output length is round(n * fs_out / fs_in).
std::vector<double> resample_signal(std::span<const double> x, double fs_in, double fs_out);
SignalRecording resample(const SignalRecording& rec, double fs_out);

// --- fNIRS -----------------------------------------------------------------

/// OD(t) = -log10(I(t) / mean(I)) per channel.
SignalRecording to_optical_density(const SignalRecording& raw);

/// Constants of the modified Beer-Lambert law for a two-wavelength device.
struct MbllConfig {
  std::array<double, 2> wavelengths_nm{760.0, 850.0};
  /// extinction[w][0] = HbO, extinction[w][1] = HbR, in cm^-1 / (mol/L),
  /// decadic. Defaults are standard tabulated values at 760 and 850 nm.
  std::array<std::array<double, 2>, 2> extinction{{{1486.5865, 3843.707}, {2526.391, 1798.643}}};
  double distance_cm = 3.0;
  std::array<double, 2> dpf{6.0, 6.0};
};

struct Hemoglobin {
  std::vector<int> sites;
  std::size_t samples = 0;
  std::vector<double> hbo;  // sites x samples, mol/L
  std::vector<double> hbr;
};

/// Solves dOD_w = (e_w,HbO dHbO + e_w,HbR dHbR) * d * DPF_w per site.
Hemoglobin mbll_solve(const SignalRecording& od, const MbllConfig& config);
/// Forward model of mbll_solve: OD channels (site-major, wavelength order of
/// `config`) from concentration changes.
SignalRecording mbll_forward(const Hemoglobin& hb, double fs, const MbllConfig& config);
/// HbT = HbO + HbR per site, halving the channel count.
SignalRecording mbll_to_hbt(const SignalRecording& od, const MbllConfig& config);

// --- epoching --------------------------------------------------------------

enum Label : int { kRest = 0, kTask = 1 };

struct Interval {
  double start_s = 0.0;
  double end_s = 0.0;
  int label = kRest;
  int trial = -1;
};

struct Epoch {
  std::size_t channels = 0;
  std::size_t window = 0;
  std::vector<double> data;  // (1, channels, window) flattened
  int label = kRest;
  int subject_id = 0;
  int trial_id = -1;
};

/// Number of windows of length w stepping by s that fit in l samples.
std::size_t epoch_count(std::size_t l, std::size_t w, std::size_t s);

/// Cuts fixed-length windows from every labelled interval, in interval
/// order. Intervals shorter than the window yield no epochs (logged).
std::vector<Epoch> epoch_signal(const SignalRecording& rec, std::span<const Interval> intervals,
                                double window_s = 1.0, double step_s = 0.5, int subject_id = 0);

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

/// Per-channel mean and population std over the selected epochs.
/// `epochs` holds n x channels x window values.
ChannelStats compute_channel_stats(std::span<const double> epochs, std::size_t channels, std::size_t window,
                                   std::span<const std::size_t> indices);

/// In-place z-score with a std floor of 1e-8.
void standardize(std::span<double> epochs, std::size_t channels, std::size_t window, const ChannelStats& stats);

}  // namespace mecasa::signal
