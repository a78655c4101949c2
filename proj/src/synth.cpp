#include "mecasa/synth.hpp"

#include <cmath>
#include <complex>
#include <cstdio>
#include <numbers>
#include <stdexcept>

#include "mecasa/data.hpp"
#include "mecasa/rng.hpp"

namespace mecasa::data {

namespace {

/// Paul Kellet's economy 1/f filter over white Gaussian noise, then zero mean
/// and unit RMS.
void fill_pink(std::span<double> out, Rng& rng) {
  double b0 = 0.0, b1 = 0.0, b2 = 0.0;
  for (auto& v : out) {
    const double w = rng.normal();
    b0 = 0.99765 * b0 + w * 0.0990460;
    b1 = 0.96300 * b1 + w * 0.2965164;
    b2 = 0.57000 * b2 + w * 1.0526913;
    v = b0 + b1 + b2 + w * 0.1848;
  }
  double mean = 0.0;
  for (double v : out) mean += v;
  mean /= static_cast<double>(out.size());
  double ss = 0.0;
  for (auto& v : out) {
    v -= mean;
    ss += v * v;
  }
  const double rms = std::sqrt(ss / static_cast<double>(out.size()));
  for (auto& v : out) v /= rms;
}

std::string two_digit(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%02zu", i);
  return buf;
}

bool in_task(double t, const SynthConfig& c) { return std::fmod(t, c.trial_s()) >= c.rest_s; }

}  // namespace

void SynthConfig::validate() const {
  if (n_trials < 10) throw std::invalid_argument("synth: n_trials must be >= 10");
  if (trials_per_session == 0 || subjects == 0) throw std::invalid_argument("synth: sessions and subjects must be >= 1");
  if (!(snr >= 0.0)) throw std::invalid_argument("synth: snr must be >= 0");
  if (!(rest_s > 0.0) || !(task_s > 0.0)) throw std::invalid_argument("synth: rest and task durations must be > 0");
  if (eeg_informative > eeg_channels) throw std::invalid_argument("synth: more informative EEG channels than channels");
  if (fnirs_informative > fnirs_sites) throw std::invalid_argument("synth: more informative fNIRS sites than sites");
  if (!(eeg_fs > 2.0 * burst_hz) || !(fnirs_fs > 0.0)) throw std::invalid_argument("synth: invalid sampling rates");
}

double synth_od850_per_hbo() {
  const signal::MbllConfig m;
  return (m.extinction[1][0] - m.extinction[1][1] / 3.0) * m.distance_cm * m.dpf[1];
}

std::vector<SynthSession> synth_hybrid_dataset(const SynthConfig& config) {
  config.validate();
  Rng rng(config.seed);
  const signal::MbllConfig mbll;
  const double hbo_amplitude = config.snr * config.fnirs_noise_od / synth_od850_per_hbo();

  std::vector<SynthSession> sessions;
  std::size_t trial = 0;
  for (std::size_t s = 0; trial < config.n_trials; ++s) {
    const std::size_t n = std::min(config.trials_per_session, config.n_trials - trial);
    SynthSession ses;
    const std::size_t subject = s % config.subjects + 1;
    ses.subject_id = "sub-" + two_digit(subject);
    ses.session_id = ses.subject_id + "_ses-" + two_digit(s / config.subjects + 1);
    for (std::size_t k = 0; k < n; ++k) {
      const double t0 = static_cast<double>(k) * config.trial_s();
      const int id = static_cast<int>(trial + k);
      ses.intervals.push_back({t0, t0 + config.rest_s, signal::kRest, id});
      ses.intervals.push_back({t0 + config.rest_s, t0 + config.trial_s(), signal::kTask, id});
    }
    const double duration = static_cast<double>(n) * config.trial_s();

    // EEG
    auto& eeg = ses.eeg;
    eeg.fs = config.eeg_fs;
    eeg.modality = signal::Modality::eeg;
    eeg.channels = config.eeg_channels;
    eeg.samples = static_cast<std::size_t>(std::llround(duration * config.eeg_fs));
    eeg.data.assign(eeg.channels * eeg.samples, 0.0);
    for (std::size_t c = 0; c < eeg.channels; ++c) {
      eeg.channel_meta.push_back({"EEG" + two_digit(c + 1), 0.0, -1});
      fill_pink(eeg.channel(c), rng);
    }
    const double w = 2.0 * std::numbers::pi * config.burst_hz;
    for (std::size_t k = 0; k < n; ++k) {
      const double start = static_cast<double>(k) * config.trial_s() + config.rest_s;
      const auto i0 = static_cast<std::size_t>(std::llround(start * config.eeg_fs));
      const auto i1 = std::min(eeg.samples, static_cast<std::size_t>(std::llround((start + config.task_s) * config.eeg_fs)));
      for (std::size_t c = 0; c < config.eeg_informative; ++c) {
        const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        auto ch = eeg.channel(c);
        for (std::size_t i = i0; i < i1; ++i)
          ch[i] += config.snr * std::sin(w * static_cast<double>(i) / config.eeg_fs + phase);
      }
    }

    // fNIRS: concentration response -> OD -> intensity
    signal::Hemoglobin hb;
    hb.samples = static_cast<std::size_t>(std::llround(duration * config.fnirs_fs));
    hb.hbo.assign(config.fnirs_sites * hb.samples, 0.0);
    hb.hbr.assign(config.fnirs_sites * hb.samples, 0.0);
    for (std::size_t site = 0; site < config.fnirs_sites; ++site) hb.sites.push_back(static_cast<int>(site + 1));
    const double decay = std::exp(-1.0 / (config.fnirs_fs * config.hemo_tau_s));
    double r = 0.0;
    for (std::size_t i = 0; i < hb.samples; ++i) {
      const double target = in_task(static_cast<double>(i) / config.fnirs_fs, config) ? 1.0 : 0.0;
      r = target + (r - target) * decay;
      for (std::size_t site = 0; site < config.fnirs_informative; ++site) {
        hb.hbo[site * hb.samples + i] = hbo_amplitude * r;
        hb.hbr[site * hb.samples + i] = -hbo_amplitude * r / 3.0;
      }
    }
    auto& raw = ses.fnirs;
    raw = signal::mbll_forward(hb, config.fnirs_fs, mbll);
    raw.modality = signal::Modality::fnirs_raw;
    for (std::size_t c = 0; c < raw.channels; ++c) {
      const double i_ref = rng.uniform(0.5, 1.5);
      for (auto& v : raw.channel(c)) v = i_ref * std::pow(10.0, -(v + config.fnirs_noise_od * rng.normal()));
    }
    sessions.push_back(std::move(ses));
    trial += n;
  }
  return sessions;
}

void write_synth_dataset(const std::filesystem::path& root, const std::vector<SynthSession>& sessions) {
  for (const auto& s : sessions) {
    RecordingManifest m;
    m.subject_id = s.subject_id;
    m.labels = s.intervals;
    m.session_id = s.session_id + "_eeg";
    save_recording(root, s.eeg, m);
    m.session_id = s.session_id + "_fnirs";
    save_recording(root, s.fnirs, m);
  }
}

double dft_amplitude(std::span<const double> x, double fs, double freq_hz) {
  std::complex<double> acc = 0.0;
  const double w = -2.0 * std::numbers::pi * freq_hz / fs;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * std::polar(1.0, w * static_cast<double>(i));
  return 2.0 * std::abs(acc) / static_cast<double>(x.size());
}

int eeg_oracle(std::span<const double> epoch, std::size_t window, double fs, const SynthConfig& config) {
  double amp = 0.0;
  for (std::size_t c = 0; c < config.eeg_informative; ++c)
    amp += dft_amplitude(epoch.subspan(c * window, window), fs, config.burst_hz);
  amp /= static_cast<double>(config.eeg_informative);
  return amp > 0.5 * config.snr ? signal::kTask : signal::kRest;
}

int fnirs_oracle(std::span<const double> epoch, std::size_t window, const SynthConfig& config) {
  // OD is referenced to the session mean, so rest sits near -plateau/2 and
  // task near +plateau/2; zero splits them.
  double level = 0.0;
  for (std::size_t site = 0; site < config.fnirs_informative; ++site)
    for (double v : epoch.subspan((2 * site + 1) * window, window)) level += v;
  return level > 0.0 ? signal::kTask : signal::kRest;
}

}  // namespace mecasa::data
