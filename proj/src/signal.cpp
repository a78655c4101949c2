#include "mecasa/signal.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <stdexcept>

#include "mecasa/log.hpp"

namespace mecasa::signal {

namespace {

constexpr double kPi = std::numbers::pi;

Biquad rbj_section(bool highpass, double f0, double fs, double q) {
  const double w0 = 2.0 * kPi * f0 / fs;
  const double cw = std::cos(w0);
  const double alpha = std::sin(w0) / (2.0 * q);
  const double a0 = 1.0 + alpha;
  Biquad s{};
  if (highpass) {
    s.b0 = (1.0 + cw) / 2.0 / a0;
    s.b1 = -(1.0 + cw) / a0;
  } else {
    s.b0 = (1.0 - cw) / 2.0 / a0;
    s.b1 = (1.0 - cw) / a0;
  }
  s.b2 = s.b0;
  s.a1 = -2.0 * cw / a0;
  s.a2 = (1.0 - alpha) / a0;
  return s;
}

std::vector<Biquad> butterworth(bool highpass, int order, double cutoff, double fs) {
  if (order <= 0 || order % 2 != 0) throw std::invalid_argument("butterworth: order must be a positive even number");
  if (!(cutoff > 0.0) || !(cutoff < fs / 2.0))
    throw std::invalid_argument("butterworth: cutoff " + std::to_string(cutoff) + " Hz must lie in (0, fs/2) for fs " +
                                std::to_string(fs));
  std::vector<Biquad> out;
  for (int k = 1; k <= order / 2; ++k) {
    const double q = 1.0 / (2.0 * std::cos((2.0 * k - 1.0) * kPi / (2.0 * order)));
    out.push_back(rbj_section(highpass, cutoff, fs, q));
  }
  return out;
}

double dc_gain(const Biquad& s) { return (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2); }

double bessel_i0(double x) {
  double sum = 1.0, term = 1.0;
  const double q = x * x / 4.0;
  for (int k = 1; k < 200; ++k) {
    term *= q / (static_cast<double>(k) * k);
    sum += term;
    if (term < sum * 1e-17) break;
  }
  return sum;
}

/// Kaiser-windowed sinc sampled on a fine grid of zero-crossing units.
class SincTable {
 public:
  static constexpr double kHalfZeros = 28.8;  // 32 low-rate samples at cutoff 0.45
  static constexpr double kBeta = 8.6;
  static constexpr int kPerZero = 2048;

  SincTable() {
    const int n = static_cast<int>(std::ceil(kHalfZeros * kPerZero)) + 2;
    table_.resize(n);
    const double i0b = bessel_i0(kBeta);
    for (int i = 0; i < n; ++i) {
      const double u = static_cast<double>(i) / kPerZero;
      if (u >= kHalfZeros) {
        table_[i] = 0.0;
        continue;
      }
      const double r = u / kHalfZeros;
      const double win = bessel_i0(kBeta * std::sqrt(1.0 - r * r)) / i0b;
      const double sinc = u == 0.0 ? 1.0 : std::sin(kPi * u) / (kPi * u);
      table_[i] = sinc * win;
    }
  }

  /// u in zero-crossing units.
  double operator()(double u) const {
    u = std::abs(u);
    if (u >= kHalfZeros) return 0.0;
    const double pos = u * kPerZero;
    const auto i = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(i);
    return table_[i] + frac * (table_[i + 1] - table_[i]);
  }

 private:
  std::vector<double> table_;
};

const SincTable& sinc_table() {
  static const SincTable table;
  return table;
}

/// Odd (point-symmetric) extension about both end samples.
double odd_extended(std::span<const double> x, std::ptrdiff_t i) {
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  if (i < 0) {
    const std::ptrdiff_t j = std::min(-i, n - 1);
    return 2.0 * x[0] - x[j];
  }
  if (i >= n) {
    const std::ptrdiff_t j = std::max<std::ptrdiff_t>(2 * (n - 1) - i, 0);
    return 2.0 * x[n - 1] - x[j];
  }
  return x[i];
}

}  // namespace

std::string to_string(Modality m) {
  switch (m) {
    case Modality::eeg: return "EEG";
    case Modality::fnirs_raw: return "FNIRS_RAW";
    case Modality::fnirs_od: return "FNIRS_OD";
    case Modality::fnirs_hbt: return "FNIRS_HBT";
  }
  return "?";
}

Modality parse_modality(const std::string& text) {
  if (text == "EEG") return Modality::eeg;
  if (text == "FNIRS_RAW") return Modality::fnirs_raw;
  if (text == "FNIRS_OD") return Modality::fnirs_od;
  if (text == "FNIRS_HBT") return Modality::fnirs_hbt;
  throw std::invalid_argument("unknown modality '" + text + "'");
}

void SignalRecording::validate() const {
  if (!(fs > 0.0) || !std::isfinite(fs)) throw std::invalid_argument("recording: sampling rate must be > 0");
  if (channels == 0 || samples == 0) throw std::invalid_argument("recording: needs at least one channel and sample");
  if (data.size() != channels * samples)
    throw std::invalid_argument("recording: data holds " + std::to_string(data.size()) + " values, expected " +
                                std::to_string(channels * samples));
  if (!channel_meta.empty() && channel_meta.size() != channels)
    throw std::invalid_argument("recording: channel metadata count differs from channel count");
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i]))
      throw std::invalid_argument("recording: non-finite value in channel " + std::to_string(i / samples));
    if (modality == Modality::fnirs_raw && data[i] <= 0.0)
      throw std::invalid_argument("recording: non-positive raw intensity in channel " + std::to_string(i / samples));
  }
}

std::vector<Biquad> butterworth_lowpass(int order, double cutoff_hz, double fs) {
  return butterworth(false, order, cutoff_hz, fs);
}

std::vector<Biquad> butterworth_highpass(int order, double cutoff_hz, double fs) {
  return butterworth(true, order, cutoff_hz, fs);
}

std::vector<Biquad> butterworth_bandpass(int order, double lo_hz, double hi_hz, double fs) {
  if (!(lo_hz < hi_hz)) throw std::invalid_argument("band-pass: low edge must be below high edge");
  auto out = butterworth_highpass(order, lo_hz, fs);
  auto lp = butterworth_lowpass(order, hi_hz, fs);
  out.insert(out.end(), lp.begin(), lp.end());
  return out;
}

std::vector<double> sosfilt(std::span<const Biquad> sections, std::span<const double> x) {
  std::vector<double> y(x.begin(), x.end());
  if (y.empty()) return y;
  double step = y[0];
  for (const auto& s : sections) {
    const double g = dc_gain(s);
    const double yss = step * g;
    double z2 = step * s.b2 - s.a2 * yss;
    double z1 = step * s.b1 - s.a1 * yss + z2;
    for (double& v : y) {
      const double in = v;
      const double out = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * out + z2;
      z2 = s.b2 * in - s.a2 * out;
      v = out;
    }
    step = yss;
  }
  return y;
}

std::vector<double> sosfiltfilt(std::span<const Biquad> sections, std::span<const double> x, std::size_t padlen) {
  if (x.empty()) return {};
  padlen = std::min(padlen, x.size() - 1);
  std::vector<double> ext;
  ext.reserve(x.size() + 2 * padlen);
  for (std::size_t i = padlen; i > 0; --i) ext.push_back(odd_extended(x, -static_cast<std::ptrdiff_t>(i)));
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= padlen; ++i)
    ext.push_back(odd_extended(x, static_cast<std::ptrdiff_t>(x.size() - 1 + i)));
  auto fwd = sosfilt(sections, ext);
  std::reverse(fwd.begin(), fwd.end());
  auto bwd = sosfilt(sections, fwd);
  std::reverse(bwd.begin(), bwd.end());
  return {bwd.begin() + static_cast<std::ptrdiff_t>(padlen),
          bwd.begin() + static_cast<std::ptrdiff_t>(padlen + x.size())};
}

SignalRecording bandpass_filter(const SignalRecording& rec, double lo_hz, double hi_hz, int order) {
  if (!(rec.fs > 2.0 * hi_hz))
    throw std::invalid_argument("band-pass: sampling rate " + std::to_string(rec.fs) + " Hz is not above 2 x " +
                                std::to_string(hi_hz) + " Hz (Nyquist)");
  const auto sections = butterworth_bandpass(order, lo_hz, hi_hz, rec.fs);
  const auto padlen = static_cast<std::size_t>(3.0 * std::ceil(rec.fs / lo_hz));
  SignalRecording out = rec;
  for (std::size_t c = 0; c < rec.channels; ++c) {
    const auto y = sosfiltfilt(sections, rec.channel(c), padlen);
    std::copy(y.begin(), y.end(), out.channel(c).begin());
  }
  return out;
}

std::vector<double> resample_signal(std::span<const double> x, double fs_in, double fs_out) {
  if (!(fs_in > 0.0) || !(fs_out > 0.0)) throw std::invalid_argument("resample: sampling rates must be > 0");
  const auto n_out = static_cast<std::size_t>(std::llround(static_cast<double>(x.size()) * fs_out / fs_in));
  if (n_out == 0)
    throw std::invalid_argument("resample: " + std::to_string(x.size()) + " samples at " + std::to_string(fs_in) +
                                " Hz give no output samples at " + std::to_string(fs_out) + " Hz");
  if (fs_in == fs_out) return {x.begin(), x.end()};
  const auto& table = sinc_table();
  const double cutoff = 0.45 * std::min(fs_in, fs_out);
  const double zero_rate = 2.0 * cutoff;  // zero crossings per second
  const double half_width_s = SincTable::kHalfZeros / zero_rate;
  std::vector<double> y(n_out);
  for (std::size_t k = 0; k < n_out; ++k) {
    const double t = static_cast<double>(k) / fs_out;
    const auto lo = static_cast<std::ptrdiff_t>(std::ceil((t - half_width_s) * fs_in));
    const auto hi = static_cast<std::ptrdiff_t>(std::floor((t + half_width_s) * fs_in));
    double acc = 0.0, norm = 0.0;
    for (std::ptrdiff_t n = lo; n <= hi; ++n) {
      const double w = table((t - static_cast<double>(n) / fs_in) * zero_rate);
      acc += w * odd_extended(x, n);
      norm += w;
    }
    y[k] = acc / norm;
  }
  return y;
}

SignalRecording resample(const SignalRecording& rec, double fs_out) {
  SignalRecording out;
  out.fs = fs_out;
  out.modality = rec.modality;
  out.channel_meta = rec.channel_meta;
  out.channels = rec.channels;
  for (std::size_t c = 0; c < rec.channels; ++c) {
    auto y = resample_signal(rec.channel(c), rec.fs, fs_out);
    if (c == 0) {
      out.samples = y.size();
      out.data.reserve(out.samples * rec.channels);
    }
    out.data.insert(out.data.end(), y.begin(), y.end());
  }
  return out;
}

SignalRecording to_optical_density(const SignalRecording& raw) {
  if (raw.modality != Modality::fnirs_raw) throw std::invalid_argument("optical density: input must be FNIRS_RAW");
  SignalRecording od = raw;
  od.modality = Modality::fnirs_od;
  for (std::size_t c = 0; c < raw.channels; ++c) {
    auto in = raw.channel(c);
    double ref = 0.0;
    for (double v : in) {
      if (!(v > 0.0))
        throw std::invalid_argument("optical density: non-positive intensity in channel " + std::to_string(c));
      ref += v;
    }
    ref /= static_cast<double>(in.size());
    auto out = od.channel(c);
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = -std::log10(in[i] / ref);
  }
  return od;
}

namespace {

struct SitePair {
  int site;
  std::array<std::size_t, 2> channel;  // indexed by config wavelength
};

std::vector<SitePair> pair_sites(const SignalRecording& od, const MbllConfig& config) {
  if (od.channel_meta.size() != od.channels)
    throw std::invalid_argument("MBLL: recording lacks per-channel site/wavelength metadata");
  std::map<int, std::array<long, 2>> sites;
  for (std::size_t c = 0; c < od.channels; ++c) {
    const auto& m = od.channel_meta[c];
    int w = -1;
    for (int i = 0; i < 2; ++i)
      if (std::abs(m.wavelength_nm - config.wavelengths_nm[i]) < 0.5) w = i;
    if (w < 0)
      throw std::invalid_argument("MBLL: channel " + std::to_string(c) + " has wavelength " +
                                  std::to_string(m.wavelength_nm) + " nm, not one of the configured pair");
    auto [it, inserted] = sites.try_emplace(m.site, std::array<long, 2>{-1, -1});
    if (it->second[w] != -1)
      throw std::invalid_argument("MBLL: site " + std::to_string(m.site) + " has two channels at the same wavelength");
    it->second[w] = static_cast<long>(c);
  }
  std::vector<SitePair> out;
  for (const auto& [site, ch] : sites) {
    if (ch[0] < 0 || ch[1] < 0) throw std::invalid_argument("MBLL: unpaired channel at site " + std::to_string(site));
    out.push_back({site, {static_cast<std::size_t>(ch[0]), static_cast<std::size_t>(ch[1])}});
  }
  return out;
}

/// Rows: wavelength; columns: (HbO, HbR); entries include path length.
std::array<std::array<double, 2>, 2> path_matrix(const MbllConfig& c) {
  std::array<std::array<double, 2>, 2> m{};
  for (int w = 0; w < 2; ++w)
    for (int h = 0; h < 2; ++h) m[w][h] = c.extinction[w][h] * c.distance_cm * c.dpf[w];
  return m;
}

}  // namespace

Hemoglobin mbll_solve(const SignalRecording& od, const MbllConfig& config) {
  const auto& e = config.extinction;
  const double det_e = e[0][0] * e[1][1] - e[0][1] * e[1][0];
  const double norm1 = std::max(std::abs(e[0][0]) + std::abs(e[1][0]), std::abs(e[0][1]) + std::abs(e[1][1]));
  const double inv_norm1 =
      det_e == 0.0 ? 0.0
                   : std::max(std::abs(e[1][1]) + std::abs(e[1][0]), std::abs(e[0][1]) + std::abs(e[0][0])) /
                         std::abs(det_e);
  if (det_e == 0.0 || norm1 * inv_norm1 > 1e6)
    throw std::invalid_argument("MBLL: extinction matrix is singular or ill-conditioned");
  const auto m = path_matrix(config);
  const double det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
  const auto pairs = pair_sites(od, config);
  Hemoglobin hb;
  hb.samples = od.samples;
  hb.hbo.resize(pairs.size() * od.samples);
  hb.hbr.resize(pairs.size() * od.samples);
  for (std::size_t s = 0; s < pairs.size(); ++s) {
    hb.sites.push_back(pairs[s].site);
    auto a = od.channel(pairs[s].channel[0]);
    auto b = od.channel(pairs[s].channel[1]);
    for (std::size_t t = 0; t < od.samples; ++t) {
      hb.hbo[s * od.samples + t] = (m[1][1] * a[t] - m[0][1] * b[t]) / det;
      hb.hbr[s * od.samples + t] = (m[0][0] * b[t] - m[1][0] * a[t]) / det;
    }
  }
  return hb;
}

SignalRecording mbll_forward(const Hemoglobin& hb, double fs, const MbllConfig& config) {
  const auto m = path_matrix(config);
  SignalRecording od;
  od.fs = fs;
  od.modality = Modality::fnirs_od;
  od.channels = 2 * hb.sites.size();
  od.samples = hb.samples;
  od.data.resize(od.channels * od.samples);
  for (std::size_t s = 0; s < hb.sites.size(); ++s) {
    for (int w = 0; w < 2; ++w) {
      const std::size_t c = 2 * s + static_cast<std::size_t>(w);
      od.channel_meta.push_back({"S" + std::to_string(hb.sites[s]) + " " +
                                     std::to_string(static_cast<int>(config.wavelengths_nm[w])),
                                 config.wavelengths_nm[w], hb.sites[s]});
      auto out = od.channel(c);
      for (std::size_t t = 0; t < hb.samples; ++t)
        out[t] = m[w][0] * hb.hbo[s * hb.samples + t] + m[w][1] * hb.hbr[s * hb.samples + t];
    }
  }
  return od;
}

SignalRecording mbll_to_hbt(const SignalRecording& od, const MbllConfig& config) {
  if (od.modality != Modality::fnirs_od) throw std::invalid_argument("MBLL: input must be FNIRS_OD");
  const Hemoglobin hb = mbll_solve(od, config);
  SignalRecording out;
  out.fs = od.fs;
  out.modality = Modality::fnirs_hbt;
  out.channels = hb.sites.size();
  out.samples = hb.samples;
  out.data.resize(out.channels * out.samples);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = hb.hbo[i] + hb.hbr[i];
  for (int site : hb.sites) out.channel_meta.push_back({"S" + std::to_string(site) + " HbT", 0.0, site});
  return out;
}

std::size_t epoch_count(std::size_t l, std::size_t w, std::size_t s) {
  if (w == 0 || s == 0) throw std::invalid_argument("epoch_count: window and step must be >= 1");
  return l < w ? 0 : (l - w) / s + 1;
}

std::vector<Epoch> epoch_signal(const SignalRecording& rec, std::span<const Interval> intervals, double window_s,
                                double step_s, int subject_id) {
  const auto w = static_cast<std::size_t>(std::llround(window_s * rec.fs));
  const auto s = static_cast<std::size_t>(std::llround(step_s * rec.fs));
  if (w == 0 || s == 0) throw std::invalid_argument("epoching: window and step must span at least one sample");
  std::vector<Epoch> out;
  for (const auto& iv : intervals) {
    const auto start = static_cast<std::size_t>(std::max<long long>(0, std::llround(iv.start_s * rec.fs)));
    const auto end = std::min<std::size_t>(rec.samples, static_cast<std::size_t>(std::llround(iv.end_s * rec.fs)));
    const std::size_t len = end > start ? end - start : 0;
    const std::size_t count = epoch_count(len, w, s);
    if (count == 0) {
      log::warn("epoching: interval [" + std::to_string(iv.start_s) + ", " + std::to_string(iv.end_s) +
                ") s is shorter than the window; no epochs taken");
      continue;
    }
    for (std::size_t e = 0; e < count; ++e) {
      Epoch ep;
      ep.channels = rec.channels;
      ep.window = w;
      ep.label = iv.label;
      ep.subject_id = subject_id;
      ep.trial_id = iv.trial;
      ep.data.resize(rec.channels * w);
      const std::size_t off = start + e * s;
      for (std::size_t c = 0; c < rec.channels; ++c) {
        auto ch = rec.channel(c);
        std::copy_n(ch.begin() + static_cast<std::ptrdiff_t>(off), w, ep.data.begin() + static_cast<std::ptrdiff_t>(c * w));
      }
      out.push_back(std::move(ep));
    }
  }
  return out;
}

ChannelStats compute_channel_stats(std::span<const double> epochs, std::size_t channels, std::size_t window,
                                   std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("channel stats: no epochs selected");
  ChannelStats st{std::vector<double>(channels, 0.0), std::vector<double>(channels, 0.0)};
  const double count = static_cast<double>(indices.size() * window);
  for (std::size_t c = 0; c < channels; ++c) {
    double s = 0.0;
    for (auto i : indices) {
      const double* p = epochs.data() + (i * channels + c) * window;
      for (std::size_t t = 0; t < window; ++t) s += p[t];
    }
    const double mean = s / count;
    double ss = 0.0;
    for (auto i : indices) {
      const double* p = epochs.data() + (i * channels + c) * window;
      for (std::size_t t = 0; t < window; ++t) ss += (p[t] - mean) * (p[t] - mean);
    }
    st.mean[c] = mean;
    st.stddev[c] = std::sqrt(ss / count);
  }
  return st;
}

void standardize(std::span<double> epochs, std::size_t channels, std::size_t window, const ChannelStats& stats) {
  if (stats.mean.size() != channels || stats.stddev.size() != channels)
    throw std::invalid_argument("standardize: statistics cover " + std::to_string(stats.mean.size()) +
                                " channels, data has " + std::to_string(channels));
  const std::size_t n = epochs.size() / (channels * window);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < channels; ++c) {
      const double mu = stats.mean[c];
      const double inv = 1.0 / std::max(stats.stddev[c], 1e-8);
      double* p = epochs.data() + (i * channels + c) * window;
      for (std::size_t t = 0; t < window; ++t) p[t] = (p[t] - mu) * inv;
    }
}

}  // namespace mecasa::signal
