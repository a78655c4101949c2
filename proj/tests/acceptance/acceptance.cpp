// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.

#include <chrono>
#include <cmath>
#include <complex>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mecasa/backbone.hpp"
#include "mecasa/casa.hpp"
#include "mecasa/commands.hpp"
#include "mecasa/fusion.hpp"
#include "mecasa/gradcheck.hpp"
#include "mecasa/signal.hpp"

using namespace mecasa;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const fs::path kWork = MECASA_ACCEPTANCE_DIR;
const std::string kCli = MECASA_CLI_PATH;

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

/// Runs the CLI; stdout/stderr go to kWork/cli.log. Throws on a non-zero exit.
void cli(const std::string& args) {
  const std::string cmd = kCli + " " + args + " >> " + (kWork / "cli.log").string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  if (rc != 0) throw std::runtime_error("command failed (" + std::to_string(rc) + "): mecasa " + args);
}

int cli_status(const std::string& args) {
  const std::string cmd = kCli + " " + args + " >> " + (kWork / "cli.log").string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("missing " + p.string());
  return json::parse(in);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string sci(double v) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(2) << v;
  return os.str();
}

std::string path(const fs::path& p) { return p.string(); }

Tensor randn(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = rng.normal();
  return t;
}

std::vector<Tensor> tensors_of(const ParamList& params) {
  std::vector<Tensor> out;
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

void randomize_biases(const ParamList& params, Rng& rng) {
  for (auto p : params)
    if (p.name.ends_with("bias"))
      for (auto& v : p.tensor.mutable_data()) v = 0.1 * rng.normal();
}

// --- gradient integrity ---------------------------------------------------------

Outcome gradient_integrity() {
  const auto t0 = Clock::now();
  struct Case {
    std::string name;
    double tol;
    std::function<GradCheckResult(Rng&)> run;
  };
  const std::vector<Case> cases{
      {"conv2d", 1e-4,
       [](Rng& rng) {
         Tensor x = randn({2, 3, 6, 7}, rng), w = randn({4, 3, 3, 3}, rng), b = randn({4}, rng);
         Tensor r = randn({2, 4, 3, 4}, rng);
         return check_gradients([&] { return sum(mul(conv2d(x, w, b, {2, 1, 1}), r)); }, {x, w, b});
       }},
      {"depthwise", 1e-4,
       [](Rng& rng) {
         Tensor x = randn({2, 3, 5, 6}, rng), w = randn({3, 1, 3, 3}, rng), b = randn({3}, rng);
         Tensor r = randn({2, 3, 5, 6}, rng);
         return check_gradients([&] { return sum(mul(conv2d(x, w, b, {1, 1, 3}), r)); }, {x, w, b});
       }},
      {"linear", 1e-4,
       [](Rng& rng) {
         Tensor x = randn({4, 5}, rng), w = randn({3, 5}, rng), b = randn({3}, rng), r = randn({4, 3}, rng);
         return check_gradients([&] { return sum(mul(linear(x, w, b), r)); }, {x, w, b});
       }},
      {"sigmoid", 1e-4,
       [](Rng& rng) {
         Tensor x = randn({3, 5}, rng), r = randn({3, 5}, rng);
         return check_gradients([&] { return sum(mul(sigmoid(x), r)); }, {x});
       }},
      {"spatial gate", 1e-4,
       [](Rng& rng) {
         const auto p = attention::CasaParams::init(3, rng);
         Tensor x = randn({2, 3, 4, 5}, rng), r = randn({2, 3, 4, 5}, rng);
         return check_gradients([&] { return sum(mul(attention::spatial_attention(x, p), r)); },
                                {x, p.spatial_weight, p.spatial_bias});
       }},
      {"channel gate", 1e-4,
       [](Rng& rng) {
         const auto p = attention::CasaParams::init(3, rng);
         Tensor x = randn({2, 3, 4, 5}, rng), r = randn({2, 3, 4, 5}, rng);
         return check_gradients([&] { return sum(mul(attention::channel_attention(x, p), r)); },
                                {x, p.channel_weight, p.channel_bias});
       }},
      {"casa", 1e-4,
       [](Rng& rng) {
         const auto p = attention::CasaParams::init(4, rng);
         randomize_biases(p.named_parameters(), rng);
         Tensor x = randn({2, 4, 3, 5}, rng), r = randn({2, 4, 3, 5}, rng);
         auto wrt = tensors_of(p.named_parameters());
         wrt.push_back(x);
         return check_gradients([&] { return sum(mul(attention::casa_forward(x, p), r)); }, wrt);
       }},
      {"mecasa", 1e-3,
       [](Rng& rng) {
         model::BackboneConfig cfg;
         cfg.input_height = 11;
         cfg.input_width = 16;
         cfg.stage_dims = {4, 6};
         cfg.blocks_per_stage = {1, 1};
         const model::Backbone net(cfg, rng);
         randomize_biases(net.parameters(), rng);
         Tensor x = randn({2, 1, 11, 16}, rng);
         const std::vector<int> labels{1, 0};
         auto wrt = tensors_of(net.parameters());
         wrt.push_back(x);
         return check_gradients([&] { return cross_entropy_loss(net.forward(x).logits, labels); }, wrt);
       }},
      {"fusion head", 1e-4,
       [](Rng& rng) {
         model::FusionConfig cfg;
         cfg.d_eeg = 4;
         cfg.d_fnirs = 5;
         cfg.hidden = 6;
         const auto p = model::FusionParams::init(cfg, rng);
         randomize_biases(p.named_parameters(), rng);
         Tensor fe = randn({3, 4}, rng), fn = randn({3, 5}, rng);
         const std::vector<int> labels{0, 1, 1};
         auto wrt = tensors_of(p.named_parameters());
         wrt.push_back(fe);
         wrt.push_back(fn);
         return check_gradients([&] { return cross_entropy_loss(model::fuse_logits(fe, fn, p, cfg), labels); }, wrt);
       }},
  };
  bool ok = true;
  std::string detail;
  Rng rng(2024);
  for (const auto& c : cases) {
    const auto r = c.run(rng);
    const bool pass = r.max_relative_error < c.tol;
    ok = ok && pass;
    std::ostringstream os;
    os << c.name << "=" << std::scientific << std::setprecision(2) << r.max_relative_error << (pass ? "" : "(!)")
       << " ";
    detail += os.str();
  }
  const double secs = since(t0);
  ok = ok && secs < 300.0;
  return {ok, detail + "in " + fmt(secs, 1) + " s (limit 300 s)"};
}

// --- shape contract ------------------------------------------------------------------

Outcome shape_contract() {
  const fs::path dir = kWork / "shapes";
  fs::remove_all(dir);
  cli("synth --trials 10 --seed 3 --out " + path(dir / "raw"));
  struct Input {
    std::string modality, repr;
  };
  std::map<std::string, data::EpochDataset> datasets;
  for (const Input in : {Input{"eeg", ""}, Input{"fnirs", "od10"}, Input{"fnirs", "hbt"}, Input{"fnirs", "od128"}}) {
    const std::string key = in.modality == "eeg" ? "eeg" : in.repr;
    cli("preprocess --data " + path(dir / "raw") + " --modality " + in.modality +
        (in.repr.empty() ? "" : " --repr " + in.repr) + " --out " + path(dir / key));
    datasets[key] = data::load_epochs(dir / key);
  }
  bool ok = datasets["eeg"].channels == 21 && datasets["eeg"].window == 128 && datasets["od128"].channels == 68 &&
            datasets["od128"].window == 128;
  std::string detail = "eeg (1," + std::to_string(datasets["eeg"].channels) + "," +
                       std::to_string(datasets["eeg"].window) + "), od128 (1," +
                       std::to_string(datasets["od128"].channels) + "," + std::to_string(datasets["od128"].window) +
                       ")";

  // dims table cells: EEG and fNIRS (od128); repr table cells: od10/hbt/od128 at 16-32
  std::vector<std::pair<std::string, std::string>> cells;  // dataset key, dims
  cli::RunConfig defaults;
  for (const auto& d : defaults.dims_grid) {
    cells.push_back({"eeg", d});
    cells.push_back({"od128", d});
  }
  for (const auto& r : defaults.repr_grid) cells.push_back({r, "16-32"});
  std::size_t audited = 0;
  for (const auto& [key, dims] : cells) {
    const auto& ds = datasets[key];
    cli::RunConfig c;
    c.dims = dims;
    const auto cfg = cli::backbone_config_for(ds, c);
    Rng rng(0);
    const model::Backbone net(cfg, rng);
    model::audit_parameters(cfg, net.params());
    Tensor x({1, 1, ds.channels, ds.window});
    std::copy(ds.epoch(0).begin(), ds.epoch(0).end(), x.mutable_data().begin());
    const auto out = net.forward(x);
    const bool cell_ok = out.stage_shapes == model::expected_stage_shapes(cfg) &&
                         out.features.shape() == Shape{1, cfg.feature_dim()} && out.logits.shape() == Shape{1, 2};
    if (!cell_ok) detail += "; cell " + key + "/" + dims + " mismatched";
    ok = ok && cell_ok;
    ++audited;
  }
  return {ok, detail + "; " + std::to_string(audited) + " grid cells audited"};
}

// --- CASA complexity ---------------------------------------------------------------

Outcome casa_complexity() {
  const auto t0 = Clock::now();
  const fs::path dir = kWork / "bench";
  fs::remove_all(dir);
  cli("bench --dim 64 --reps 20 --tokens 256 512 1024 2048 4096 8192 --out " + path(dir));
  const json b = read_json(dir / "bench.json");
  const double secs = since(t0);
  using attention::AttentionKind;
  double worst_ratio = 0.0;
  for (std::uint64_t n : {4096u, 8192u, 16384u}) {
    const double r = static_cast<double>(attention::flop_count(AttentionKind::casa, 2 * n, 64)) /
                     static_cast<double>(attention::flop_count(AttentionKind::casa, n, 64));
    worst_ratio = std::max(worst_ratio, std::abs(r - 2.0));
  }
  const double ec = b.at("casa_exponent"), es = b.at("softmax_exponent");
  const double ratio = b.at("casa_flop_ratio_4096");
  const bool ok = std::abs(ratio - 2.0) <= 0.1 && worst_ratio <= 0.1 && ec >= 0.8 && ec <= 1.3 && es >= 1.7 &&
                  es <= 2.3 && secs < 600.0;
  return {ok, "flop ratio casa(8192)/casa(4096)=" + fmt(ratio) + ", casa exponent " + fmt(ec, 3) +
                  " in [0.8,1.3], softmax exponent " + fmt(es, 3) + " in [1.7,2.3], " + fmt(secs, 1) +
                  " s (limit 600 s)"};
}

// --- preprocessing oracles -----------------------------------------------------------

double tone(std::span<const double> x, std::size_t lo, std::size_t hi, double fs, double f) {
  std::complex<double> acc = 0.0;
  for (std::size_t i = lo; i < hi; ++i) acc += x[i] * std::polar(1.0, -2 * std::numbers::pi * f * i / fs);
  return 2.0 * std::abs(acc) / static_cast<double>(hi - lo);
}

Outcome preprocessing_oracles() {
  const double fs = 256.0;
  auto rec_of = [&](const std::function<double(double)>& f) {
    signal::SignalRecording r;
    r.channels = 1;
    r.samples = static_cast<std::size_t>(20 * fs);
    r.fs = fs;
    for (std::size_t i = 0; i < r.samples; ++i) r.data.push_back(f(i / fs));
    return r;
  };
  const std::size_t lo = static_cast<std::size_t>(5 * fs), hi = static_cast<std::size_t>(15 * fs);
  const auto y10 = signal::bandpass_filter(rec_of([](double t) { return std::sin(2 * std::numbers::pi * 10 * t); }));
  const auto y60 = signal::bandpass_filter(rec_of([](double t) { return std::sin(2 * std::numbers::pi * 60 * t); }));
  const auto ydc = signal::bandpass_filter(rec_of([](double) { return 1.0; }));
  const double g10 = tone(y10.data, lo, hi, fs, 10.0), g60 = tone(y60.data, lo, hi, fs, 60.0);
  double dc = 0.0;
  for (std::size_t i = lo; i < hi; ++i) dc = std::max(dc, std::abs(ydc.data[i]));

  signal::SignalRecording r128;
  r128.channels = 1;
  r128.samples = 12 * 128;
  r128.fs = 128.0;
  r128.data.assign(r128.samples, 0.0);
  const std::vector<signal::Interval> trial{{0.0, 12.0, signal::kTask, 0}};
  const std::vector<signal::Interval> half{{0.0, 6.0, signal::kRest, 0}};
  const std::size_t n_trial = signal::epoch_signal(r128, trial).size();
  const std::size_t n_half = signal::epoch_signal(r128, half).size();

  signal::SignalRecording raw;
  raw.channels = 1;
  raw.samples = 3;
  raw.fs = 10.0;
  raw.modality = signal::Modality::fnirs_raw;
  raw.data = {2.0, 20.0, 200.0};
  const auto od = signal::to_optical_density(raw);
  const double mean_i = 74.0;
  const bool od_ok = std::abs(od.data[0] + std::log10(2.0 / mean_i)) < 1e-12 &&
                     std::abs((od.data[0] - od.data[1]) - 1.0) < 1e-12 &&
                     std::abs((od.data[1] - od.data[2]) - 1.0) < 1e-12;

  signal::SignalRecording ods;
  ods.channels = 4;
  ods.samples = 50;
  ods.fs = 10.0;
  ods.modality = signal::Modality::fnirs_od;
  Rng rng(8);
  for (std::size_t i = 0; i < 200; ++i) ods.data.push_back(0.01 * rng.normal());
  ods.channel_meta = {{"a", 760.0, 1}, {"b", 850.0, 1}, {"c", 760.0, 2}, {"d", 850.0, 2}};
  const auto back = signal::mbll_forward(signal::mbll_solve(ods, {}), ods.fs, {});
  double rt = 0.0;
  for (std::size_t i = 0; i < 200; ++i) rt = std::max(rt, std::abs(back.data[i] - ods.data[i]) / std::abs(ods.data[i]));

  const bool ok = g10 >= 0.95 && g60 <= 0.1 && dc <= 1e-3 && n_trial == 23 && n_half == 11 && od_ok && rt < 1e-10;
  return {ok, "gain 10 Hz " + fmt(g10) + " (>=0.95), 60 Hz " + fmt(g60, 5) + " (<=0.1), DC " + sci(dc) + " (<=1e-3); epochs 12 s=" + std::to_string(n_trial) +
                  ", 6 s=" + std::to_string(n_half) + "; OD identities " + (od_ok ? "hold" : "FAIL") +
                  "; MBLL round-trip " + sci(rt) + " (<1e-10)"};
}

// --- learning sanity ---------------------------------------------------------------

constexpr std::size_t kLearnTrials = 200;
constexpr std::size_t kLearnEpochs = 5;
constexpr int kLearnSeed = 7;

double train_accuracy(const fs::path& dir, const std::string& raw, const std::string& modality,
                      const std::string& extra) {
  const std::string ep = path(dir / ("ep_" + modality + "_" + raw));
  cli("preprocess --data " + path(dir / raw) + " --modality " + modality + extra + " --seed " +
      std::to_string(kLearnSeed) + " --out " + ep);
  const fs::path run = dir / ("run_" + modality + "_" + raw);
  cli("train --data " + ep + " --modality " + modality + extra + " --dims 16-32 --epochs " +
      std::to_string(kLearnEpochs) + " --seed " + std::to_string(kLearnSeed) + " --out " + path(run));
  return read_json(run / "report.json").at("accuracy").at("mean").get<double>();
}

/// Label accuracy of matching each test epoch to the train epoch whose
/// opposite half-window correlates best with it. Under an epoch-level split
/// of overlapping windows this measures how much the split itself leaks.
double overlap_oracle(const data::EpochDataset& ds) {
  const auto& s = *ds.split;
  const std::size_t h = ds.window / 2, m = ds.channels * h;
  auto half = [&](std::size_t i, bool second) {
    std::vector<double> v;
    v.reserve(m);
    const auto e = ds.epoch(i);
    for (std::size_t c = 0; c < ds.channels; ++c)
      for (std::size_t t = 0; t < h; ++t) v.push_back(e[c * ds.window + (second ? h : 0) + t]);
    double mean = 0.0, ss = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(m);
    for (double& x : v) ss += (x -= mean) * x;
    for (double& x : v) x /= std::sqrt(ss);
    return v;
  };
  std::vector<std::vector<double>> first, second;
  for (auto i : s.train) {
    first.push_back(half(i, false));
    second.push_back(half(i, true));
  }
  std::size_t hits = 0;
  for (auto i : s.test) {
    const auto a = half(i, false), b = half(i, true);
    double best = -2.0;
    int label = 0;
    for (std::size_t j = 0; j < s.train.size(); ++j) {
      double ca = 0.0, cb = 0.0;
      for (std::size_t k = 0; k < m; ++k) {
        ca += a[k] * second[j][k];
        cb += b[k] * first[j][k];
      }
      if (std::max(ca, cb) > best) {
        best = std::max(ca, cb);
        label = ds.labels[s.train[j]];
      }
    }
    hits += label == ds.labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(s.test.size());
}

Outcome learning_sanity() {
  const auto t0 = Clock::now();
  const fs::path dir = kWork / "learning";
  fs::remove_all(dir);
  const std::string common = " --trials " + std::to_string(kLearnTrials) + " --seed " + std::to_string(kLearnSeed);
  cli("synth" + common + " --snr 2 --out " + path(dir / "snr2"));
  cli("synth" + common + " --snr 0 --out " + path(dir / "snr0"));
  const double eeg2 = train_accuracy(dir, "snr2", "eeg", "");
  const double fn2 = train_accuracy(dir, "snr2", "fnirs", " --repr od128");
  const double eeg0 = train_accuracy(dir, "snr0", "eeg", "");
  const double fn0 = train_accuracy(dir, "snr0", "fnirs", " --repr od128");
  const double secs = since(t0);
  const double leak = overlap_oracle(data::load_epochs(dir / "ep_fnirs_snr0"));
  const bool ok = eeg2 >= 0.90 && fn2 >= 0.90 && std::abs(eeg0 - 0.5) <= 0.05 && std::abs(fn0 - 0.5) <= 0.05 &&
                  secs < 1800.0;
  return {ok, "snr=2: eeg " + fmt(eeg2) + ", fnirs " + fmt(fn2) + " (>=0.90); snr=0: eeg " + fmt(eeg0) +
                  ", fnirs " + fmt(fn0) + " (0.50+-0.05); " + std::to_string(kLearnTrials) + " trials, " +
                  std::to_string(kLearnEpochs) + " epochs, " + fmt(secs, 1) +
                  " s (limit 1800 s); snr=0 fnirs overlap-matching oracle " + fmt(leak) +
                  " (label leakage of the epoch-level split)"};
}

// --- fusion property ---------------------------------------------------------------

Outcome fusion_property() {
  const fs::path dir = kWork / "fusion";
  fs::remove_all(dir);
  bool ok = true;
  std::string detail;
  for (int seed = 0; seed < 5; ++seed) {
    const fs::path d = dir / ("seed" + std::to_string(seed));
    const std::string s = " --seed " + std::to_string(seed);
    cli("synth --trials 60 --snr 2" + s + " --out " + path(d / "raw"));
    cli("preprocess --data " + path(d / "raw") + " --modality eeg" + s + " --out " + path(d / "ep_eeg"));
    cli("preprocess --data " + path(d / "raw") + " --modality fnirs --repr od128" + s + " --out " +
        path(d / "ep_fnirs"));
    cli("train --data " + path(d / "ep_eeg") + " --modality eeg --epochs 3" + s + " --out " + path(d / "eeg"));
    cli("train --data " + path(d / "ep_fnirs") + " --modality fnirs --repr od128 --epochs 3" + s + " --out " +
        path(d / "fnirs"));
    cli("fuse --eeg-run " + path(d / "eeg") + " --fnirs-run " + path(d / "fnirs") + " --epochs 30" + s + " --out " +
        path(d / "fused"));
    const json r = read_json(d / "fused" / "report.json");
    const double fused = r.at("fused").at("mean"), e = r.at("eeg").at("mean"), f = r.at("fnirs").at("mean");
    const bool pass = fused >= std::max(e, f) - 0.02;
    ok = ok && pass;
    detail += "seed " + std::to_string(seed) + ": fused " + fmt(fused) + " vs max(" + fmt(e) + ", " + fmt(f) + ")" +
              (pass ? "" : " (!)") + (seed < 4 ? "; " : "");
  }
  return {ok, detail};
}

// --- protocol fidelity ---------------------------------------------------------------

bool balanced(const std::vector<std::size_t>& idx, const std::vector<int>& labels, double p1) {
  if (idx.empty()) return false;
  std::size_t ones = 0;
  for (auto i : idx) ones += labels[i] == 1;
  return std::abs(static_cast<double>(ones) - p1 * static_cast<double>(idx.size())) <= 1.0;
}

Outcome protocol_fidelity() {
  const fs::path dir = kWork / "protocol";
  fs::remove_all(dir);
  cli("synth --trials 20 --seed 5 --out " + path(dir / "raw"));
  cli("preprocess --data " + path(dir / "raw") + " --modality fnirs --repr od10 --folds 5 --seed 5 --out " +
      path(dir / "ep"));
  const auto ds = data::load_epochs(dir / "ep");
  const std::size_t n = ds.size();
  double p1 = 0.0;
  for (int l : ds.labels) p1 += l;
  p1 /= static_cast<double>(n);

  std::string detail;
  bool ok = ds.split.has_value();
  if (ok) {
    const auto& s = *ds.split;
    data::check_partition(s, n);
    ok = balanced(s.train, ds.labels, p1) && balanced(s.val, ds.labels, p1) && balanced(s.test, ds.labels, p1) &&
         std::abs(static_cast<double>(s.train.size()) - 0.70 * n) <= 2.0 &&
         std::abs(static_cast<double>(s.val.size()) - 0.15 * n) <= 2.0;
    detail += "holdout " + std::to_string(s.train.size()) + "/" + std::to_string(s.val.size()) + "/" +
              std::to_string(s.test.size()) + " of " + std::to_string(n);
  }
  data::check_folds(ds.folds, n);
  bool folds_ok = ds.folds.size() == 5;
  for (const auto& f : ds.folds) folds_ok = folds_ok && balanced(f, ds.labels, p1);
  ok = ok && folds_ok;
  detail += "; 5 folds disjoint/covering/balanced " + std::string(folds_ok ? "yes" : "no");

  // CI formula on a CV report
  cli("train --data " + path(dir / "ep") + " --modality fnirs --repr od10 --protocol cv --folds 5 --epochs 2 --seed 5 --out " +
      path(dir / "cv"));
  const json rep = read_json(dir / "cv" / "report.json");
  const auto accs = rep.at("accuracy").at("fold_accuracies").get<std::vector<double>>();
  double mean = 0.0, ss = 0.0;
  for (double a : accs) mean += a;
  mean /= static_cast<double>(accs.size());
  for (double a : accs) ss += (a - mean) * (a - mean);
  const double hw = 1.96 * std::sqrt(ss / (accs.size() - 1.0)) / std::sqrt(static_cast<double>(accs.size()));
  const bool ci_ok = accs.size() == 5 && std::abs(rep.at("accuracy").at("mean").get<double>() - mean) < 1e-12 &&
                     std::abs(rep.at("accuracy").at("half_width").get<double>() - hw) < 1e-12;
  ok = ok && ci_ok;
  detail += "; CV report " + fmt(mean) + " +- " + fmt(hw) + (ci_ok ? " matches" : " MISMATCHES") +
            " 1.96*std/sqrt(k)";

  // same-seed determinism of a full train run
  for (const char* run : {"det_a", "det_b"})
    cli("train --data " + path(dir / "ep") + " --modality fnirs --repr od10 --epochs 2 --seed 9 --out " + path(dir / run));
  bool same = true;
  for (const char* f : {"report.json", "metrics.jsonl", "checkpoints/fold0.bin"})
    same = same && slurp(dir / "det_a" / f) == slurp(dir / "det_b" / f);
  ok = ok && same;
  detail += "; same-seed reports byte-identical " + std::string(same ? "yes" : "no");
  return {ok, detail};
}

// --- ablation structure ----------------------------------------------------------------

Outcome ablation_structure() {
  const fs::path dir = kWork / "ablation";
  fs::remove_all(dir);
  cli("synth --trials 10 --seed 1 --out " + path(dir / "raw"));
  const int rc = cli_status("ablate --data " + path(dir / "raw") + " --epochs 1 --seed 1 --out " + path(dir / "out"));
  const json a = read_json(dir / "out" / "ablation.json");
  const auto& dims = a.at("dims_table").at("rows");
  const auto& reprs = a.at("repr_table").at("rows");
  bool ok = rc == 0 && dims.size() == 4 && reprs.size() == 3;
  const std::vector<std::string> want_dims{"16-32", "32-64", "48-56", "64-128"};
  const std::vector<std::string> want_repr{"OD10", "HBT", "OD128"};
  for (std::size_t i = 0; ok && i < 4; ++i)
    ok = dims[i].at("dims") == want_dims[i] && dims[i].at("eeg").at("ok") == true &&
         dims[i].at("fnirs").at("ok") == true;
  for (std::size_t i = 0; ok && i < 3; ++i) ok = reprs[i].at("representation") == want_repr[i] && reprs[i].at("ok");
  const std::string text = slurp(dir / "out" / "ablation.txt");
  ok = ok && text.find("Embedding Dims") != std::string::npos && text.find("Representation") != std::string::npos;
  return {ok, "exit " + std::to_string(rc) + ", dims rows " + std::to_string(dims.size()) + " (16-32/32-64/48-56/64-128 x EEG,fNIRS), repr rows " +
                  std::to_string(reprs.size()) + " (OD10/HBT/OD128)"};
}

}  // namespace

int main() {
  fs::create_directories(kWork);
  std::ofstream(kWork / "cli.log", std::ios::trunc);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient integrity", gradient_integrity},
      {"shape contract", shape_contract},
      {"CASA complexity", casa_complexity},
      {"preprocessing oracles", preprocessing_oracles},
      {"learning sanity", learning_sanity},
      {"fusion property", fusion_property},
      {"protocol fidelity", protocol_fidelity},
      {"ablation structure", ablation_structure},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
