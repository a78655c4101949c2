#include "mecasa/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "mecasa/backbone.hpp"
#include "mecasa/casa.hpp"
#include "mecasa/checkpoint.hpp"
#include "mecasa/fusion.hpp"
#include "mecasa/log.hpp"
#include "mecasa/synth.hpp"

namespace mecasa::cli {

namespace {

void write_json_file(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

json accuracy_json(const train::MetricsReport& r) {
  return {{"mean", r.mean},
          {"half_width", r.half_width ? json(*r.half_width) : json(nullptr)},
          {"fold_accuracies", r.accuracies}};
}

json mbll_json(const signal::MbllConfig& m) {
  return {{"wavelengths_nm", m.wavelengths_nm},
          {"extinction", m.extinction},
          {"distance_cm", m.distance_cm},
          {"dpf", m.dpf}};
}

json pipeline_json(const data::PipelineConfig& p) {
  return {{"band_lo_hz", p.band_lo_hz}, {"band_hi_hz", p.band_hi_hz}, {"filter_order", p.filter_order},
          {"eeg_fs", p.eeg_fs},         {"od10_fs", p.od10_fs},       {"od128_fs", p.od128_fs},
          {"window_s", p.window_s},     {"step_s", p.step_s},         {"mbll", mbll_json(p.mbll)}};
}

template <class T>
void take(const json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

void apply_pipeline_json(data::PipelineConfig& p, const json& j) {
  static const std::set<std::string> known{"band_lo_hz", "band_hi_hz", "filter_order", "eeg_fs", "od10_fs",
                                           "od128_fs",   "window_s",   "step_s",       "mbll"};
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw std::invalid_argument("config: unknown pipeline key '" + k + "'");
  take(j, "band_lo_hz", p.band_lo_hz);
  take(j, "band_hi_hz", p.band_hi_hz);
  take(j, "filter_order", p.filter_order);
  take(j, "eeg_fs", p.eeg_fs);
  take(j, "od10_fs", p.od10_fs);
  take(j, "od128_fs", p.od128_fs);
  take(j, "window_s", p.window_s);
  take(j, "step_s", p.step_s);
  if (j.contains("mbll")) {
    const auto& m = j.at("mbll");
    static const std::set<std::string> mk{"wavelengths_nm", "extinction", "distance_cm", "dpf"};
    for (const auto& [k, v] : m.items())
      if (!mk.count(k)) throw std::invalid_argument("config: unknown mbll key '" + k + "'");
    take(m, "wavelengths_nm", p.mbll.wavelengths_nm);
    take(m, "extinction", p.mbll.extinction);
    take(m, "distance_cm", p.mbll.distance_cm);
    take(m, "dpf", p.mbll.dpf);
  }
}

/// Shape audit before training: formula shapes must match a real forward pass.
void audit_shapes(const model::BackboneConfig& cfg) {
  const auto expected = model::expected_stage_shapes(cfg);
  Rng rng(0);
  const model::Backbone probe(cfg, rng);
  model::audit_parameters(cfg, probe.params());
  const auto out = probe.forward(Tensor({1, cfg.in_channels, cfg.input_height, cfg.input_width}));
  for (std::size_t i = 0; i < expected.size(); ++i)
    if (out.stage_shapes.at(i) != expected[i])
      throw ShapeError("shape audit: stage " + std::to_string(i) + " produced " + to_string(out.stage_shapes[i]) +
                       ", expected " + to_string(expected[i]));
  if (out.logits.shape() != Shape{1, cfg.num_classes}) throw ShapeError("shape audit: logits shape mismatch");
}

std::vector<data::Partition> partitions_for(const data::EpochDataset& ds, const RunConfig& c) {
  if (c.protocol == "holdout") {
    if (ds.split) return {*ds.split};
    data::SplitSpec spec;
    spec.seed = c.seed;
    return {data::stratified_holdout(ds.labels, spec)};
  }
  auto folds = ds.folds.size() == c.folds ? ds.folds : data::stratified_folds(ds.labels, c.folds, c.seed);
  return train::cv_partitions(ds.labels, folds, c.val_fraction, c.seed);
}

json partition_json(const data::Partition& p) { return {{"train", p.train}, {"val", p.val}, {"test", p.test}}; }

data::Partition partition_from_json(const json& j) {
  return {j.at("train").get<std::vector<std::size_t>>(), j.at("val").get<std::vector<std::size_t>>(),
          j.at("test").get<std::vector<std::size_t>>()};
}

json report_config_json(const RunConfig& c) {
  json j = to_json(c);
  j.erase("out");  // the report lives there; keeps same-seed reports identical across output dirs
  return j;
}

std::string effective_repr(const RunConfig& c) { return c.representation.value_or("od128"); }

fs::path fold_stem(const fs::path& run_dir, std::size_t fold) {
  return run_dir / "checkpoints" / ("fold" + std::to_string(fold));
}

}  // namespace

// ---------------------------------------------------------------------------

void RunConfig::validate() const {
  if (modality != "eeg" && modality != "fnirs")
    throw std::invalid_argument("modality must be eeg or fnirs, got '" + modality + "'");
  if (representation) {
    if (modality != "fnirs") throw std::invalid_argument("representation is only valid with modality=fnirs");
    if (*representation != "od10" && *representation != "hbt" && *representation != "od128")
      throw std::invalid_argument("representation must be od10, hbt or od128, got '" + *representation + "'");
  }
  model::parse_stage_dims(dims);
  for (const auto& d : dims_grid) model::parse_stage_dims(d);
  for (const auto& r : repr_grid)
    if (r != "od10" && r != "hbt" && r != "od128") throw std::invalid_argument("repr_grid: unknown representation '" + r + "'");
  if (protocol != "holdout" && protocol != "cv")
    throw std::invalid_argument("protocol must be holdout or cv, got '" + protocol + "'");
  if (folds < 2) throw std::invalid_argument("folds must be >= 2");
  if (epochs == 0 || batch_size == 0) throw std::invalid_argument("epochs and batch_size must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be > 0");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw std::invalid_argument("val_fraction must be in (0, 1)");
  if (blocks == 0) throw std::invalid_argument("blocks must be >= 1");
  if (!(mlp_ratio > 0.0)) throw std::invalid_argument("mlp_ratio must be > 0");
  if (trials < 10) throw std::invalid_argument("trials must be >= 10");
  if (!(snr >= 0.0)) throw std::invalid_argument("snr must be >= 0");
  if (fusion_hidden == 0) throw std::invalid_argument("fusion_hidden must be >= 1");
  if (grid != "dims" && grid != "repr" && grid != "all")
    throw std::invalid_argument("grid must be dims, repr or all, got '" + grid + "'");
  for (auto n : bench_tokens)
    if (n < 16 || n % 16 != 0) throw std::invalid_argument("bench tokens must be multiples of 16 and >= 16");
  if (bench_dim == 0 || bench_reps == 0) throw std::invalid_argument("bench dim and reps must be >= 1");
  pipeline_config().validate();
}

data::PipelineConfig RunConfig::pipeline_config() const {
  data::PipelineConfig p = pipeline;
  p.modality = modality;
  p.representation = effective_repr(*this);
  return p;
}

train::TrainConfig RunConfig::train_config() const {
  train::TrainConfig t;
  t.epochs = epochs;
  t.batch_size = batch_size;
  t.lr = lr;
  t.seed = seed;
  return t;
}

json to_json(const RunConfig& c) {
  return {{"data", c.data},
          {"out", c.out},
          {"modality", c.modality},
          {"representation", c.representation ? json(*c.representation) : json(nullptr)},
          {"dims", c.dims},
          {"seed", c.seed},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"protocol", c.protocol},
          {"folds", c.folds},
          {"val_fraction", c.val_fraction},
          {"blocks", c.blocks},
          {"mlp_ratio", c.mlp_ratio},
          {"trials", c.trials},
          {"snr", c.snr},
          {"eeg_run", c.eeg_run},
          {"fnirs_run", c.fnirs_run},
          {"fusion_hidden", c.fusion_hidden},
          {"grid", c.grid},
          {"dims_grid", c.dims_grid},
          {"repr_grid", c.repr_grid},
          {"bench_tokens", c.bench_tokens},
          {"bench_dim", c.bench_dim},
          {"bench_reps", c.bench_reps},
          {"pipeline", pipeline_json(c.pipeline)}};
}

void apply_json(RunConfig& c, const json& j) {
  if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
  const json known = to_json(RunConfig{});
  for (const auto& [k, v] : j.items())
    if (!known.contains(k)) throw std::invalid_argument("config: unknown key '" + k + "'");
  try {
    take(j, "data", c.data);
    take(j, "out", c.out);
    take(j, "modality", c.modality);
    if (j.contains("representation")) {
      if (j["representation"].is_null()) c.representation.reset();
      else c.representation = j["representation"].get<std::string>();
    }
    take(j, "dims", c.dims);
    take(j, "seed", c.seed);
    take(j, "epochs", c.epochs);
    take(j, "batch_size", c.batch_size);
    take(j, "lr", c.lr);
    take(j, "protocol", c.protocol);
    take(j, "folds", c.folds);
    take(j, "val_fraction", c.val_fraction);
    take(j, "blocks", c.blocks);
    take(j, "mlp_ratio", c.mlp_ratio);
    take(j, "trials", c.trials);
    take(j, "snr", c.snr);
    take(j, "eeg_run", c.eeg_run);
    take(j, "fnirs_run", c.fnirs_run);
    take(j, "fusion_hidden", c.fusion_hidden);
    take(j, "grid", c.grid);
    take(j, "dims_grid", c.dims_grid);
    take(j, "repr_grid", c.repr_grid);
    take(j, "bench_tokens", c.bench_tokens);
    take(j, "bench_dim", c.bench_dim);
    take(j, "bench_reps", c.bench_reps);
    if (j.contains("pipeline")) apply_pipeline_json(c.pipeline, j.at("pipeline"));
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
}

void apply_config_file(RunConfig& c, const fs::path& path) {
  if (path.extension() != ".json")
    throw std::invalid_argument("config file " + path.string() + ": only JSON configs are supported");
  apply_json(c, read_json_file(path));
}

// ---------------------------------------------------------------------------

data::EpochDataset preprocess_dataset(const RunConfig& c) {
  if (c.data.empty()) throw std::invalid_argument("preprocess: --data (raw dataset root) is required");
  data::EpochDataset ds = data::build_epoch_dataset(c.data, c.pipeline_config());
  data::SplitSpec holdout;
  holdout.seed = c.seed;
  data::stratified_split(ds, holdout);
  data::SplitSpec kfold;
  kfold.folds = c.folds;
  kfold.seed = c.seed;
  data::stratified_split(ds, kfold);
  ds.validate();
  return ds;
}

model::BackboneConfig backbone_config_for(const data::EpochDataset& ds, const RunConfig& c) {
  model::BackboneConfig cfg;
  cfg.in_channels = 1;
  cfg.input_height = ds.channels;
  cfg.input_width = ds.window;
  cfg.stage_dims = model::parse_stage_dims(c.dims);
  cfg.blocks_per_stage.assign(cfg.stage_dims.size(), c.blocks);
  cfg.mlp_ratio = c.mlp_ratio;
  cfg.num_classes = 2;
  cfg.validate();
  return cfg;
}

train::MetricsReport train_on_dataset(const data::EpochDataset& ds, const RunConfig& c,
                                      const std::optional<fs::path>& out_dir) {
  ds.validate();
  const auto cfg = backbone_config_for(ds, c);
  audit_shapes(cfg);
  const train::SampleSet all = train::SampleSet::from_epochs(ds);
  const auto partitions = partitions_for(ds, c);
  std::vector<signal::ChannelStats> stats(partitions.size());

  auto prepare = [&](std::size_t fold, train::SampleSet& tr, train::SampleSet& va, train::SampleSet& te) {
    std::vector<std::size_t> idx(tr.size());
    std::iota(idx.begin(), idx.end(), 0);
    stats[fold] = signal::compute_channel_stats(tr.streams[0], ds.channels, ds.window, idx);
    for (auto* s : {&tr, &va, &te}) signal::standardize(s->streams[0], ds.channels, ds.window, stats[fold]);
  };
  auto factory = [&](std::size_t fold) -> std::unique_ptr<model::Classifier> {
    Rng rng(c.seed + fold);
    return std::make_unique<model::Backbone>(cfg, rng);
  };

  std::ofstream metrics;
  if (out_dir) {
    fs::create_directories(*out_dir);
    metrics.open(*out_dir / "metrics.jsonl", std::ios::trunc);
  }
  auto epoch_cb = [&](std::size_t fold) -> train::EpochCallback {
    return [&, fold](const train::EpochRecord& r) {
      if (metrics.is_open())
        metrics << json{{"fold", fold}, {"epoch", r.epoch}, {"train_loss", r.train_loss},
                        {"val_accuracy", r.val_accuracy}}.dump()
                << '\n';
    };
  };
  auto on_fold = [&](const train::FoldResult& f) {
    if (!out_dir) return;
    const json meta = {{"modality", ds.modality},   {"representation", ds.representation},
                       {"data", c.data},            {"dims", c.dims},
                       {"fold", f.fold},            {"protocol", c.protocol},
                       {"seed", c.seed},            {"partition", partition_json(f.partition)}};
    io::save_backbone(fold_stem(*out_dir, f.fold), dynamic_cast<const model::Backbone&>(*f.model), stats[f.fold],
                      meta);
  };

  train::MetricsReport report;
  if (partitions.size() == 1) {
    auto f = train::run_partition(factory, all, partitions[0], 0, c.train_config(), prepare, epoch_cb(0));
    on_fold(f);
    std::vector<train::FoldResult> v;
    v.push_back(std::move(f));
    report = train::summarize(std::move(v));
  } else {
    report = train::cross_validate(factory, all, partitions, c.train_config(), prepare, epoch_cb, on_fold);
  }

  if (out_dir) {
    json folds = json::array();
    for (const auto& f : report.folds)
      folds.push_back({{"fold", f.fold},
                       {"sizes", {{"train", f.partition.train.size()}, {"val", f.partition.val.size()},
                                  {"test", f.partition.test.size()}}},
                       {"best_epoch", f.training.best_epoch},
                       {"best_val_accuracy", f.training.best_val_accuracy},
                       {"test_accuracy", f.test.accuracy},
                       {"confusion", f.test.confusion}});
    json rep = {{"command", "train"},
                {"config", report_config_json(c)},
                {"dataset",
                 {{"modality", ds.modality},
                  {"representation", ds.representation},
                  {"epochs", ds.size()},
                  {"sample_shape", {1, ds.channels, ds.window}},
                  {"fs", ds.fs}}},
                {"model", {{"config", io::to_json(cfg)}, {"parameters", parameter_count(factory(0)->parameters())}}},
                {"protocol", c.protocol},
                {"folds", folds},
                {"accuracy", accuracy_json(report)},
                {"confusion", report.confusion}};
    write_json_file(*out_dir / "report.json", rep);
  }
  return report;
}

std::vector<CellResult> run_cells(const std::vector<std::string>& names,
                                  const std::function<train::MetricsReport(const std::string&)>& run) {
  std::vector<CellResult> out;
  for (const auto& name : names) {
    CellResult r;
    r.name = name;
    try {
      const auto rep = run(name);
      r.ok = true;
      r.mean = rep.mean;
      r.half_width = rep.half_width;
      r.accuracies = rep.accuracies;
    } catch (const std::exception& e) {
      r.ok = false;
      r.error = e.what();
      log::warn("cell " + name + " failed: " + r.error);
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::string format_cell(const CellResult& r) {
  if (!r.ok) return "FAILED";
  return r.half_width ? fixed(r.mean) + " ± " + fixed(*r.half_width) : fixed(r.mean);
}

std::string format_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  // "±" is two bytes but one column wide
  auto width = [](const std::string& s) {
    std::size_t n = 0;
    for (unsigned char ch : s) n += (ch & 0xC0) != 0x80;
    return n;
  };
  std::vector<std::size_t> w(header.size(), 0);
  for (std::size_t i = 0; i < header.size(); ++i) w[i] = width(header[i]);
  for (const auto& row : rows)
    for (std::size_t i = 0; i < row.size() && i < w.size(); ++i) w[i] = std::max(w[i], width(row[i]));
  auto line = [&](const std::vector<std::string>& cells) {
    std::string s;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      s += cells[i] + std::string(w[i] - width(cells[i]), ' ');
      if (i + 1 < cells.size()) s += "  ";
    }
    while (!s.empty() && s.back() == ' ') s.pop_back();
    return s + "\n";
  };
  std::string out = line(header);
  std::size_t total = 0;
  for (auto x : w) total += x;
  out += std::string(total + 2 * (w.size() - 1), '-') + "\n";
  for (const auto& row : rows) out += line(row);
  return out;
}

double loglog_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("log-log fit needs >= 2 paired points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw std::invalid_argument("log-log fit needs positive values");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

std::vector<BenchRow> bench_attention(const std::vector<std::size_t>& tokens, std::size_t dim, std::size_t reps,
                                      std::uint64_t seed) {
  Rng rng(seed);
  const auto params = attention::CasaParams::init(dim, rng);
  auto median_time = [&](const std::function<void()>& fn) {
    fn();  // warm-up
    std::vector<double> t;
    for (std::size_t r = 0; r < reps; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      fn();
      t.push_back(seconds_since(t0));
    }
    std::sort(t.begin(), t.end());
    return t.size() % 2 ? t[t.size() / 2] : 0.5 * (t[t.size() / 2 - 1] + t[t.size() / 2]);
  };
  std::vector<BenchRow> rows;
  for (std::size_t n : tokens) {
    BenchRow row;
    row.tokens = n;
    row.casa_flops = attention::flop_count(attention::AttentionKind::casa, n, dim);
    row.softmax_flops = attention::flop_count(attention::AttentionKind::softmax, n, dim);
    Tensor x({1, dim, 16, n / 16});
    for (auto& v : x.mutable_data()) v = rng.normal();
    Tensor q({n, dim}), k({n, dim}), v({n, dim});
    for (Tensor* t : {&q, &k, &v})
      for (auto& e : t->mutable_data()) e = rng.normal();
    row.casa_seconds = median_time([&] { attention::casa_forward(x, params); });
    row.softmax_seconds = median_time([&] { attention::softmax_attention(q, k, v); });
    log::info("bench N=" + std::to_string(n) + " casa " + std::to_string(row.casa_seconds) + " s, softmax " +
              std::to_string(row.softmax_seconds) + " s");
    rows.push_back(row);
  }
  return rows;
}

// --- subcommands ------------------------------------------------------------

int cmd_synth(const RunConfig& c, std::ostream& os) {
  data::SynthConfig sc;
  sc.n_trials = c.trials;
  sc.seed = c.seed;
  sc.snr = c.snr;
  const auto sessions = data::synth_hybrid_dataset(sc);
  data::write_synth_dataset(c.out, sessions);
  write_json_file(fs::path(c.out) / "synth.json",
                  {{"trials", sc.n_trials}, {"seed", sc.seed}, {"snr", sc.snr}, {"sessions", sessions.size()}});
  os << "wrote " << sessions.size() << " sessions (" << sc.n_trials << " trials, snr " << sc.snr << ") to " << c.out
     << "\n";
  return 0;
}

int cmd_validate(const RunConfig& c, std::ostream& os) {
  if (c.data.empty()) throw std::invalid_argument("validate: --data is required");
  const auto files = data::list_manifests(c.data);
  const auto issues = data::validate_root(c.data);
  for (const auto& i : issues) os << "INVALID " << i.file.string() << ": " << i.message << "\n";
  os << files.size() - issues.size() << " of " << files.size() << " recordings valid\n";
  return issues.empty() ? 0 : 1;
}

int cmd_preprocess(const RunConfig& c, std::ostream& os) {
  const auto ds = preprocess_dataset(c);
  data::save_epochs(c.out, ds);
  os << ds.size() << " " << ds.modality << " epochs (" << ds.representation << ") of shape (1, " << ds.channels
     << ", " << ds.window << ") written to " << c.out << "\n";
  return 0;
}

int cmd_train(const RunConfig& c, std::ostream& os) {
  if (c.data.empty()) throw std::invalid_argument("train: --data (preprocessed epoch directory) is required");
  const auto t0 = std::chrono::steady_clock::now();
  const auto ds = data::load_epochs(c.data);
  if (ds.modality != c.modality)
    throw std::invalid_argument("train: dataset " + c.data + " holds " + ds.modality + " epochs, --modality is " +
                                c.modality);
  const auto report = train_on_dataset(ds, c, fs::path(c.out));
  write_json_file(fs::path(c.out) / "timing.json", {{"runtime_seconds", seconds_since(t0)}});
  CellResult cell{"", true, report.mean, report.half_width, report.accuracies, ""};
  os << ds.modality << " (" << ds.representation << ", dims " << c.dims << ", " << c.protocol << "): accuracy "
     << format_cell(cell) << "\n";
  return 0;
}

namespace {

struct FuseInputs {
  io::BackboneCheckpoint ck;
  data::EpochDataset ds;
};

/// Pooled backbone features of every epoch, standardized with the checkpoint's statistics.
std::vector<double> extract_features(const io::BackboneCheckpoint& ck, data::EpochDataset ds) {
  signal::standardize(ds.data, ds.channels, ds.window, ck.stats);
  const model::Backbone bb(ck.config, ck.params);
  const auto samples = train::SampleSet::from_epochs(ds);
  std::vector<double> out;
  const std::size_t batch = 64;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < samples.size(); start += batch) {
    idx.resize(std::min(samples.size(), start + batch) - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto f = bb.forward(samples.gather(idx)[0]).features;
    out.insert(out.end(), f.data().begin(), f.data().end());
  }
  return out;
}

io::FeatureCache cache_rows(const std::string& modality, const std::string& split, const std::vector<double>& feats,
                            std::size_t dim, const std::vector<std::size_t>& rows, const std::vector<int>& labels) {
  io::FeatureCache c;
  c.modality = modality;
  c.split = split;
  c.count = rows.size();
  c.dim = dim;
  for (std::size_t r : rows) {
    c.values.insert(c.values.end(), feats.begin() + static_cast<std::ptrdiff_t>(r * dim),
                    feats.begin() + static_cast<std::ptrdiff_t>((r + 1) * dim));
    c.labels.push_back(labels[r]);
  }
  return c;
}

}  // namespace

int cmd_fuse(const RunConfig& c, std::ostream& os) {
  if (c.eeg_run.empty() || c.fnirs_run.empty())
    throw std::invalid_argument("fuse: --eeg-run and --fnirs-run (train output directories) are required");
  const auto t0 = std::chrono::steady_clock::now();
  const json eeg_report = read_json_file(fs::path(c.eeg_run) / "report.json");
  const json fnirs_report = read_json_file(fs::path(c.fnirs_run) / "report.json");
  const std::size_t n_folds = eeg_report.at("folds").size();
  if (fnirs_report.at("folds").size() != n_folds)
    throw std::invalid_argument("fuse: runs have different fold counts (" + std::to_string(n_folds) + " vs " +
                                std::to_string(fnirs_report.at("folds").size()) + ")");

  std::vector<train::FoldResult> fused_folds, eeg_folds, fnirs_folds;
  json fold_rows = json::array();
  std::optional<data::EpochDataset> eeg_ds, fnirs_ds;
  for (std::size_t f = 0; f < n_folds; ++f) {
    auto eeg_ck = io::load_backbone(fold_stem(c.eeg_run, f));
    auto fnirs_ck = io::load_backbone(fold_stem(c.fnirs_run, f));
    if (eeg_ck.meta.at("modality") != "eeg") throw std::invalid_argument("fuse: --eeg-run is not an EEG run");
    if (fnirs_ck.meta.at("modality") != "fnirs") throw std::invalid_argument("fuse: --fnirs-run is not an fNIRS run");
    const auto part = partition_from_json(eeg_ck.meta.at("partition"));
    if (eeg_ck.meta.at("partition") != fnirs_ck.meta.at("partition"))
      throw std::invalid_argument("fuse: fold " + std::to_string(f) + " uses different splits in the two runs");
    if (!eeg_ds) eeg_ds = data::load_epochs(eeg_ck.meta.at("data").get<std::string>());
    if (!fnirs_ds) fnirs_ds = data::load_epochs(fnirs_ck.meta.at("data").get<std::string>());
    if (eeg_ds->labels != fnirs_ds->labels || eeg_ds->trial_ids != fnirs_ds->trial_ids)
      throw std::invalid_argument("fuse: EEG and fNIRS epochs are not aligned (labels or trial ids differ)");

    const std::size_t de = eeg_ck.config.feature_dim(), dn = fnirs_ck.config.feature_dim();
    const auto fe = extract_features(eeg_ck, *eeg_ds);
    const auto fn = extract_features(fnirs_ck, *fnirs_ds);
    const fs::path cache_dir = fs::path(c.out) / "features" / ("fold" + std::to_string(f));
    for (const auto& [split, rows] : {std::pair{"train", part.train}, {"val", part.val}, {"test", part.test}}) {
      io::save_features(cache_dir / (std::string("eeg_") + split), cache_rows("eeg", split, fe, de, rows, eeg_ds->labels));
      io::save_features(cache_dir / (std::string("fnirs_") + split),
                        cache_rows("fnirs", split, fn, dn, rows, fnirs_ds->labels));
    }

    train::SampleSet feats;
    feats.shapes = {Shape{de}, Shape{dn}};
    feats.streams = {fe, fn};
    feats.labels = eeg_ds->labels;
    feats.validate();

    // z-score every feature with training statistics
    auto prepare = [&](std::size_t, train::SampleSet& tr, train::SampleSet& va, train::SampleSet& te) {
      for (std::size_t s = 0; s < 2; ++s) {
        const std::size_t d = numel(tr.shapes[s]);
        std::vector<std::size_t> idx(tr.size());
        std::iota(idx.begin(), idx.end(), 0);
        const auto st = signal::compute_channel_stats(tr.streams[s], d, 1, idx);
        for (auto* set : {&tr, &va, &te}) signal::standardize(set->streams[s], d, 1, st);
      }
    };
    model::FusionConfig fcfg;
    fcfg.d_eeg = de;
    fcfg.d_fnirs = dn;
    fcfg.hidden = c.fusion_hidden;
    auto factory = [&](std::size_t fold) -> std::unique_ptr<model::Classifier> {
      Rng rng(c.seed + fold);
      return std::make_unique<model::FusionHead>(fcfg, model::FusionParams::init(fcfg, rng));
    };
    auto fused = train::run_partition(factory, feats, part, f, c.train_config(), prepare);

    auto unimodal = [&](const io::BackboneCheckpoint& ck, const data::EpochDataset& ds) {
      auto test = ds;
      signal::standardize(test.data, test.channels, test.window, ck.stats);
      const auto samples = train::SampleSet::from_epochs(test).subset(part.test);
      train::FoldResult r;
      r.fold = f;
      r.partition = part;
      r.test = train::evaluate(model::Backbone(ck.config, ck.params), samples);
      return r;
    };
    eeg_folds.push_back(unimodal(eeg_ck, *eeg_ds));
    fnirs_folds.push_back(unimodal(fnirs_ck, *fnirs_ds));
    fold_rows.push_back({{"fold", f},
                         {"fused", fused.test.accuracy},
                         {"eeg", eeg_folds.back().test.accuracy},
                         {"fnirs", fnirs_folds.back().test.accuracy},
                         {"fusion_best_epoch", fused.training.best_epoch},
                         {"fused_confusion", fused.test.confusion}});
    fused_folds.push_back(std::move(fused));
  }
  const auto fused = train::summarize(std::move(fused_folds));
  const auto eeg = train::summarize(std::move(eeg_folds));
  const auto fnirs = train::summarize(std::move(fnirs_folds));
  json rep = {{"command", "fuse"},
              {"config", report_config_json(c)},
              {"fusion", io::to_json(model::FusionConfig{})},
              {"folds", fold_rows},
              {"fused", accuracy_json(fused)},
              {"eeg", accuracy_json(eeg)},
              {"fnirs", accuracy_json(fnirs)}};
  rep["fusion"]["hidden"] = c.fusion_hidden;
  rep["fusion"].erase("d_eeg");
  rep["fusion"].erase("d_fnirs");
  write_json_file(fs::path(c.out) / "report.json", rep);
  write_json_file(fs::path(c.out) / "timing.json", {{"runtime_seconds", seconds_since(t0)}});

  auto cell = [](const train::MetricsReport& r) { return format_cell({"", true, r.mean, r.half_width, {}, ""}); };
  os << format_table({"Modality", "Accuracy"},
                     {{"EEG", cell(eeg)}, {"fNIRS", cell(fnirs)}, {"Fusion", cell(fused)}});
  return 0;
}

int cmd_ablate(const RunConfig& c, std::ostream& os) {
  if (c.data.empty()) throw std::invalid_argument("ablate: --data (raw dataset root) is required");
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path out(c.out);
  std::map<std::string, data::EpochDataset> cache;  // by representation
  auto dataset = [&](const std::string& modality, const std::string& repr) -> const data::EpochDataset& {
    const std::string key = modality == "eeg" ? "eeg" : repr;
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    RunConfig pc = c;
    pc.modality = modality;
    pc.representation = modality == "fnirs" ? std::optional<std::string>(repr) : std::nullopt;
    auto ds = preprocess_dataset(pc);
    data::save_epochs(out / "epochs" / key, ds);
    return cache.emplace(key, std::move(ds)).first->second;
  };
  auto run_cell = [&](const std::string& modality, const std::string& repr, const std::string& dims,
                      const std::string& name) {
    RunConfig cc = c;
    cc.modality = modality;
    cc.representation = modality == "fnirs" ? std::optional<std::string>(repr) : std::nullopt;
    cc.dims = dims;
    cc.data = (out / "epochs" / (modality == "eeg" ? "eeg" : repr)).string();
    const auto& ds = dataset(modality, repr);
    return train_on_dataset(ds, cc, out / "cells" / name);
  };

  json rep = {{"command", "ablate"}, {"config", report_config_json(c)}};
  std::string text;
  bool all_ok = true;
  if (c.grid == "dims" || c.grid == "all") {
    std::vector<std::string> names;
    for (const auto& d : c.dims_grid) {
      names.push_back("dims_" + d + "_eeg");
      names.push_back("dims_" + d + "_fnirs");
    }
    const auto cells = run_cells(names, [&](const std::string& name) {
      const auto mod = name.substr(name.rfind('_') + 1);
      const auto dims = name.substr(5, name.rfind('_') - 5);
      return run_cell(mod, effective_repr(c), dims, name);
    });
    std::vector<std::vector<std::string>> rows;
    json jrows = json::array();
    for (std::size_t i = 0; i < c.dims_grid.size(); ++i) {
      const auto& e = cells[2 * i];
      const auto& f = cells[2 * i + 1];
      rows.push_back({c.dims_grid[i], format_cell(e), format_cell(f)});
      auto cj = [](const CellResult& r) {
        return json{{"ok", r.ok},
                    {"mean", r.ok ? json(r.mean) : json(nullptr)},
                    {"half_width", r.half_width ? json(*r.half_width) : json(nullptr)},
                    {"fold_accuracies", r.accuracies},
                    {"error", r.ok ? json(nullptr) : json(r.error)}};
      };
      jrows.push_back({{"dims", c.dims_grid[i]}, {"eeg", cj(e)}, {"fnirs", cj(f)}});
      all_ok = all_ok && e.ok && f.ok;
    }
    rep["dims_table"] = {{"columns", {"Embedding Dims", "EEG", "fNIRS"}},
                         {"fnirs_representation", effective_repr(c)},
                         {"rows", jrows}};
    text += "Embedding dims ablation\n" + format_table({"Embedding Dims", "EEG", "fNIRS"}, rows);
  }
  if (c.grid == "repr" || c.grid == "all") {
    std::vector<std::string> names;
    for (const auto& r : c.repr_grid) names.push_back("repr_" + r);
    const auto cells = run_cells(names, [&](const std::string& name) {
      return run_cell("fnirs", name.substr(5), c.dims, name);
    });
    std::vector<std::vector<std::string>> rows;
    json jrows = json::array();
    for (std::size_t i = 0; i < c.repr_grid.size(); ++i) {
      std::string label = c.repr_grid[i];
      std::transform(label.begin(), label.end(), label.begin(), ::toupper);
      rows.push_back({label, format_cell(cells[i])});
      jrows.push_back({{"representation", label},
                       {"ok", cells[i].ok},
                       {"mean", cells[i].ok ? json(cells[i].mean) : json(nullptr)},
                       {"half_width", cells[i].half_width ? json(*cells[i].half_width) : json(nullptr)},
                       {"fold_accuracies", cells[i].accuracies},
                       {"error", cells[i].ok ? json(nullptr) : json(cells[i].error)}});
      all_ok = all_ok && cells[i].ok;
    }
    rep["repr_table"] = {{"columns", {"Representation", "MECASA"}}, {"dims", c.dims}, {"rows", jrows}};
    if (!text.empty()) text += "\n";
    text += "fNIRS representation ablation (dims " + c.dims + ")\n" +
            format_table({"Representation", "MECASA"}, rows);
  }
  write_json_file(out / "ablation.json", rep);
  write_text_file(out / "ablation.txt", text);
  write_json_file(out / "timing.json", {{"runtime_seconds", seconds_since(t0)}});
  os << text;
  return all_ok ? 0 : 1;
}

int cmd_bench(const RunConfig& c, std::ostream& os) {
  const auto rows = bench_attention(c.bench_tokens, c.bench_dim, c.bench_reps, c.seed);
  std::vector<double> n, tc, ts;
  json jrows = json::array();
  std::vector<std::vector<std::string>> table;
  for (const auto& r : rows) {
    n.push_back(static_cast<double>(r.tokens));
    tc.push_back(r.casa_seconds);
    ts.push_back(r.softmax_seconds);
    jrows.push_back({{"tokens", r.tokens},
                     {"casa_flops", r.casa_flops},
                     {"softmax_flops", r.softmax_flops},
                     {"casa_median_s", r.casa_seconds},
                     {"softmax_median_s", r.softmax_seconds}});
    table.push_back({std::to_string(r.tokens), std::to_string(r.casa_flops), std::to_string(r.softmax_flops),
                     fixed(r.casa_seconds * 1e3, 3), fixed(r.softmax_seconds * 1e3, 3)});
  }
  json rep = {{"command", "bench"}, {"config", report_config_json(c)}, {"dim", c.bench_dim}, {"reps", c.bench_reps},
              {"rows", jrows}};
  std::string summary;
  if (rows.size() >= 2) {
    const double ec = loglog_slope(n, tc), es = loglog_slope(n, ts);
    rep["casa_exponent"] = ec;
    rep["softmax_exponent"] = es;
    summary = "fitted exponent: casa " + fixed(ec, 3) + ", softmax " + fixed(es, 3) + "\n";
  }
  const auto a = attention::flop_count(attention::AttentionKind::casa, 4096, c.bench_dim);
  const auto b = attention::flop_count(attention::AttentionKind::casa, 8192, c.bench_dim);
  rep["casa_flop_ratio_4096"] = static_cast<double>(b) / static_cast<double>(a);
  rep["flop_crossover_tokens"] = attention::flop_crossover(c.bench_dim);
  write_json_file(fs::path(c.out) / "bench.json", rep);
  os << format_table({"N", "CASA FLOPs", "softmax FLOPs", "CASA ms", "softmax ms"}, table) << summary
     << "casa(8192)/casa(4096) FLOP ratio: " << fixed(rep["casa_flop_ratio_4096"].get<double>(), 4) << "\n";
  return 0;
}

}  // namespace mecasa::cli
