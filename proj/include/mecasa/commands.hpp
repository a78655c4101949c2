#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mecasa/backbone.hpp"
#include "mecasa/pipeline.hpp"
#include "mecasa/train.hpp"

namespace mecasa::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

/// Effective settings of one CLI invocation: built-in defaults, overridden
/// by a JSON config file, overridden by flags.
struct RunConfig {
  std::string data;  // raw root (validate/preprocess/ablate) or epoch dir (train)
  std::string out = "out";
  std::string modality = "eeg";
  std::optional<std::string> representation;  // fnirs only
  std::string dims = "16-32";
  std::uint64_t seed = 0;

  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  double lr = 1e-4;
  std::string protocol = "holdout";  // holdout | cv
  std::size_t folds = 5;
  double val_fraction = 0.15;
  std::size_t blocks = 2;  // per stage
  double mlp_ratio = 2.0;

  std::size_t trials = 200;
  double snr = 2.0;

  std::string eeg_run;
  std::string fnirs_run;
  std::size_t fusion_hidden = 64;

  std::string grid = "all";  // dims | repr | all
  std::vector<std::string> dims_grid{"16-32", "32-64", "48-56", "64-128"};
  std::vector<std::string> repr_grid{"od10", "hbt", "od128"};

  std::vector<std::size_t> bench_tokens{256, 512, 1024, 2048, 4096, 8192};
  std::size_t bench_dim = 64;
  std::size_t bench_reps = 20;

  data::PipelineConfig pipeline;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  /// Pipeline settings with modality/representation filled in.
  data::PipelineConfig pipeline_config() const;
  train::TrainConfig train_config() const;
};

json to_json(const RunConfig& c);
/// Overrides the fields present in `j`; unknown keys are rejected.
void apply_json(RunConfig& c, const json& j);
void apply_config_file(RunConfig& c, const fs::path& path);

// --- subcommands; each returns the process exit code ------------------------

int cmd_synth(const RunConfig& c, std::ostream& os);
int cmd_validate(const RunConfig& c, std::ostream& os);
int cmd_preprocess(const RunConfig& c, std::ostream& os);
int cmd_train(const RunConfig& c, std::ostream& os);
int cmd_fuse(const RunConfig& c, std::ostream& os);
int cmd_ablate(const RunConfig& c, std::ostream& os);
int cmd_bench(const RunConfig& c, std::ostream& os);

// --- building blocks shared by the subcommands and tests ---------------------

/// Epoch dataset with a 70/15/15 holdout split and k stratified folds.
data::EpochDataset preprocess_dataset(const RunConfig& c);

/// Backbone configuration for (1, channels, window) epochs at `dims`.
model::BackboneConfig backbone_config_for(const data::EpochDataset& ds, const RunConfig& c);

/// Runs the configured protocol (holdout or k-fold CV) on `ds`. When
/// `out_dir` is set, writes checkpoints, metrics.jsonl and report.json there.
train::MetricsReport train_on_dataset(const data::EpochDataset& ds, const RunConfig& c,
                                      const std::optional<fs::path>& out_dir);

struct CellResult {
  std::string name;
  bool ok = false;
  double mean = 0.0;
  std::optional<double> half_width;
  std::vector<double> accuracies;
  std::string error;
};

/// Runs every cell; an exception in one cell marks only that cell FAILED.
std::vector<CellResult> run_cells(const std::vector<std::string>& names,
                                  const std::function<train::MetricsReport(const std::string&)>& run);

/// "0.9512 ± 0.0123", "0.9512" without an interval, or "FAILED".
std::string format_cell(const CellResult& r);

/// Plain-text table with aligned columns.
std::string format_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows);

struct BenchRow {
  std::size_t tokens = 0;
  std::uint64_t casa_flops = 0;
  std::uint64_t softmax_flops = 0;
  double casa_seconds = 0.0;
  double softmax_seconds = 0.0;
};

/// Least-squares slope of log(y) against log(x).
double loglog_slope(std::span<const double> x, std::span<const double> y);

/// Median wall-clock of CASA on [1,d,16,N/16] and softmax attention on [N,d].
std::vector<BenchRow> bench_attention(const std::vector<std::size_t>& tokens, std::size_t dim, std::size_t reps,
                                      std::uint64_t seed);

}  // namespace mecasa::cli
