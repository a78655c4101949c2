#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mecasa/data.hpp"
#include "mecasa/model.hpp"

namespace mecasa::train {

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  double lr = 1e-4;
  std::uint64_t seed = 0;
  bool shuffle = true;

  void validate() const;
};

/// Adam state: one first/second moment buffer per parameter.
struct OptimizerState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t t = 0;
  std::vector<std::vector<double>> m, v;

  static OptimizerState for_params(const ParamList& params, double lr);
};

/// Thrown by adam_step on a NaN/inf gradient; names the parameter.
class NonFiniteGradient : public std::runtime_error {
 public:
  NonFiniteGradient(const std::string& param, std::size_t index);
  const std::string& parameter() const { return parameter_; }

 private:
  std::string parameter_;
};

/// One bias-corrected Adam update from the gradients stored on `params`.
/// Every gradient is checked before any parameter is written.
void adam_step(const ParamList& params, OptimizerState& state);

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t epoch, double loss);
  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t epoch_;
};

/// Labelled samples with one or more input streams (one per model input).
/// Stream s stores sample i at data[s][i * numel(shapes[s])].
struct SampleSet {
  std::vector<Shape> shapes;  // per-sample shape of each stream
  std::vector<std::vector<double>> streams;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  /// Batched tensors [n, shape...] for the selected samples.
  std::vector<Tensor> gather(std::span<const std::size_t> indices) const;
  SampleSet subset(std::span<const std::size_t> indices) const;
  void validate() const;

  /// Single-stream set viewing an epoch dataset as [1, channels, window] samples.
  static SampleSet from_epochs(const data::EpochDataset& ds);
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0.0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch Adam on cross-entropy. After each epoch the model is scored on
/// `val`; the parameters of the best epoch (earliest on ties) are restored
/// at the end. Throws TrainingDiverged if the epoch loss is not finite.
TrainResult train_model(const model::Classifier& model, const SampleSet& train, const SampleSet& val,
                        const TrainConfig& config, const EpochCallback& on_epoch = {});

struct Evaluation {
  double accuracy = 0.0;
  /// confusion[true][predicted]
  std::vector<std::vector<std::size_t>> confusion;
};

std::vector<int> predict(const model::Classifier& model, const SampleSet& samples, std::size_t batch_size = 64);
Evaluation evaluate(const model::Classifier& model, const SampleSet& samples, std::size_t num_classes = 2,
                    std::size_t batch_size = 64);
double mean_loss(const model::Classifier& model, const SampleSet& samples, std::size_t batch_size = 64);

struct ConfidenceInterval {
  double mean = 0.0;
  double half_width = 0.0;
};

/// mean +- 1.96 * sample_std / sqrt(k). Needs at least two values.
ConfidenceInterval confidence_interval(std::span<const double> values);

struct FoldResult {
  std::size_t fold = 0;
  data::Partition partition;
  TrainResult training;
  Evaluation test;
  std::shared_ptr<model::Classifier> model;  // trained, best-validation parameters
};

struct MetricsReport {
  std::vector<FoldResult> folds;
  std::vector<double> accuracies;
  double mean = 0.0;
  /// Empty for a single holdout run, where no interval is defined.
  std::optional<double> half_width;
  std::vector<std::vector<std::size_t>> confusion;  // summed over folds
};

using ModelFactory = std::function<std::unique_ptr<model::Classifier>(std::size_t fold)>;
/// Fits anything data-dependent (e.g. standardization) on the training
/// part and applies it to all three parts in place.
using FoldPreparer = std::function<void(std::size_t fold, SampleSet& train, SampleSet& val, SampleSet& test)>;

/// Trains a fresh model on `partition.train`, selects on `partition.val`,
/// scores on `partition.test`.
FoldResult run_partition(const ModelFactory& factory, const SampleSet& data, const data::Partition& partition,
                         std::size_t fold, const TrainConfig& config, const FoldPreparer& prepare = {},
                         const EpochCallback& on_epoch = {});

/// Per fold f: test = folds[f]; the remaining pool is split stratified into
/// train and a `val_fraction` validation part with seed `seed + f`.
std::vector<data::Partition> cv_partitions(std::span<const int> labels,
                                           const std::vector<std::vector<std::size_t>>& folds,
                                           double val_fraction, std::uint64_t seed);

using FoldCallback = std::function<void(const FoldResult&)>;

MetricsReport cross_validate(const ModelFactory& factory, const SampleSet& data,
                             const std::vector<data::Partition>& partitions, const TrainConfig& config,
                             const FoldPreparer& prepare = {},
                             const std::function<EpochCallback(std::size_t fold)>& epoch_callback = {},
                             const FoldCallback& on_fold = {});

/// Aggregates fold results into accuracies, mean, CI (k >= 2) and summed confusion.
MetricsReport summarize(std::vector<FoldResult> folds);

}  // namespace mecasa::train
