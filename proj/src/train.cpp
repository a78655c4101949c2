#include "mecasa/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mecasa/log.hpp"
#include "mecasa/ops.hpp"
#include "mecasa/rng.hpp"

namespace mecasa::train {

void TrainConfig::validate() const {
  if (epochs == 0) throw std::invalid_argument("train: epochs must be >= 1");
  if (batch_size == 0) throw std::invalid_argument("train: batch size must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("train: learning rate must be finite and >= 0");
}

OptimizerState OptimizerState::for_params(const ParamList& params, double lr) {
  OptimizerState s;
  s.lr = lr;
  for (const auto& p : params) {
    s.m.emplace_back(p.tensor.numel(), 0.0);
    s.v.emplace_back(p.tensor.numel(), 0.0);
  }
  return s;
}

NonFiniteGradient::NonFiniteGradient(const std::string& param, std::size_t index)
    : std::runtime_error("non-finite gradient in parameter '" + param + "' at element " + std::to_string(index)),
      parameter_(param) {}

TrainingDiverged::TrainingDiverged(std::size_t epoch, double loss)
    : std::runtime_error("training diverged in epoch " + std::to_string(epoch) + " (loss " + std::to_string(loss) +
                         ")"),
      epoch_(epoch) {}

void adam_step(const ParamList& params, OptimizerState& state) {
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw std::invalid_argument("adam: optimizer state tracks " + std::to_string(state.m.size()) + " parameters, got " +
                                std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    if (state.m[i].size() != p.tensor.numel() || state.v[i].size() != p.tensor.numel())
      throw ShapeError("adam: state size mismatch for parameter '" + p.name + "'");
    if (!p.tensor.has_grad()) throw std::logic_error("adam: parameter '" + p.name + "' has no gradient");
    auto g = p.tensor.grad();
    for (std::size_t j = 0; j < g.size(); ++j)
      if (!std::isfinite(g[j])) throw NonFiniteGradient(p.name, j);
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].tensor;
    auto g = t.grad();
    auto w = t.mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      w[j] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

// ---------------------------------------------------------------------------

void SampleSet::validate() const {
  if (shapes.size() != streams.size()) throw std::invalid_argument("sample set: stream/shape count mismatch");
  for (std::size_t s = 0; s < streams.size(); ++s)
    if (streams[s].size() != labels.size() * numel(shapes[s]))
      throw ShapeError("sample set: stream " + std::to_string(s) + " holds " + std::to_string(streams[s].size()) +
                       " values, expected " + std::to_string(labels.size()) + " x " + to_string(shapes[s]));
}

std::vector<Tensor> SampleSet::gather(std::span<const std::size_t> indices) const {
  std::vector<Tensor> out;
  for (std::size_t s = 0; s < streams.size(); ++s) {
    const std::size_t per = numel(shapes[s]);
    Shape shape{indices.size()};
    shape.insert(shape.end(), shapes[s].begin(), shapes[s].end());
    std::vector<double> buf(indices.size() * per);
    for (std::size_t i = 0; i < indices.size(); ++i) {
      if (indices[i] >= size()) throw std::out_of_range("sample index " + std::to_string(indices[i]) + " out of range");
      std::copy_n(streams[s].begin() + static_cast<std::ptrdiff_t>(indices[i] * per), per, buf.begin() + static_cast<std::ptrdiff_t>(i * per));
    }
    out.emplace_back(std::move(shape), std::move(buf));
  }
  return out;
}

SampleSet SampleSet::subset(std::span<const std::size_t> indices) const {
  SampleSet out;
  out.shapes = shapes;
  out.streams.resize(streams.size());
  for (std::size_t s = 0; s < streams.size(); ++s) {
    const std::size_t per = numel(shapes[s]);
    out.streams[s].reserve(indices.size() * per);
    for (std::size_t i : indices) {
      if (i >= size()) throw std::out_of_range("sample index " + std::to_string(i) + " out of range");
      auto first = streams[s].begin() + static_cast<std::ptrdiff_t>(i * per);
      out.streams[s].insert(out.streams[s].end(), first, first + static_cast<std::ptrdiff_t>(per));
    }
  }
  for (std::size_t i : indices) out.labels.push_back(labels[i]);
  return out;
}

SampleSet SampleSet::from_epochs(const data::EpochDataset& ds) {
  SampleSet out;
  out.shapes = {Shape{1, ds.channels, ds.window}};
  out.streams = {ds.data};
  out.labels = ds.labels;
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::vector<double>> snapshot(const ParamList& params) {
  std::vector<std::vector<double>> out;
  for (const auto& p : params) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

void restore(const ParamList& params, const std::vector<std::vector<double>>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].tensor;
    std::copy(values[i].begin(), values[i].end(), t.mutable_data().begin());
  }
}

template <class Fn>
void for_each_batch(std::size_t n, std::size_t batch, Fn&& fn) {
  std::vector<std::size_t> idx(batch);
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t end = std::min(n, start + batch);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    fn(std::span<const std::size_t>(idx));
  }
}

}  // namespace

TrainResult train_model(const model::Classifier& model, const SampleSet& train, const SampleSet& val,
                        const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  train.validate();
  val.validate();
  if (train.size() == 0) throw std::invalid_argument("train: empty training set");
  if (val.size() == 0) throw std::invalid_argument("train: empty validation set");

  ParamList params = model.parameters();
  set_requires_grad(params, true);
  OptimizerState opt = OptimizerState::for_params(params, config.lr);
  Rng rng(config.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  std::vector<std::vector<double>> best;
  double best_acc = -1.0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    if (config.shuffle) rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      const auto inputs = train.gather(idx);
      std::vector<int> labels;
      for (std::size_t i : idx) labels.push_back(train.labels[i]);

      Tape tape;
      Tensor loss;
      {
        TapeScope scope(tape);
        for (const auto& p : params) tape.watch(p.tensor);
        loss = cross_entropy_loss(model.logits(inputs), labels);
        if (!std::isfinite(loss.item())) throw TrainingDiverged(epoch, loss.item());
        tape.backward(loss);
      }
      adam_step(params, opt);
      zero_grad(params);
      loss_sum += loss.item() * static_cast<double>(idx.size());
    }
    EpochRecord rec{epoch, loss_sum / static_cast<double>(train.size()), evaluate(model, val).accuracy};
    if (!std::isfinite(rec.train_loss)) throw TrainingDiverged(epoch, rec.train_loss);
    result.history.push_back(rec);
    if (rec.val_accuracy > best_acc) {
      best_acc = rec.val_accuracy;
      result.best_epoch = epoch;
      best = snapshot(params);
    }
    log::info("epoch " + std::to_string(epoch) + " loss " + std::to_string(rec.train_loss) + " val " +
              std::to_string(rec.val_accuracy));
    if (on_epoch) on_epoch(rec);
  }
  restore(params, best);
  result.best_val_accuracy = best_acc;
  return result;
}

std::vector<int> predict(const model::Classifier& model, const SampleSet& samples, std::size_t batch_size) {
  samples.validate();
  std::vector<int> out;
  out.reserve(samples.size());
  for_each_batch(samples.size(), batch_size, [&](std::span<const std::size_t> idx) {
    const Tensor logits = model.logits(samples.gather(idx));
    const std::size_t k = logits.dim(1);
    auto z = logits.data();
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto row = z.subspan(b * k, k);
      out.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
    }
  });
  return out;
}

Evaluation evaluate(const model::Classifier& model, const SampleSet& samples, std::size_t num_classes,
                    std::size_t batch_size) {
  Evaluation e;
  e.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  const auto pred = predict(model, samples, batch_size);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto t = static_cast<std::size_t>(samples.labels[i]);
    const auto p = static_cast<std::size_t>(pred[i]);
    if (t >= num_classes || p >= num_classes) throw std::out_of_range("evaluate: class index out of range");
    ++e.confusion[t][p];
    correct += t == p;
  }
  e.accuracy = pred.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(pred.size());
  return e;
}

double mean_loss(const model::Classifier& model, const SampleSet& samples, std::size_t batch_size) {
  samples.validate();
  double total = 0.0;
  for_each_batch(samples.size(), batch_size, [&](std::span<const std::size_t> idx) {
    std::vector<int> labels;
    for (std::size_t i : idx) labels.push_back(samples.labels[i]);
    total += cross_entropy_loss(model.logits(samples.gather(idx)), labels).item() * static_cast<double>(idx.size());
  });
  return total / static_cast<double>(samples.size());
}

ConfidenceInterval confidence_interval(std::span<const double> values) {
  if (values.size() < 2) throw std::invalid_argument("confidence interval needs at least 2 values");
  const double k = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / k;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (k - 1.0));
  return {mean, 1.96 * sd / std::sqrt(k)};
}

FoldResult run_partition(const ModelFactory& factory, const SampleSet& data, const data::Partition& partition,
                         std::size_t fold, const TrainConfig& config, const FoldPreparer& prepare,
                         const EpochCallback& on_epoch) {
  data::check_partition(partition, data.size());
  SampleSet train = data.subset(partition.train);
  SampleSet val = data.subset(partition.val);
  SampleSet test = data.subset(partition.test);
  if (prepare) prepare(fold, train, val, test);
  FoldResult r;
  r.fold = fold;
  r.partition = partition;
  r.model = factory(fold);
  r.training = train_model(*r.model, train, val, config, on_epoch);
  r.test = evaluate(*r.model, test);
  return r;
}

std::vector<data::Partition> cv_partitions(std::span<const int> labels,
                                           const std::vector<std::vector<std::size_t>>& folds,
                                           double val_fraction, std::uint64_t seed) {
  data::check_folds(folds, labels.size());
  std::vector<data::Partition> out;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    std::vector<char> in_test(labels.size(), 0);
    for (std::size_t i : folds[f]) in_test[i] = 1;
    std::vector<std::size_t> pool;
    std::vector<int> pool_labels;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (!in_test[i]) {
        pool.push_back(i);
        pool_labels.push_back(labels[i]);
      }
    data::SplitSpec spec{1.0 - val_fraction, val_fraction, 0.0, 0, seed + f};
    const auto inner = data::stratified_holdout(pool_labels, spec);
    data::Partition p;
    for (std::size_t i : inner.train) p.train.push_back(pool[i]);
    for (std::size_t i : inner.val) p.val.push_back(pool[i]);
    for (std::size_t i : inner.test) p.train.push_back(pool[i]);  // rounding leftovers stay in training
    std::sort(p.train.begin(), p.train.end());
    p.test = folds[f];
    data::check_partition(p, labels.size());
    out.push_back(std::move(p));
  }
  return out;
}

MetricsReport summarize(std::vector<FoldResult> folds) {
  MetricsReport r;
  for (const auto& f : folds) {
    r.accuracies.push_back(f.test.accuracy);
    if (r.confusion.empty()) r.confusion = f.test.confusion;
    else
      for (std::size_t i = 0; i < r.confusion.size(); ++i)
        for (std::size_t j = 0; j < r.confusion[i].size(); ++j) r.confusion[i][j] += f.test.confusion[i][j];
  }
  if (r.accuracies.size() >= 2) {
    const auto ci = confidence_interval(r.accuracies);
    r.mean = ci.mean;
    r.half_width = ci.half_width;
  } else if (!r.accuracies.empty()) {
    r.mean = r.accuracies[0];
  }
  r.folds = std::move(folds);
  return r;
}

MetricsReport cross_validate(const ModelFactory& factory, const SampleSet& data,
                             const std::vector<data::Partition>& partitions, const TrainConfig& config,
                             const FoldPreparer& prepare,
                             const std::function<EpochCallback(std::size_t fold)>& epoch_callback,
                             const FoldCallback& on_fold) {
  if (partitions.size() < 2) throw std::invalid_argument("cross-validation needs k >= 2 folds");
  std::vector<char> seen(data.size(), 0);
  for (const auto& p : partitions)
    for (std::size_t i : p.test) {
      if (seen[i]) throw std::logic_error("cross-validation: epoch " + std::to_string(i) + " in two test folds");
      seen[i] = 1;
    }
  std::vector<FoldResult> folds;
  for (std::size_t f = 0; f < partitions.size(); ++f) {
    folds.push_back(run_partition(factory, data, partitions[f], f, config, prepare,
                                  epoch_callback ? epoch_callback(f) : EpochCallback{}));
    if (on_fold) on_fold(folds.back());
  }
  return summarize(std::move(folds));
}

}  // namespace mecasa::train
