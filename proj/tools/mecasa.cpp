#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mecasa/commands.hpp"

namespace {

using mecasa::cli::RunConfig;

// Flag values stay unset unless given, so a config file can fill the gaps.
struct Flags {
  std::string config;
  std::optional<std::string> data, out, modality, repr, dims, protocol, eeg_run, fnirs_run, grid;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs, batch_size, folds, trials, blocks, hidden, dim, reps;
  std::optional<double> lr, snr, val_fraction;
  std::vector<std::size_t> tokens;
};

void add_common(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "JSON config file (flags override its values)");
  app->add_option("--modality", f.modality, "eeg or fnirs");
  app->add_option("--repr", f.repr, "fNIRS representation: od10, hbt or od128");
  app->add_option("--dims", f.dims, "stage embedding dims, e.g. 16-32");
  app->add_option("--seed", f.seed, "random seed");
  app->add_option("--out", f.out, "output directory");
}

void add_training(CLI::App* app, Flags& f) {
  app->add_option("--epochs", f.epochs, "training epochs");
  app->add_option("--batch-size", f.batch_size, "mini-batch size");
  app->add_option("--lr", f.lr, "Adam learning rate");
  app->add_option("--protocol", f.protocol, "holdout or cv");
  app->add_option("--folds", f.folds, "number of CV folds");
  app->add_option("--val-fraction", f.val_fraction, "validation share of each CV training pool");
  app->add_option("--blocks", f.blocks, "CASA blocks per stage");
}

template <class T>
void set_if(const std::optional<T>& src, T& dst) {
  if (src) dst = *src;
}

RunConfig resolve(const Flags& f) {
  RunConfig c;
  if (!f.config.empty()) mecasa::cli::apply_config_file(c, f.config);
  set_if(f.data, c.data);
  set_if(f.out, c.out);
  set_if(f.modality, c.modality);
  if (f.repr) c.representation = *f.repr;
  set_if(f.dims, c.dims);
  set_if(f.seed, c.seed);
  set_if(f.epochs, c.epochs);
  set_if(f.batch_size, c.batch_size);
  set_if(f.lr, c.lr);
  set_if(f.protocol, c.protocol);
  set_if(f.folds, c.folds);
  set_if(f.val_fraction, c.val_fraction);
  set_if(f.blocks, c.blocks);
  set_if(f.trials, c.trials);
  set_if(f.snr, c.snr);
  set_if(f.eeg_run, c.eeg_run);
  set_if(f.fnirs_run, c.fnirs_run);
  set_if(f.hidden, c.fusion_hidden);
  set_if(f.grid, c.grid);
  set_if(f.dim, c.bench_dim);
  set_if(f.reps, c.bench_reps);
  if (!f.tokens.empty()) c.bench_tokens = f.tokens;
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MECASA: EEG/fNIRS classification with convolutional self-attention"};
  app.require_subcommand(1);
  Flags f;

  auto* synth = app.add_subcommand("synth", "write a synthetic hybrid EEG/fNIRS dataset");
  add_common(synth, f);
  synth->add_option("--trials", f.trials, "number of trials (multiple of 10)");
  synth->add_option("--snr", f.snr, "task effect size relative to the noise");

  auto* validate = app.add_subcommand("validate", "check every recording under a raw dataset root");
  add_common(validate, f);
  validate->add_option("--data", f.data, "raw dataset root");

  auto* preprocess = app.add_subcommand("preprocess", "filter, resample and epoch one modality");
  add_common(preprocess, f);
  preprocess->add_option("--data", f.data, "raw dataset root");
  preprocess->add_option("--folds", f.folds, "number of stored CV folds");

  auto* train = app.add_subcommand("train", "train and evaluate the backbone on preprocessed epochs");
  add_common(train, f);
  add_training(train, f);
  train->add_option("--data", f.data, "preprocessed epoch directory");

  auto* fuse = app.add_subcommand("fuse", "train the fusion head on two trained backbone runs");
  add_common(fuse, f);
  add_training(fuse, f);
  fuse->add_option("--eeg-run", f.eeg_run, "EEG train output directory");
  fuse->add_option("--fnirs-run", f.fnirs_run, "fNIRS train output directory");
  fuse->add_option("--hidden", f.hidden, "fusion hidden width");

  auto* ablate = app.add_subcommand("ablate", "run the embedding-dims and representation ablations");
  add_common(ablate, f);
  add_training(ablate, f);
  ablate->add_option("--data", f.data, "raw dataset root");
  ablate->add_option("--grid", f.grid, "dims, repr or all");

  auto* bench = app.add_subcommand("bench", "time CASA against softmax attention");
  add_common(bench, f);
  bench->add_option("--tokens", f.tokens, "token counts (multiples of 16)");
  bench->add_option("--dim", f.dim, "embedding dim");
  bench->add_option("--reps", f.reps, "timed repetitions per point");

  CLI11_PARSE(app, argc, argv);

  try {
    const RunConfig c = resolve(f);
    if (*synth) return mecasa::cli::cmd_synth(c, std::cout);
    if (*validate) return mecasa::cli::cmd_validate(c, std::cout);
    if (*preprocess) return mecasa::cli::cmd_preprocess(c, std::cout);
    if (*train) return mecasa::cli::cmd_train(c, std::cout);
    if (*fuse) return mecasa::cli::cmd_fuse(c, std::cout);
    if (*ablate) return mecasa::cli::cmd_ablate(c, std::cout);
    if (*bench) return mecasa::cli::cmd_bench(c, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
