#pragma once

#include <string>
#include <utility>
#include <vector>

#include "diffrec/config.hpp"
#include "diffrec/data.hpp"
#include "diffrec/eval.hpp"
#include "diffrec/latent.hpp"

namespace diffrec::cli {

// Command bodies, callable programmatically (the binary wires these to
// subcommands and maps exceptions to exit codes).

// Writes a split-bundle directory. `regime_arg` is clean | natural |
// temporal | random | random(p).
SplitBundle cmd_prepare(const std::string& source, const std::string& regime_arg,
                        const std::string& out_dir, const RunConfig& cfg);

struct TrainOutput {
  std::string checkpoint_path;
  std::string log_path;
  std::string config_path;
  int best_epoch = 0;
  double best_recall20 = 0.0;
  double best_ndcg20 = 0.0;
  int epochs_run = 0;
};

// Trains the configured model on cfg["data_dir"], writes the best checkpoint,
// the training log, and the resolved config under cfg["out_dir"].
TrainOutput cmd_train(const RunConfig& cfg);

// A trained model reloaded from a checkpoint, with enough metadata to score
// histories the way training did.
struct LoadedModel {
  std::string model;  // diffrec | l-diffrec | t-diffrec | lt-diffrec
  ParamStore store;
  std::map<std::string, std::string> meta;
  NoiseSchedule sched;
  int item_count = 0;
  int t_prime = 0;
  std::uint64_t seed = 0;
  double w_min = 0.3, w_max = 1.0;
  DenoiserNet den;      // interaction-space models
  LatentModel latent;   // latent models
  bool is_latent() const { return model == "l-diffrec" || model == "lt-diffrec"; }
  bool is_temporal() const { return model == "t-diffrec" || model == "lt-diffrec"; }

  DenseMatrix score(const DenseMatrix& histories) const;
};

LoadedModel load_model(const std::string& checkpoint_path);

struct EvalArgs {
  std::string checkpoint;
  std::string bundle_dir;
  std::string out_dir;       // empty: print only
  std::vector<int> ks = {10, 20};
  bool test_split = true;    // false: validation protocol
  bool per_user_csv = false;
};

EvalReport cmd_eval(const EvalArgs& args);

struct InferArgs {
  std::string checkpoint;
  std::string history_path;  // lines: item-index [weight], oldest first
  int k = 10;
};

// Top-K (item, score) pairs for one history, interacted items masked.
std::vector<std::pair<int, double>> cmd_infer(const InferArgs& args);

}  // namespace diffrec::cli
