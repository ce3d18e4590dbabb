#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "diffrec/data.hpp"
#include "diffrec/matrix.hpp"
#include "diffrec/nn.hpp"
#include "diffrec/params.hpp"
#include "diffrec/rng.hpp"
#include "diffrec/schedule.hpp"
#include "diffrec/tape.hpp"

namespace diffrec {

// Step embedding width is fixed for this model family.
inline constexpr int kStepEmbedDim = 10;

enum class Objective { kX0Elbo, kEpsElbo };
enum class StepSampling { kUniform, kImportance };

Objective objective_from_name(const std::string& s);
std::string objective_name(Objective o);
StepSampling sampling_from_name(const std::string& s);
std::string sampling_name(StepSampling s);

// Denoiser MLP descriptor. The net consumes the corrupted vector concatenated
// with the step embedding and predicts either the clean vector (x0 objective)
// or the injected noise (eps objective). Tensors live in a ParamStore under
// `prefix` so several nets can share one store.
struct DenoiserNet {
  std::string prefix = "den/";
  MlpSpec spec;
  int data_dim = 0;
  Objective objective = Objective::kX0Elbo;
  double input_dropout = 0.5;  // on the interaction part of the input, training only

  static DenoiserNet create(ParamStore& store, int data_dim,
                            const std::vector<int>& hidden, Objective objective,
                            double input_dropout, Rng& rng,
                            const std::string& prefix = "den/");
  // Descriptor for an already-populated store (e.g. a loaded checkpoint).
  static DenoiserNet describe(int data_dim, const std::vector<int>& hidden,
                              Objective objective, double input_dropout,
                              const std::string& prefix = "den/");

  // Taped forward. Applies input dropout to x_t when train_mode is set.
  Tape::NodeId apply(Tape& tape, ParamStore& store, Tape::NodeId x_t, int t,
                     bool train_mode, Rng* rng) const;
  // Plain forward of the raw net output (x0-hat or eps-hat).
  DenseMatrix eval(const ParamStore& store, const DenseMatrix& x_t, int t) const;
};

// Raw prediction with optional training-time input dropout.
DenseMatrix denoise(const ParamStore& store, const DenoiserNet& net,
                    const DenseMatrix& x_t, int t, bool train_mode, Rng* rng);

// Weight applied to the squared reconstruction error of the step-t loss:
// 1 for t = 1 and for the noise-free schedule, otherwise half the difference
// of consecutive signal-to-noise ratios abar/(1-abar).
double loss_weight(const NoiseSchedule& sched, int t);

// Step-t loss as a tape node (1x1): corrupt x0 to x_t with the given eps,
// predict, and weight the batch-averaged squared error. x0 may itself be a
// differentiable node (latent training).
Tape::NodeId loss_t_node(Tape& tape, const NoiseSchedule& sched, ParamStore& store,
                         const DenoiserNet& net, Tape::NodeId x0, int t,
                         const DenseMatrix& eps, bool train_mode, Rng* rng);

// Noise-prediction loss node; rejects the noise-free schedule.
Tape::NodeId loss_eps_node(Tape& tape, const NoiseSchedule& sched, ParamStore& store,
                           const DenoiserNet& net, Tape::NodeId x0, int t,
                           const DenseMatrix& eps, bool train_mode, Rng* rng);

// Scalar conveniences (no dropout, fresh tape).
double loss_t(const NoiseSchedule& sched, ParamStore& store, const DenoiserNet& net,
              const DenseMatrix& x0, int t, const DenseMatrix& eps);
double loss_eps(const NoiseSchedule& sched, ParamStore& store, const DenoiserNet& net,
                const DenseMatrix& x0, int t, const DenseMatrix& eps);

// Loss-aware step sampler: keeps the last `history` observed losses per step;
// once every step has a full buffer, steps are drawn with probability
// proportional to the root mean square of their recent losses. Uniform until
// then.
class ImportanceSampler {
 public:
  explicit ImportanceSampler(int steps, int history = 10);
  void record(int t, double loss_value);
  bool warm() const;
  std::vector<double> probabilities() const;  // p_1..p_T (index 0 = p_1)
  // Draws (t, p_t); the caller weights the loss as L_t / p_t.
  std::pair<int, double> sample(Rng& rng);

 private:
  int steps_;
  int history_;
  std::vector<std::vector<double>> buf_;
  std::vector<int> filled_, pos_;
};

struct TrainConfig {
  Objective objective = Objective::kX0Elbo;
  int steps = 5;   // T
  int t_prime = 0; // corruption steps at inference
  double noise_scale = 1e-4;
  double noise_min = 5e-4;
  double noise_max = 5e-3;
  double lr = 1e-4;
  int batch_size = 400;
  int epochs = 1000;
  StepSampling sampler = StepSampling::kImportance;
  std::uint64_t seed = 1;
  std::vector<int> hidden = {200, 600};
  double dropout = 0.5;
  int patience = 20;    // epochs without validation improvement
  int eval_every = 1;   // validation cadence in epochs
  bool t_per_row = false;

  void validate() const;
  NoiseSchedule schedule() const {
    return build_schedule(noise_scale, noise_min, noise_max, steps);
  }
};

struct TrainResult {
  ParamStore store;  // best-validation parameters (moments included)
  DenoiserNet net;
  NoiseSchedule sched;
  std::vector<std::string> log_lines;
  int best_epoch = 0;
  double best_recall20 = -1.0;  // any first validation score becomes the best
  double best_ndcg20 = 0.0;
  double first_loss = 0.0;
  double last_loss = 0.0;
  int epochs_run = 0;
};

// One reverse pass: x_hat or a per-user batch of them. The denoiser is
// abstract so tests can substitute oracles.
using DenoiserEval = std::function<DenseMatrix(const DenseMatrix& x_t, int t)>;

// Corrupt the history for t_prime steps (none for t_prime = 0), then run the
// deterministic reverse chain down to the reconstruction step. `rng` is only
// consumed when t_prime > 0 on a noisy schedule.
DenseMatrix infer(const DenoiserEval& denoiser, const NoiseSchedule& sched,
                  const DenseMatrix& x0, int t_prime, Rng* rng = nullptr);

// Scoring closure for a trained net (handles the eps-objective conversion
// from predicted noise back to a clean-vector estimate).
DenoiserEval make_scorer(const ParamStore& store, const DenoiserNet& net,
                         const NoiseSchedule& sched);

// Mini-batch training with validation-based early stopping. `train_matrix`
// supplies the model inputs/targets (it may carry recency weights); `bundle`
// supplies the validation sets used for checkpoint selection. `resume`
// restores parameters, moments, and the optimizer step counter from an
// earlier checkpoint before training.
TrainResult train(const InteractionMatrix& train_matrix, const SplitBundle& bundle,
                  const TrainConfig& cfg, const ParamStore* resume = nullptr);

// Copy matching tensors (values and moments) and the step counter from
// `from` into `into`; shape mismatches are configuration errors.
void restore_params(ParamStore& into, const ParamStore& from);

}  // namespace diffrec
