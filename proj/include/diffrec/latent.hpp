#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "diffrec/data.hpp"
#include "diffrec/diffusion.hpp"
#include "diffrec/matrix.hpp"
#include "diffrec/nn.hpp"
#include "diffrec/params.hpp"
#include "diffrec/rng.hpp"
#include "diffrec/tape.hpp"

namespace diffrec {

// Latent pipeline: items are clustered into categories, each category's slice
// of the interaction vector is compressed by its own variational encoder, the
// corruption/denoising chain runs in the concatenated latent space, and
// per-category decoders scatter logits back to items.

// Rank-d factorization of the training matrix; item representation = right
// singular vectors scaled by their singular values. Block power iteration on
// the item Gram matrix, touching only stored interactions.
DenseMatrix item_embeddings_svd(const InteractionMatrix& train, int d,
                                std::uint64_t seed, int max_iters = 80);

struct ClusterModel {
  int categories = 0;
  std::vector<int> assignment;          // item -> category
  std::vector<std::vector<int>> items;  // category -> item ids, ascending
  std::vector<int> latent_dims;         // per category, sums to latent_total
  std::vector<int> latent_offsets;      // prefix sums into the concatenated z

  int latent_total() const;
  int item_count() const { return static_cast<int>(assignment.size()); }
  void validate() const;
};

// Lloyd's algorithm with k-means++ seeding; empty clusters are repaired by
// stealing the farthest member of the largest cluster. Deterministic for a
// fixed seed. latent dims are left unassigned.
ClusterModel kmeans(const DenseMatrix& item_embedding, int categories,
                    std::uint64_t seed, int max_iters = 100);

// Per-category latent sizes proportional to category item counts
// (largest-remainder rounding, every category at least 1).
void assign_latent_dims(ClusterModel& cm, int latent_total);

void save_cluster_assignment(const ClusterModel& cm, const std::string& path);
ClusterModel load_cluster_assignment(const std::string& path, int latent_total);

// Per-category encoder/decoder stack. Encoder c maps |I_c| -> hidden ->
// 2*latent_c (mean and log-variance, the latter clamped to [-10, 10]);
// decoder c maps latent_c -> hidden -> |I_c| logits. Tensors live under
// "enc<c>/" and "dec<c>/".
struct VaeStack {
  std::vector<MlpSpec> enc_specs;
  std::vector<MlpSpec> dec_specs;
  double gamma_max = 0.3;          // KL weight ceiling
  long long anneal_steps = 0;      // optimizer steps to ramp gamma (0 = constant)

  static VaeStack create(ParamStore& store, const ClusterModel& cm, int hidden_width,
                         double gamma_max, long long anneal_steps, Rng& rng);
  static VaeStack describe(const ClusterModel& cm, int hidden_width,
                           double gamma_max, long long anneal_steps);
  double gamma_at(long long step) const;
};

// Plain (inference-path) encode of the whole batch: deterministic latent
// means, concatenated in category order.
DenseMatrix encode_mean(const ParamStore& store, const VaeStack& vae,
                        const ClusterModel& cm, const DenseMatrix& x0);

struct EncodeResult {
  DenseMatrix z0;                  // batch x latent_total
  std::vector<DenseMatrix> mu;     // per category
  std::vector<DenseMatrix> sigma;  // per category (std dev, not variance)
};

// Reparameterized (or deterministic) encode with the per-category Gaussians
// exposed. rng is only consumed when deterministic == false.
EncodeResult encode(const ParamStore& store, const VaeStack& vae,
                    const ClusterModel& cm, const DenseMatrix& x0, Rng* rng,
                    bool deterministic);

// Per-category decoder logits scattered back to global item positions.
DenseMatrix decode(const ParamStore& store, const VaeStack& vae,
                   const ClusterModel& cm, const DenseMatrix& z0_hat);

// Negative per-category ELBO: multinomial log-likelihood of x0 under the
// decoded logits minus gamma * KL(q(z|x) || N(0, I)), summed over categories,
// negated and batch-averaged. rng == nullptr uses deterministic latents.
double vae_loss(ParamStore& store, const VaeStack& vae, const ClusterModel& cm,
                const DenseMatrix& x0, Rng* rng, double gamma_now);

// Taped version used by joint training (exposed for gradient checks):
// returns the loss node plus the concatenated latent node feeding the
// denoiser chain. eps_rng == nullptr encodes deterministically.
struct VaeLossNodes {
  Tape::NodeId loss = -1;
  Tape::NodeId z0 = -1;
};
VaeLossNodes vae_loss_taped(Tape& tape, ParamStore& store, const VaeStack& vae,
                            const ClusterModel& cm, const DenseMatrix& x0,
                            Rng* eps_rng, double gamma_now);

struct LatentConfig {
  TrainConfig base;       // optimizer/schedule/sampler settings
  int categories = 2;
  int latent_total = 300;
  double lambda_diff = 0.1;  // weight of the latent reconstruction-chain loss
  double gamma_max = 0.3;
  int anneal_epochs = 200;   // gamma ramp measured in epochs worth of steps
  int svd_dim = 64;

  void validate() const;
};

struct LatentModel {
  ClusterModel cm;
  VaeStack vae;
  DenoiserNet den;
  NoiseSchedule sched;
};

struct LatentTrainResult {
  ParamStore store;
  LatentModel model;
  std::vector<std::string> log_lines;
  int best_epoch = 0;
  double best_recall20 = -1.0;
  double best_ndcg20 = 0.0;
  double first_loss = 0.0;
  double last_loss = 0.0;
  int epochs_run = 0;
};

// Joint optimization of encoders, decoders, and the latent denoiser:
// total = vae_loss + lambda * step_loss(z0), one optimizer step per batch.
LatentTrainResult train_latent(const InteractionMatrix& train_matrix,
                               const SplitBundle& bundle, const LatentConfig& cfg,
                               const ParamStore* resume = nullptr);

// Deterministic encode -> latent reverse chain -> decode.
DenseMatrix infer_latent(const ParamStore& store, const LatentModel& model,
                         const DenseMatrix& x0, int t_prime, Rng* rng = nullptr);

// Exact trainable-scalar counts keyed "encoders" / "decoders" / "denoiser" /
// "other" / "total".
std::map<std::string, long long> count_params(const ParamStore& store);

}  // namespace diffrec
