#include "diffrec/latent.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "diffrec/errors.hpp"
#include "diffrec/eval.hpp"

namespace diffrec {

namespace {

// W <- A^T A V without materializing the Gram matrix.
DenseMatrix gram_times(const InteractionMatrix& a, const DenseMatrix& v) {
  DenseMatrix w(v.rows, v.cols);
  std::vector<double> s(v.cols);
  for (int u = 0; u < a.user_count; ++u) {
    const auto& row = a.rows[u];
    if (row.empty()) continue;
    std::fill(s.begin(), s.end(), 0.0);
    for (const auto& it : row) {
      const double* vr = v.row_ptr(it.item);
      for (int c = 0; c < v.cols; ++c) s[c] += it.weight * vr[c];
    }
    for (const auto& it : row) {
      double* wr = w.row_ptr(it.item);
      for (int c = 0; c < v.cols; ++c) wr[c] += it.weight * s[c];
    }
  }
  return w;
}

// Modified Gram-Schmidt over columns; degenerate columns are re-randomized.
void orthonormalize_cols(DenseMatrix& v, Rng& rng) {
  for (int k = 0; k < v.cols; ++k) {
    for (int attempt = 0; attempt < 4; ++attempt) {
      for (int j = 0; j < k; ++j) {
        double dot = 0.0;
        for (int r = 0; r < v.rows; ++r) dot += v.at(r, j) * v.at(r, k);
        for (int r = 0; r < v.rows; ++r) v.at(r, k) -= dot * v.at(r, j);
      }
      double norm = 0.0;
      for (int r = 0; r < v.rows; ++r) norm += v.at(r, k) * v.at(r, k);
      norm = std::sqrt(norm);
      if (norm > 1e-12) {
        for (int r = 0; r < v.rows; ++r) v.at(r, k) /= norm;
        break;
      }
      for (int r = 0; r < v.rows; ++r) v.at(r, k) = rng.normal();
    }
  }
}

}  // namespace

DenseMatrix item_embeddings_svd(const InteractionMatrix& train, int d,
                                std::uint64_t seed, int max_iters) {
  int items = train.item_count, users = train.user_count;
  if (d < 1 || d > std::min(users, items))
    throw ConfigError("svd rank d must lie in [1, min(users, items)]");
  if (train.interaction_count() == 0)
    throw DataError("cannot factorize an all-zero interaction matrix");

  Rng rng(seed);
  DenseMatrix v(items, d);
  for (auto& x : v.data) x = rng.normal();
  orthonormalize_cols(v, rng);

  std::vector<double> prev_trace(d, 0.0);
  for (int iter = 0; iter < max_iters; ++iter) {
    DenseMatrix w = gram_times(train, v);
    // Rayleigh quotients before orthonormalization: sigma_k^2 estimates.
    std::vector<double> trace(d, 0.0);
    for (int k = 0; k < d; ++k)
      for (int r = 0; r < items; ++r) trace[k] += v.at(r, k) * w.at(r, k);
    orthonormalize_cols(w, rng);
    v = std::move(w);
    double drift = 0.0;
    for (int k = 0; k < d; ++k)
      drift = std::max(drift, std::abs(trace[k] - prev_trace[k]) /
                                  (std::abs(trace[k]) + 1e-12));
    prev_trace = trace;
    if (iter > 2 && drift < 1e-12) break;
  }

  DenseMatrix w = gram_times(train, v);
  DenseMatrix emb(items, d);
  for (int k = 0; k < d; ++k) {
    double sig_sq = 0.0;
    for (int r = 0; r < items; ++r) sig_sq += v.at(r, k) * w.at(r, k);
    double sigma = std::sqrt(std::max(0.0, sig_sq));
    for (int r = 0; r < items; ++r) emb.at(r, k) = v.at(r, k) * sigma;
  }
  check_finite(emb, "item embeddings");
  return emb;
}

int ClusterModel::latent_total() const {
  int n = 0;
  for (int l : latent_dims) n += l;
  return n;
}

void ClusterModel::validate() const {
  if (categories < 1) throw ConfigError("cluster model: need at least one category");
  std::vector<char> seen(assignment.size(), 0);
  if (static_cast<int>(items.size()) != categories)
    throw ConfigError("cluster model: category list size mismatch");
  for (int c = 0; c < categories; ++c) {
    if (items[c].empty()) throw ConfigError("cluster model: empty category");
    for (int i : items[c]) {
      if (i < 0 || i >= item_count() || seen[i] || assignment[i] != c)
        throw ConfigError("cluster model: assignment/items inconsistency");
      seen[i] = 1;
    }
  }
  for (char s : seen)
    if (!s) throw ConfigError("cluster model: item not covered by any category");
  if (!latent_dims.empty()) {
    if (static_cast<int>(latent_dims.size()) != categories)
      throw ConfigError("cluster model: latent dims size mismatch");
    for (int l : latent_dims)
      if (l < 1) throw ConfigError("cluster model: latent dims must be >= 1");
  }
}

ClusterModel kmeans(const DenseMatrix& item_embedding, int categories,
                    std::uint64_t seed, int max_iters) {
  int n = item_embedding.rows, d = item_embedding.cols;
  if (categories < 1) throw ConfigError("kmeans: need at least one category");
  if (categories > n)
    throw ConfigError("kmeans: more categories (" + std::to_string(categories) +
                      ") than items (" + std::to_string(n) + ")");
  Rng rng(seed);

  auto dist_sq = [&](int row, const std::vector<double>& center) {
    const double* p = item_embedding.row_ptr(row);
    double s = 0.0;
    for (int c = 0; c < d; ++c) {
      double diff = p[c] - center[c];
      s += diff * diff;
    }
    return s;
  };

  // k-means++ seeding.
  std::vector<std::vector<double>> centers;
  centers.reserve(categories);
  {
    int first = static_cast<int>(rng.below(n));
    centers.emplace_back(item_embedding.row_ptr(first), item_embedding.row_ptr(first) + d);
    std::vector<double> best(n, std::numeric_limits<double>::infinity());
    while (static_cast<int>(centers.size()) < categories) {
      double total = 0.0;
      for (int i = 0; i < n; ++i) {
        best[i] = std::min(best[i], dist_sq(i, centers.back()));
        total += best[i];
      }
      int pick = 0;
      if (total > 0.0) {
        double target = rng.uniform() * total;
        double acc = 0.0;
        pick = n - 1;
        for (int i = 0; i < n; ++i) {
          acc += best[i];
          if (target < acc) {
            pick = i;
            break;
          }
        }
      } else {
        pick = static_cast<int>(rng.below(n));  // all points coincide
      }
      centers.emplace_back(item_embedding.row_ptr(pick), item_embedding.row_ptr(pick) + d);
    }
  }

  std::vector<int> assign(n, -1);
  std::vector<long long> sizes(categories, 0);
  for (int iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    std::fill(sizes.begin(), sizes.end(), 0);
    for (int i = 0; i < n; ++i) {
      int best_c = 0;
      double best_d = dist_sq(i, centers[0]);
      for (int c = 1; c < categories; ++c) {
        double dd = dist_sq(i, centers[c]);
        if (dd < best_d) {
          best_d = dd;
          best_c = c;
        }
      }
      if (assign[i] != best_c) {
        assign[i] = best_c;
        changed = true;
      }
      ++sizes[best_c];
    }
    // Repair empty clusters: steal the farthest point of the largest cluster.
    for (int c = 0; c < categories; ++c) {
      while (sizes[c] == 0) {
        int big = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) -
                                   sizes.begin());
        int far_i = -1;
        double far_d = -1.0;
        for (int i = 0; i < n; ++i)
          if (assign[i] == big) {
            double dd = dist_sq(i, centers[big]);
            if (dd > far_d) {
              far_d = dd;
              far_i = i;
            }
          }
        assign[far_i] = c;
        --sizes[big];
        ++sizes[c];
        changed = true;
      }
    }
    for (int c = 0; c < categories; ++c) {
      std::fill(centers[c].begin(), centers[c].end(), 0.0);
    }
    for (int i = 0; i < n; ++i) {
      const double* p = item_embedding.row_ptr(i);
      for (int c = 0; c < d; ++c) centers[assign[i]][c] += p[c];
    }
    for (int c = 0; c < categories; ++c)
      for (int k = 0; k < d; ++k) centers[c][k] /= static_cast<double>(sizes[c]);
    if (!changed) break;
  }

  ClusterModel cm;
  cm.categories = categories;
  cm.assignment = assign;
  cm.items.assign(categories, {});
  for (int i = 0; i < n; ++i) cm.items[assign[i]].push_back(i);
  return cm;
}

void assign_latent_dims(ClusterModel& cm, int latent_total) {
  if (latent_total < cm.categories)
    throw ConfigError("latent_total must be >= the category count");
  int n = cm.item_count();
  std::vector<double> quota(cm.categories);
  std::vector<int> dims(cm.categories);
  int used = 0;
  for (int c = 0; c < cm.categories; ++c) {
    quota[c] = static_cast<double>(latent_total) * cm.items[c].size() / n;
    dims[c] = static_cast<int>(std::floor(quota[c]));
    used += dims[c];
  }
  std::vector<int> order(cm.categories);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return quota[a] - std::floor(quota[a]) > quota[b] - std::floor(quota[b]);
  });
  for (int left = latent_total - used, i = 0; left > 0; --left, ++i)
    ++dims[order[i % cm.categories]];
  // Every category needs at least one latent dimension.
  for (int c = 0; c < cm.categories; ++c) {
    while (dims[c] == 0) {
      int big = static_cast<int>(std::max_element(dims.begin(), dims.end()) - dims.begin());
      --dims[big];
      ++dims[c];
    }
  }
  cm.latent_dims = dims;
  cm.latent_offsets.assign(cm.categories, 0);
  for (int c = 1; c < cm.categories; ++c)
    cm.latent_offsets[c] = cm.latent_offsets[c - 1] + dims[c - 1];
  cm.validate();
}

void save_cluster_assignment(const ClusterModel& cm, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write cluster assignment: " + path);
  for (std::size_t i = 0; i < cm.assignment.size(); ++i)
    out << i << '\t' << cm.assignment[i] << '\n';
}

ClusterModel load_cluster_assignment(const std::string& path, int latent_total) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read cluster assignment: " + path);
  ClusterModel cm;
  std::string line;
  int max_cat = -1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    long long idx, cat;
    if (std::sscanf(line.c_str(), "%lld\t%lld", &idx, &cat) != 2)
      throw DataError("malformed cluster assignment line: " + line);
    if (idx != static_cast<long long>(cm.assignment.size()))
      throw DataError("cluster assignment out of order at item " + std::to_string(idx));
    cm.assignment.push_back(static_cast<int>(cat));
    max_cat = std::max(max_cat, static_cast<int>(cat));
  }
  cm.categories = max_cat + 1;
  cm.items.assign(cm.categories, {});
  for (std::size_t i = 0; i < cm.assignment.size(); ++i)
    cm.items[cm.assignment[i]].push_back(static_cast<int>(i));
  assign_latent_dims(cm, latent_total);
  return cm;
}

VaeStack VaeStack::describe(const ClusterModel& cm, int hidden_width,
                            double gamma_max, long long anneal_steps) {
  if (hidden_width < 1) throw ConfigError("vae hidden width must be >= 1");
  VaeStack vae;
  vae.gamma_max = gamma_max;
  vae.anneal_steps = anneal_steps;
  for (int c = 0; c < cm.categories; ++c) {
    int in = static_cast<int>(cm.items[c].size());
    int lc = cm.latent_dims[c];
    vae.enc_specs.push_back(MlpSpec{{in, hidden_width, 2 * lc}});
    vae.dec_specs.push_back(MlpSpec{{lc, hidden_width, in}});
  }
  return vae;
}

VaeStack VaeStack::create(ParamStore& store, const ClusterModel& cm, int hidden_width,
                          double gamma_max, long long anneal_steps, Rng& rng) {
  VaeStack vae = describe(cm, hidden_width, gamma_max, anneal_steps);
  for (int c = 0; c < cm.categories; ++c) {
    mlp_init(store, "enc" + std::to_string(c) + "/", vae.enc_specs[c], rng);
    mlp_init(store, "dec" + std::to_string(c) + "/", vae.dec_specs[c], rng);
  }
  return vae;
}

double VaeStack::gamma_at(long long step) const {
  if (anneal_steps <= 0) return gamma_max;
  double frac = static_cast<double>(step) / static_cast<double>(anneal_steps);
  return gamma_max * std::min(1.0, frac);
}

namespace {

// Gather a category's columns out of the full interaction batch.
DenseMatrix gather_cols(const DenseMatrix& x, const std::vector<int>& cols) {
  DenseMatrix out(x.rows, static_cast<int>(cols.size()));
  for (int r = 0; r < x.rows; ++r) {
    const double* src = x.row_ptr(r);
    double* dst = out.row_ptr(r);
    for (std::size_t j = 0; j < cols.size(); ++j) dst[j] = src[cols[j]];
  }
  return out;
}

constexpr double kLogVarLo = -10.0;
constexpr double kLogVarHi = 10.0;

struct TapedEncode {
  Tape::NodeId z0 = -1;
  std::vector<Tape::NodeId> mu, logvar, z0_c;
};

// Encoder pass over all categories. eps_rng == nullptr gives deterministic
// latents (z = mu). Dropout regularizes the encoder input like the denoiser's.
TapedEncode encode_taped(Tape& tape, ParamStore& store, const VaeStack& vae,
                         const ClusterModel& cm, const DenseMatrix& x0,
                         Rng* eps_rng, double dropout_p, bool train_mode,
                         Rng* dropout_rng) {
  TapedEncode enc;
  for (int c = 0; c < cm.categories; ++c) {
    DenseMatrix xc = gather_cols(x0, cm.items[c]);
    if (train_mode && dropout_p > 0.0) {
      if (!dropout_rng) throw UsageError("encode: training-mode dropout needs an rng");
      xc = dropout_input(xc, dropout_p, true, *dropout_rng);
    }
    Tape::NodeId xc_node = tape.constant(std::move(xc));
    Tape::NodeId out =
        mlp_apply(tape, store, "enc" + std::to_string(c) + "/", vae.enc_specs[c], xc_node);
    int lc = cm.latent_dims[c];
    Tape::NodeId mu = tape.slice_cols(out, 0, lc);
    Tape::NodeId logvar = tape.clamp(tape.slice_cols(out, lc, 2 * lc), kLogVarLo, kLogVarHi);
    enc.mu.push_back(mu);
    enc.logvar.push_back(logvar);
    Tape::NodeId z;
    if (eps_rng) {
      DenseMatrix eps(x0.rows, lc);
      eps_rng->fill_normal(eps.data);
      Tape::NodeId sigma = tape.exp(tape.affine(logvar, 0.5, 0.0));
      z = tape.add(mu, tape.mul(sigma, tape.constant(std::move(eps))));
    } else {
      z = mu;
    }
    enc.z0_c.push_back(z);
    enc.z0 = (c == 0) ? z : tape.concat_cols(enc.z0, z);
  }
  return enc;
}

// -(multinomial log-likelihood - gamma * KL), batch-averaged.
Tape::NodeId vae_loss_node(Tape& tape, ParamStore& store, const VaeStack& vae,
                           const ClusterModel& cm, const DenseMatrix& x0,
                           const TapedEncode& enc, double gamma_now) {
  int batch = x0.rows;
  Tape::NodeId total = -1;
  for (int c = 0; c < cm.categories; ++c) {
    Tape::NodeId logits = mlp_apply(tape, store, "dec" + std::to_string(c) + "/",
                                    vae.dec_specs[c], enc.z0_c[c]);
    Tape::NodeId log_probs = tape.row_log_softmax(logits);
    Tape::NodeId mult = tape.dot(tape.constant(gather_cols(x0, cm.items[c])), log_probs);
    // KL(N(mu, sigma^2) || N(0, I)) = 0.5 * sum(mu^2 + sigma^2 - 1 - log sigma^2)
    Tape::NodeId kl_inner =
        tape.add(tape.add(tape.mul(enc.mu[c], enc.mu[c]), tape.exp(enc.logvar[c])),
                 tape.affine(enc.logvar[c], -1.0, -1.0));
    Tape::NodeId kl = tape.affine(tape.sum(kl_inner), 0.5, 0.0);
    Tape::NodeId term = tape.add(tape.affine(mult, -1.0, 0.0),
                                 tape.affine(kl, gamma_now, 0.0));
    total = (c == 0) ? term : tape.add(total, term);
  }
  return tape.affine(total, 1.0 / batch, 0.0);
}

}  // namespace

DenseMatrix encode_mean(const ParamStore& store, const VaeStack& vae,
                        const ClusterModel& cm, const DenseMatrix& x0) {
  DenseMatrix z0(x0.rows, cm.latent_total());
  for (int c = 0; c < cm.categories; ++c) {
    DenseMatrix out = mlp_eval(store, "enc" + std::to_string(c) + "/",
                               vae.enc_specs[c], gather_cols(x0, cm.items[c]));
    int lc = cm.latent_dims[c];
    int off = cm.latent_offsets[c];
    for (int r = 0; r < x0.rows; ++r)
      std::copy(out.row_ptr(r), out.row_ptr(r) + lc, z0.row_ptr(r) + off);
  }
  return z0;
}

EncodeResult encode(const ParamStore& store, const VaeStack& vae,
                    const ClusterModel& cm, const DenseMatrix& x0, Rng* rng,
                    bool deterministic) {
  if (x0.cols != cm.item_count())
    throw ConfigError("encode: x0 has " + std::to_string(x0.cols) +
                      " cols, expected " + std::to_string(cm.item_count()));
  if (!deterministic && !rng)
    throw UsageError("encode: sampling requires an rng");
  EncodeResult res;
  res.z0 = DenseMatrix(x0.rows, cm.latent_total());
  for (int c = 0; c < cm.categories; ++c) {
    DenseMatrix out = mlp_eval(store, "enc" + std::to_string(c) + "/",
                               vae.enc_specs[c], gather_cols(x0, cm.items[c]));
    int lc = cm.latent_dims[c];
    int off = cm.latent_offsets[c];
    DenseMatrix mu(x0.rows, lc), sigma(x0.rows, lc);
    for (int r = 0; r < x0.rows; ++r)
      for (int j = 0; j < lc; ++j) {
        mu.at(r, j) = out.at(r, j);
        double lv = std::min(kLogVarHi, std::max(kLogVarLo, out.at(r, lc + j)));
        sigma.at(r, j) = std::exp(0.5 * lv);
        double z = deterministic ? mu.at(r, j)
                                 : mu.at(r, j) + sigma.at(r, j) * rng->normal();
        res.z0.at(r, off + j) = z;
      }
    res.mu.push_back(std::move(mu));
    res.sigma.push_back(std::move(sigma));
  }
  return res;
}

DenseMatrix decode(const ParamStore& store, const VaeStack& vae,
                   const ClusterModel& cm, const DenseMatrix& z0_hat) {
  if (z0_hat.cols != cm.latent_total())
    throw ConfigError("decode: z0 has " + std::to_string(z0_hat.cols) +
                      " cols, expected " + std::to_string(cm.latent_total()));
  DenseMatrix scores(z0_hat.rows, cm.item_count());
  for (int c = 0; c < cm.categories; ++c) {
    int lc = cm.latent_dims[c];
    int off = cm.latent_offsets[c];
    DenseMatrix zc(z0_hat.rows, lc);
    for (int r = 0; r < z0_hat.rows; ++r)
      std::copy(z0_hat.row_ptr(r) + off, z0_hat.row_ptr(r) + off + lc, zc.row_ptr(r));
    DenseMatrix logits =
        mlp_eval(store, "dec" + std::to_string(c) + "/", vae.dec_specs[c], zc);
    for (int r = 0; r < z0_hat.rows; ++r) {
      const double* src = logits.row_ptr(r);
      double* dst = scores.row_ptr(r);
      for (std::size_t j = 0; j < cm.items[c].size(); ++j) dst[cm.items[c][j]] = src[j];
    }
  }
  return scores;
}

double vae_loss(ParamStore& store, const VaeStack& vae, const ClusterModel& cm,
                const DenseMatrix& x0, Rng* rng, double gamma_now) {
  Tape tape;
  double v = tape.scalar(vae_loss_taped(tape, store, vae, cm, x0, rng, gamma_now).loss);
  check_finite(v, "vae loss");
  return v;
}

VaeLossNodes vae_loss_taped(Tape& tape, ParamStore& store, const VaeStack& vae,
                            const ClusterModel& cm, const DenseMatrix& x0,
                            Rng* eps_rng, double gamma_now) {
  if (gamma_now < 0.0) throw ConfigError("vae loss: gamma must be >= 0");
  if (x0.cols != cm.item_count())
    throw ConfigError("vae loss: x0 has " + std::to_string(x0.cols) +
                      " cols, expected " + std::to_string(cm.item_count()));
  TapedEncode enc = encode_taped(tape, store, vae, cm, x0, eps_rng, 0.0, false, nullptr);
  VaeLossNodes out;
  out.loss = vae_loss_node(tape, store, vae, cm, x0, enc, gamma_now);
  out.z0 = enc.z0;
  return out;
}

void LatentConfig::validate() const {
  base.validate();
  if (categories < 1) throw ConfigError("categories must be >= 1");
  if (latent_total < categories) throw ConfigError("latent_total must be >= categories");
  if (lambda_diff < 0.0) throw ConfigError("lambda must be >= 0");
  if (gamma_max < 0.0) throw ConfigError("gamma_max must be >= 0");
  if (svd_dim < 1) throw ConfigError("svd_dim must be >= 1");
}

LatentTrainResult train_latent(const InteractionMatrix& train_matrix,
                               const SplitBundle& bundle, const LatentConfig& cfg,
                               const ParamStore* resume) {
  cfg.validate();
  if (train_matrix.interaction_count() == 0)
    throw DataError("training matrix is empty");
  if (cfg.categories > train_matrix.item_count)
    throw ConfigError("more categories than items");

  const TrainConfig& base = cfg.base;
  LatentTrainResult res;
  Rng rng(base.seed);
  Rng svd_rng = rng.fork(21), kmeans_rng = rng.fork(22), init_rng = rng.fork(23),
      train_rng = rng.fork(24);

  int svd_d = std::min(cfg.svd_dim,
                       std::min(train_matrix.user_count, train_matrix.item_count));
  DenseMatrix emb = item_embeddings_svd(train_matrix, svd_d, svd_rng.next_u64());
  res.model.cm = kmeans(emb, cfg.categories, kmeans_rng.next_u64());
  assign_latent_dims(res.model.cm, cfg.latent_total);
  res.model.sched = base.schedule();

  std::vector<int> train_users;
  for (int u = 0; u < train_matrix.user_count; ++u)
    if (train_matrix.degree(u) > 0) train_users.push_back(u);
  long long batches_per_epoch =
      (static_cast<long long>(train_users.size()) + base.batch_size - 1) / base.batch_size;

  ParamStore store;
  int hidden_width = std::max(1, cfg.latent_total / cfg.categories);
  res.model.vae = VaeStack::create(store, res.model.cm, hidden_width, cfg.gamma_max,
                                   cfg.anneal_epochs * batches_per_epoch, init_rng);
  // No input dropout on the dense latent vector; the encoders regularize.
  res.model.den = DenoiserNet::create(store, cfg.latent_total, base.hidden,
                                      base.objective, 0.0, init_rng);
  if (resume) restore_params(store, *resume);

  std::vector<int> val_users;
  for (int u = 0; u < bundle.user_count(); ++u)
    if (train_matrix.degree(u) > 0 && !bundle.val.rows[u].empty())
      val_users.push_back(u);
  bool can_validate = !val_users.empty();

  ImportanceSampler sampler(base.steps);
  AdamConfig adam{base.lr, 0.9, 0.999, 1e-8};
  res.store = store;
  res.best_epoch = 0;

  auto run_validation = [&](const ParamStore& params) {
    DenseMatrix cond(static_cast<int>(val_users.size()), train_matrix.item_count);
    for (std::size_t r = 0; r < val_users.size(); ++r)
      train_matrix.fill_dense_row(val_users[r], cond.row_ptr(static_cast<int>(r)));
    DenseMatrix scored = infer_latent(params, res.model, cond, base.t_prime);
    DenseMatrix full(bundle.user_count(), bundle.item_count());
    for (std::size_t r = 0; r < val_users.size(); ++r)
      std::copy(scored.row_ptr(static_cast<int>(r)),
                scored.row_ptr(static_cast<int>(r)) + scored.cols,
                full.row_ptr(val_users[r]));
    EvalReport rep = evaluate(full, bundle, {20}, EvalSplit::kValidation);
    return std::make_pair(rep.recall_at(20), rep.ndcg_at(20));
  };

  long long global_step = 0;
  double epoch1_vae = 0.0, epoch1_diff = 0.0;
  long epoch1_batches = 0;
  for (int epoch = 1; epoch <= base.epochs; ++epoch) {
    train_rng.shuffle(train_users);
    double loss_sum = 0.0;
    long batches = 0;
    for (std::size_t off = 0; off < train_users.size();
         off += static_cast<std::size_t>(base.batch_size)) {
      std::size_t hi = std::min(train_users.size(), off + base.batch_size);
      DenseMatrix x0(static_cast<int>(hi - off), train_matrix.item_count);
      for (std::size_t r = off; r < hi; ++r)
        train_matrix.fill_dense_row(train_users[r], x0.row_ptr(static_cast<int>(r - off)));

      Tape tape;
      TapedEncode enc = encode_taped(tape, store, res.model.vae, res.model.cm, x0,
                                     &train_rng, base.dropout, true, &train_rng);
      double gamma_now = res.model.vae.gamma_at(global_step);
      Tape::NodeId l_vae =
          vae_loss_node(tape, store, res.model.vae, res.model.cm, x0, enc, gamma_now);

      auto [t, pt] = base.sampler == StepSampling::kImportance
                         ? sampler.sample(train_rng)
                         : std::make_pair(
                               1 + static_cast<int>(train_rng.below(base.steps)),
                               1.0 / base.steps);
      DenseMatrix eps(x0.rows, cfg.latent_total);
      train_rng.fill_normal(eps.data);
      Tape::NodeId l_diff =
          base.objective == Objective::kX0Elbo
              ? loss_t_node(tape, res.model.sched, store, res.model.den, enc.z0, t,
                            eps, true, &train_rng)
              : loss_eps_node(tape, res.model.sched, store, res.model.den, enc.z0, t,
                              eps, true, &train_rng);
      double diff_weight = cfg.lambda_diff;
      if (base.sampler == StepSampling::kImportance) {
        sampler.record(t, tape.scalar(l_diff));
        diff_weight /= pt;
      }
      Tape::NodeId total = tape.add(l_vae, tape.affine(l_diff, diff_weight, 0.0));

      double loss_value = tape.scalar(total);
      if (!std::isfinite(loss_value))
        throw NumericError("latent training loss diverged (epoch " +
                           std::to_string(epoch) + ")");
      GradMap grads = tape.backward(total);
      adam_step(store, grads, adam);
      loss_sum += loss_value;
      ++batches;
      ++global_step;
      if (epoch == 1) {
        epoch1_vae += tape.scalar(l_vae);
        epoch1_diff += tape.scalar(l_diff);
        ++epoch1_batches;
      }
    }
    double mean_loss = batches ? loss_sum / batches : 0.0;
    if (epoch == 1) {
      res.first_loss = mean_loss;
      double mv = epoch1_vae / std::max(1L, epoch1_batches);
      double md = epoch1_diff / std::max(1L, epoch1_batches);
      char buf[200];
      std::snprintf(buf, sizeof(buf),
                    "# epoch1 vae_loss=%.10g diff_loss=%.10g lambda_weighted_ratio=%.10g",
                    mv, md, mv != 0.0 ? cfg.lambda_diff * md / mv : 0.0);
      res.log_lines.push_back(buf);
    }
    res.last_loss = mean_loss;
    res.epochs_run = epoch;

    bool do_eval = can_validate && base.eval_every > 0 &&
                   (epoch % base.eval_every == 0 || epoch == base.epochs);
    char line[160];
    if (do_eval) {
      auto [r20, n20] = run_validation(store);
      std::snprintf(line, sizeof(line), "%d,%.10g,%.10g,%.10g", epoch, mean_loss, r20, n20);
      res.log_lines.push_back(line);
      if (r20 > res.best_recall20) {
        res.best_recall20 = r20;
        res.best_ndcg20 = n20;
        res.best_epoch = epoch;
        res.store = store;
      } else if (base.patience > 0 && epoch - res.best_epoch >= base.patience) {
        res.log_lines.push_back("# early stop at epoch " + std::to_string(epoch) +
                                " (best " + std::to_string(res.best_epoch) + ")");
        break;
      }
    } else {
      std::snprintf(line, sizeof(line), "%d,%.10g,-,-", epoch, mean_loss);
      res.log_lines.push_back(line);
    }
  }
  if ((!can_validate || base.eval_every <= 0) && base.epochs > 0) res.store = store;
  return res;
}

DenseMatrix infer_latent(const ParamStore& store, const LatentModel& model,
                         const DenseMatrix& x0, int t_prime, Rng* rng) {
  DenseMatrix z0 = encode_mean(store, model.vae, model.cm, x0);
  DenseMatrix z0_hat = infer(make_scorer(store, model.den, model.sched), model.sched,
                             z0, t_prime, rng);
  return decode(store, model.vae, model.cm, z0_hat);
}

std::map<std::string, long long> count_params(const ParamStore& store) {
  std::map<std::string, long long> counts{
      {"encoders", 0}, {"decoders", 0}, {"denoiser", 0}, {"other", 0}, {"total", 0}};
  for (const auto& [name, e] : store.entries()) {
    long long n = static_cast<long long>(e.value.size());
    if (name.rfind("enc", 0) == 0)
      counts["encoders"] += n;
    else if (name.rfind("dec", 0) == 0)
      counts["decoders"] += n;
    else if (name.rfind("den/", 0) == 0)
      counts["denoiser"] += n;
    else
      counts["other"] += n;
    counts["total"] += n;
  }
  return counts;
}

}  // namespace diffrec
