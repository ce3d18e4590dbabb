#include "diffrec/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "diffrec/errors.hpp"
#include "diffrec/eval.hpp"

namespace diffrec {

Objective objective_from_name(const std::string& s) {
  if (s == "x0_elbo" || s == "x0") return Objective::kX0Elbo;
  if (s == "eps_elbo" || s == "eps") return Objective::kEpsElbo;
  throw ConfigError("unknown objective: " + s);
}

std::string objective_name(Objective o) {
  return o == Objective::kX0Elbo ? "x0_elbo" : "eps_elbo";
}

StepSampling sampling_from_name(const std::string& s) {
  if (s == "uniform") return StepSampling::kUniform;
  if (s == "importance") return StepSampling::kImportance;
  throw ConfigError("unknown step sampler: " + s);
}

std::string sampling_name(StepSampling s) {
  return s == StepSampling::kUniform ? "uniform" : "importance";
}

DenoiserNet DenoiserNet::describe(int data_dim, const std::vector<int>& hidden,
                                  Objective objective, double input_dropout,
                                  const std::string& prefix) {
  if (data_dim <= 0) throw ConfigError("denoiser: data_dim must be positive");
  DenoiserNet net;
  net.prefix = prefix;
  net.data_dim = data_dim;
  net.objective = objective;
  net.input_dropout = input_dropout;
  net.spec.dims.push_back(data_dim + kStepEmbedDim);
  for (int h : hidden) {
    if (h <= 0) throw ConfigError("denoiser: hidden dims must be positive");
    net.spec.dims.push_back(h);
  }
  net.spec.dims.push_back(data_dim);
  return net;
}

DenoiserNet DenoiserNet::create(ParamStore& store, int data_dim,
                                const std::vector<int>& hidden, Objective objective,
                                double input_dropout, Rng& rng,
                                const std::string& prefix) {
  DenoiserNet net = describe(data_dim, hidden, objective, input_dropout, prefix);
  mlp_init(store, net.prefix, net.spec, rng);
  return net;
}

Tape::NodeId DenoiserNet::apply(Tape& tape, ParamStore& store, Tape::NodeId x_t,
                                int t, bool train_mode, Rng* rng) const {
  const DenseMatrix& xv = tape.value(x_t);
  if (xv.cols != data_dim)
    throw ConfigError("denoiser: input has " + std::to_string(xv.cols) +
                      " cols, expected " + std::to_string(data_dim));
  Tape::NodeId in = x_t;
  if (train_mode && input_dropout > 0.0) {
    if (!rng) throw UsageError("denoiser: training-mode dropout needs an rng");
    double keep = 1.0 - input_dropout;
    DenseMatrix mask(xv.rows, xv.cols);
    for (auto& m : mask.data) m = (rng->uniform() < keep) ? 1.0 / keep : 0.0;
    in = tape.mul(x_t, tape.constant(std::move(mask)));
  }
  Tape::NodeId emb = tape.constant(timestep_embedding_rows(t, kStepEmbedDim, xv.rows));
  return mlp_apply(tape, store, prefix, spec, tape.concat_cols(in, emb));
}

DenseMatrix DenoiserNet::eval(const ParamStore& store, const DenseMatrix& x_t,
                              int t) const {
  if (x_t.cols != data_dim)
    throw ConfigError("denoiser: input has " + std::to_string(x_t.cols) +
                      " cols, expected " + std::to_string(data_dim));
  DenseMatrix in(x_t.rows, data_dim + kStepEmbedDim);
  DenseMatrix emb = timestep_embedding(t, kStepEmbedDim);
  for (int r = 0; r < x_t.rows; ++r) {
    std::copy(x_t.row_ptr(r), x_t.row_ptr(r) + data_dim, in.row_ptr(r));
    std::copy(emb.data.begin(), emb.data.end(), in.row_ptr(r) + data_dim);
  }
  return mlp_eval(store, prefix, spec, in);
}

DenseMatrix denoise(const ParamStore& store, const DenoiserNet& net,
                    const DenseMatrix& x_t, int t, bool train_mode, Rng* rng) {
  if (!train_mode || net.input_dropout == 0.0) return net.eval(store, x_t, t);
  if (!rng) throw UsageError("denoise: training mode needs an rng");
  return net.eval(store, dropout_input(x_t, net.input_dropout, true, *rng), t);
}

double loss_weight(const NoiseSchedule& sched, int t) {
  if (t < 1 || t > sched.T) throw UsageError("loss weight: t outside schedule");
  if (t == 1 || sched.noiseless()) return 1.0;
  double snr_prev = sched.abar[t - 1] / sched.one_minus_abar[t - 1];
  double snr_t = sched.abar[t] / sched.one_minus_abar[t];
  return 0.5 * (snr_prev - snr_t);
}

namespace {

// x_t node = sqrt(abar_t) * x0 + sqrt(1-abar_t) * eps (identity when
// noise-free). Works whether x0 is a constant or a differentiable node.
Tape::NodeId corrupt_node(Tape& tape, const NoiseSchedule& sched, Tape::NodeId x0,
                          int t, const DenseMatrix& eps) {
  if (t < 1 || t > sched.T) throw UsageError("corruption step outside schedule");
  if (sched.noiseless()) return x0;
  const DenseMatrix& x0v = tape.value(x0);
  if (!eps.same_shape(x0v))
    throw ConfigError("loss: eps shape " + eps.shape_str() + " vs x0 " + x0v.shape_str());
  double a = std::sqrt(sched.abar[t]);
  double b = std::sqrt(sched.one_minus_abar[t]);
  DenseMatrix scaled_eps = eps;
  for (auto& x : scaled_eps.data) x *= b;
  return tape.add(tape.affine(x0, a, 0.0), tape.constant(std::move(scaled_eps)));
}

}  // namespace

Tape::NodeId loss_t_node(Tape& tape, const NoiseSchedule& sched, ParamStore& store,
                         const DenoiserNet& net, Tape::NodeId x0, int t,
                         const DenseMatrix& eps, bool train_mode, Rng* rng) {
  int batch = tape.value(x0).rows;
  Tape::NodeId x_t = corrupt_node(tape, sched, x0, t, eps);
  Tape::NodeId pred = net.apply(tape, store, x_t, t, train_mode, rng);
  Tape::NodeId err = tape.sum_squares(tape.sub(pred, x0));
  return tape.affine(err, loss_weight(sched, t) / batch, 0.0);
}

Tape::NodeId loss_eps_node(Tape& tape, const NoiseSchedule& sched, ParamStore& store,
                           const DenoiserNet& net, Tape::NodeId x0, int t,
                           const DenseMatrix& eps, bool train_mode, Rng* rng) {
  if (sched.noiseless())
    throw ConfigError("noise-prediction objective requires noise_scale > 0");
  int batch = tape.value(x0).rows;
  Tape::NodeId x_t = corrupt_node(tape, sched, x0, t, eps);
  Tape::NodeId pred = net.apply(tape, store, x_t, t, train_mode, rng);
  Tape::NodeId err = tape.sum_squares(tape.sub(pred, tape.constant(eps)));
  return tape.affine(err, 1.0 / batch, 0.0);
}

double loss_t(const NoiseSchedule& sched, ParamStore& store, const DenoiserNet& net,
              const DenseMatrix& x0, int t, const DenseMatrix& eps) {
  Tape tape;
  double v = tape.scalar(
      loss_t_node(tape, sched, store, net, tape.constant(x0), t, eps, false, nullptr));
  check_finite(v, "loss_t");
  return v;
}

double loss_eps(const NoiseSchedule& sched, ParamStore& store, const DenoiserNet& net,
                const DenseMatrix& x0, int t, const DenseMatrix& eps) {
  Tape tape;
  double v = tape.scalar(
      loss_eps_node(tape, sched, store, net, tape.constant(x0), t, eps, false, nullptr));
  check_finite(v, "loss_eps");
  return v;
}

ImportanceSampler::ImportanceSampler(int steps, int history)
    : steps_(steps), history_(history) {
  if (steps < 1) throw ConfigError("importance sampler: need at least one step");
  if (history < 1) throw ConfigError("importance sampler: history must be positive");
  buf_.assign(steps_, std::vector<double>(history_, 0.0));
  filled_.assign(steps_, 0);
  pos_.assign(steps_, 0);
}

void ImportanceSampler::record(int t, double loss_value) {
  if (t < 1 || t > steps_) throw UsageError("importance sampler: step out of range");
  check_finite(loss_value, "recorded step loss");
  auto& b = buf_[t - 1];
  b[pos_[t - 1]] = loss_value;
  pos_[t - 1] = (pos_[t - 1] + 1) % history_;
  filled_[t - 1] = std::min(filled_[t - 1] + 1, history_);
}

bool ImportanceSampler::warm() const {
  for (int f : filled_)
    if (f < history_) return false;
  return true;
}

std::vector<double> ImportanceSampler::probabilities() const {
  std::vector<double> p(steps_, 1.0 / steps_);
  if (!warm()) return p;
  double total = 0.0;
  for (int t = 0; t < steps_; ++t) {
    double mean_sq = 0.0;
    for (double v : buf_[t]) mean_sq += v * v;
    mean_sq /= history_;
    p[t] = std::sqrt(mean_sq);
    total += p[t];
  }
  if (total <= 0.0) return std::vector<double>(steps_, 1.0 / steps_);
  for (auto& x : p) x /= total;
  return p;
}

std::pair<int, double> ImportanceSampler::sample(Rng& rng) {
  if (!warm()) {
    int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(steps_)));
    return {t, 1.0 / steps_};
  }
  std::vector<double> p = probabilities();
  double u = rng.uniform();
  double acc = 0.0;
  for (int t = 0; t < steps_; ++t) {
    acc += p[t];
    if (u < acc || t == steps_ - 1) return {t + 1, p[t]};
  }
  return {steps_, p[steps_ - 1]};
}

void TrainConfig::validate() const {
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (t_prime < 0 || t_prime > steps)
    throw ConfigError("t_prime must lie in [0, steps]");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
  if (lr <= 0.0) throw ConfigError("lr must be positive");
  if (hidden.empty()) throw ConfigError("need at least one hidden dim");
  if (objective == Objective::kEpsElbo && noise_scale == 0.0)
    throw ConfigError("eps objective requires noise_scale > 0");
  build_schedule(noise_scale, noise_min, noise_max, steps);  // bounds check
}

DenseMatrix infer(const DenoiserEval& denoiser, const NoiseSchedule& sched,
                  const DenseMatrix& x0, int t_prime, Rng* rng) {
  if (t_prime < 0 || t_prime > sched.T)
    throw UsageError("inference corruption steps " + std::to_string(t_prime) +
                     " exceed schedule length " + std::to_string(sched.T));
  DenseMatrix x_hat;
  if (t_prime == 0) {
    x_hat = x0;
  } else if (sched.noiseless()) {
    x_hat = x0;  // corruption is the identity
  } else {
    if (!rng) throw UsageError("inference with t_prime > 0 needs an rng");
    DenseMatrix eps(x0.rows, x0.cols);
    rng->fill_normal(eps.data);
    x_hat = q_sample(sched, x0, t_prime, eps);
  }
  for (int t = sched.T; t >= 2; --t) {
    DenseMatrix pred = denoiser(x_hat, t);
    x_hat = sched.noiseless() ? std::move(pred) : posterior_mean(sched, x_hat, pred, t);
  }
  x_hat = denoiser(x_hat, 1);
  check_finite(x_hat, "inference scores");
  return x_hat;
}

DenoiserEval make_scorer(const ParamStore& store, const DenoiserNet& net,
                         const NoiseSchedule& sched) {
  if (net.objective == Objective::kX0Elbo) {
    return [&store, net](const DenseMatrix& x_t, int t) {
      return net.eval(store, x_t, t);
    };
  }
  if (sched.noiseless())
    throw ConfigError("noise-prediction scorer requires noise_scale > 0");
  return [&store, net, sched](const DenseMatrix& x_t, int t) {
    DenseMatrix eps_hat = net.eval(store, x_t, t);
    double a = std::sqrt(sched.abar[t]);
    double b = std::sqrt(sched.one_minus_abar[t]);
    DenseMatrix out = x_t;
    for (std::size_t i = 0; i < out.size(); ++i)
      out.data[i] = (out.data[i] - b * eps_hat.data[i]) / a;
    return out;
  };
}

namespace {

std::string log_line(int epoch, double loss, bool has_val, double r20, double n20) {
  char buf[160];
  if (has_val)
    std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g", epoch, loss, r20, n20);
  else
    std::snprintf(buf, sizeof(buf), "%d,%.10g,-,-", epoch, loss);
  return buf;
}

DenseMatrix dense_rows(const InteractionMatrix& m, const std::vector<int>& users) {
  DenseMatrix x(static_cast<int>(users.size()), m.item_count);
  for (std::size_t r = 0; r < users.size(); ++r)
    m.fill_dense_row(users[r], x.row_ptr(static_cast<int>(r)));
  return x;
}

}  // namespace

void restore_params(ParamStore& into, const ParamStore& from) {
  for (const auto& [name, e] : from.entries()) {
    if (!into.has(name))
      throw ConfigError("resume checkpoint has unexpected tensor: " + name);
    auto& target = into.entry(name);
    if (!target.value.same_shape(e.value))
      throw ConfigError("resume checkpoint tensor " + name + " is " +
                        e.value.shape_str() + ", expected " + target.value.shape_str());
    target = e;
  }
  into.set_step(from.step());
}

TrainResult train(const InteractionMatrix& train_matrix, const SplitBundle& bundle,
                  const TrainConfig& cfg, const ParamStore* resume) {
  cfg.validate();
  if (train_matrix.interaction_count() == 0)
    throw DataError("training matrix is empty");
  if (train_matrix.item_count != bundle.item_count() ||
      train_matrix.user_count != bundle.user_count())
    throw ConfigError("training matrix does not match the bundle dimensions");

  TrainResult res;
  res.sched = cfg.schedule();
  Rng rng(cfg.seed);
  Rng init_rng = rng.fork(11);
  Rng train_rng = rng.fork(12);

  ParamStore store;
  res.net = DenoiserNet::create(store, train_matrix.item_count, cfg.hidden,
                                cfg.objective, cfg.dropout, init_rng);
  if (resume) restore_params(store, *resume);

  std::vector<int> train_users;
  for (int u = 0; u < train_matrix.user_count; ++u)
    if (train_matrix.degree(u) > 0) train_users.push_back(u);

  // Fixed conditioning rows for validation scoring.
  std::vector<int> val_users;
  for (int u = 0; u < bundle.user_count(); ++u)
    if (train_matrix.degree(u) > 0 && !bundle.val.rows[u].empty())
      val_users.push_back(u);
  bool can_validate = !val_users.empty();

  ImportanceSampler sampler(cfg.steps);
  AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8};

  res.store = store;  // epoch-0 snapshot; returned unchanged when epochs == 0
  res.best_epoch = 0;

  auto run_validation = [&](const ParamStore& params) {
    DenseMatrix cond = dense_rows(train_matrix, val_users);
    DenseMatrix scored = infer(make_scorer(params, res.net, res.sched), res.sched,
                               cond, cfg.t_prime, nullptr);
    DenseMatrix full(bundle.user_count(), bundle.item_count());
    for (std::size_t r = 0; r < val_users.size(); ++r)
      std::copy(scored.row_ptr(static_cast<int>(r)),
                scored.row_ptr(static_cast<int>(r)) + scored.cols,
                full.row_ptr(val_users[r]));
    EvalReport rep = evaluate(full, bundle, {20}, EvalSplit::kValidation);
    return std::make_pair(rep.recall_at(20), rep.ndcg_at(20));
  };

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    train_rng.shuffle(train_users);
    double loss_sum = 0.0;
    long batches = 0;
    for (std::size_t off = 0; off < train_users.size(); off += cfg.batch_size) {
      std::size_t hi = std::min(train_users.size(), off + cfg.batch_size);
      std::vector<int> batch_users(train_users.begin() + off, train_users.begin() + hi);
      DenseMatrix x0 = dense_rows(train_matrix, batch_users);
      int b = x0.rows;

      Tape tape;
      Tape::NodeId x0_node = tape.constant(x0);
      Tape::NodeId opt_node;
      if (!cfg.t_per_row) {
        auto [t, pt] = cfg.sampler == StepSampling::kImportance
                           ? sampler.sample(train_rng)
                           : std::make_pair(
                                 1 + static_cast<int>(train_rng.below(cfg.steps)),
                                 1.0 / cfg.steps);
        DenseMatrix eps(b, x0.cols);
        train_rng.fill_normal(eps.data);
        Tape::NodeId lt =
            cfg.objective == Objective::kX0Elbo
                ? loss_t_node(tape, res.sched, store, res.net, x0_node, t, eps, true,
                              &train_rng)
                : loss_eps_node(tape, res.sched, store, res.net, x0_node, t, eps,
                                true, &train_rng);
        if (cfg.sampler == StepSampling::kImportance) {
          sampler.record(t, tape.scalar(lt));
          opt_node = tape.affine(lt, 1.0 / pt, 0.0);
        } else {
          opt_node = lt;
        }
      } else {
        // Per-row steps: group rows by sampled t into sub-batches.
        std::vector<std::vector<int>> by_t(cfg.steps + 1);
        std::vector<double> pt_of(cfg.steps + 1, 1.0 / cfg.steps);
        for (int r = 0; r < b; ++r) {
          auto [t, pt] = cfg.sampler == StepSampling::kImportance
                             ? sampler.sample(train_rng)
                             : std::make_pair(
                                   1 + static_cast<int>(train_rng.below(cfg.steps)),
                                   1.0 / cfg.steps);
          by_t[t].push_back(r);
          pt_of[t] = pt;
        }
        opt_node = -1;
        for (int t = 1; t <= cfg.steps; ++t) {
          if (by_t[t].empty()) continue;
          DenseMatrix sub(static_cast<int>(by_t[t].size()), x0.cols);
          for (std::size_t r = 0; r < by_t[t].size(); ++r)
            std::copy(x0.row_ptr(by_t[t][r]), x0.row_ptr(by_t[t][r]) + x0.cols,
                      sub.row_ptr(static_cast<int>(r)));
          int nsub = sub.rows;
          DenseMatrix eps(nsub, x0.cols);
          train_rng.fill_normal(eps.data);
          Tape::NodeId sub_node = tape.constant(std::move(sub));
          Tape::NodeId lt = cfg.objective == Objective::kX0Elbo
                                ? loss_t_node(tape, res.sched, store, res.net,
                                              sub_node, t, eps, true, &train_rng)
                                : loss_eps_node(tape, res.sched, store, res.net,
                                                sub_node, t, eps, true, &train_rng);
          double w = static_cast<double>(nsub) / b;
          if (cfg.sampler == StepSampling::kImportance) {
            sampler.record(t, tape.scalar(lt));
            w /= pt_of[t];
          }
          Tape::NodeId term = tape.affine(lt, w, 0.0);
          opt_node = opt_node < 0 ? term : tape.add(opt_node, term);
        }
      }

      double loss_value = tape.scalar(opt_node);
      if (!std::isfinite(loss_value))
        throw NumericError("training loss diverged (epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batches) + ")");
      GradMap grads = tape.backward(opt_node);
      adam_step(store, grads, adam);
      loss_sum += loss_value;
      ++batches;
    }
    double mean_loss = batches ? loss_sum / batches : 0.0;
    if (epoch == 1) res.first_loss = mean_loss;
    res.last_loss = mean_loss;
    res.epochs_run = epoch;

    bool do_eval = can_validate && cfg.eval_every > 0 &&
                   (epoch % cfg.eval_every == 0 || epoch == cfg.epochs);
    if (do_eval) {
      auto [r20, n20] = run_validation(store);
      res.log_lines.push_back(log_line(epoch, mean_loss, true, r20, n20));
      if (r20 > res.best_recall20) {
        res.best_recall20 = r20;
        res.best_ndcg20 = n20;
        res.best_epoch = epoch;
        res.store = store;
      } else if (cfg.patience > 0 && epoch - res.best_epoch >= cfg.patience) {
        res.log_lines.push_back("# early stop at epoch " + std::to_string(epoch) +
                                " (best " + std::to_string(res.best_epoch) + ")");
        break;
      }
    } else {
      res.log_lines.push_back(log_line(epoch, mean_loss, false, 0, 0));
    }
  }

  // Without a validation signal the latest parameters are the checkpoint.
  if ((!can_validate || cfg.eval_every <= 0) && cfg.epochs > 0) res.store = store;
  return res;
}

}  // namespace diffrec
