#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "diffrec/eval.hpp"

#include "diffrec/errors.hpp"
#include "diffrec/latent.hpp"
#include "helpers.hpp"

using namespace diffrec;

namespace {

// Deflated power iteration on the dense Gram matrix: the independent rank-d
// factorization oracle. Returns the best rank-d reconstruction of `a`.
struct PowerSvdOracle {
  std::vector<double> singular;
  DenseMatrix reconstruction;

  static PowerSvdOracle run(const DenseMatrix& a, int d) {
    int n = a.cols;
    DenseMatrix gram(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int r = 0; r < a.rows; ++r) s += a.at(r, i) * a.at(r, j);
        gram.at(i, j) = s;
      }
    PowerSvdOracle out;
    out.reconstruction = DenseMatrix(a.rows, a.cols);
    std::vector<std::vector<double>> vs;
    Rng rng(123456);
    for (int k = 0; k < d; ++k) {
      std::vector<double> v(n);
      for (auto& x : v) x = rng.normal();
      for (int iter = 0; iter < 3000; ++iter) {
        std::vector<double> w(n, 0.0);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) w[i] += gram.at(i, j) * v[j];
        double norm = std::sqrt(std::inner_product(w.begin(), w.end(), w.begin(), 0.0));
        if (norm < 1e-14) break;
        for (int i = 0; i < n; ++i) v[i] = w[i] / norm;
      }
      double lambda = 0.0;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) lambda += v[i] * gram.at(i, j) * v[j];
      lambda = std::max(0.0, lambda);
      out.singular.push_back(std::sqrt(lambda));
      // deflate
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) gram.at(i, j) -= lambda * v[i] * v[j];
      vs.push_back(v);
    }
    // reconstruction = sum_k (A v_k) v_k^T
    for (int k = 0; k < d; ++k) {
      for (int r = 0; r < a.rows; ++r) {
        double av = 0.0;
        for (int j = 0; j < n; ++j) av += a.at(r, j) * vs[k][j];
        for (int j = 0; j < n; ++j) out.reconstruction.at(r, j) += av * vs[k][j];
      }
    }
    return out;
  }
};

double frob_err(const DenseMatrix& a, const DenseMatrix& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a.data[i] - b.data[i];
    s += d * d;
  }
  return std::sqrt(s);
}

InteractionMatrix matrix_from_dense(const DenseMatrix& a) {
  InteractionMatrix m;
  m.resize(a.rows, a.cols);
  long long seq = 0;
  for (int u = 0; u < a.rows; ++u)
    for (int i = 0; i < a.cols; ++i)
      if (a.at(u, i) != 0.0) m.add(u, {i, a.at(u, i), seq, seq}), ++seq;
  return m;
}

}  // namespace

TEST_CASE("svd embeddings: rank-1 matrix gives collinear item embeddings") {
  DenseMatrix a(6, 4);
  double col[4] = {1.0, 0.5, 0.0, 2.0};
  for (int u = 0; u < 6; ++u)
    for (int i = 0; i < 4; ++i) a.at(u, i) = (u % 2 ? 2.0 : 1.0) * col[i];
  InteractionMatrix m = matrix_from_dense(a);
  DenseMatrix emb = item_embeddings_svd(m, 2, 5);
  // second singular value ~ 0, so every row is a multiple of the first column
  for (int i = 0; i < 4; ++i) CHECK(std::abs(emb.at(i, 1)) < 1e-8);
  // collinearity: cross ratios match
  for (int i = 1; i < 4; ++i)
    CHECK(emb.at(i, 0) * col[0] == doctest::Approx(emb.at(0, 0) * col[i]).epsilon(1e-8));
}

TEST_CASE("svd embeddings: identity interactions give orthogonal embeddings") {
  DenseMatrix a = DenseMatrix::identity(3);
  InteractionMatrix m = matrix_from_dense(a);
  DenseMatrix emb = item_embeddings_svd(m, 3, 7);
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 3; ++k) dot += emb.at(i, k) * emb.at(j, k);
      CHECK(std::abs(dot) < 1e-10);
    }
  // embedding row norms equal the singular values (all 1 for the identity)
  for (int i = 0; i < 3; ++i) {
    double n = 0.0;
    for (int k = 0; k < 3; ++k) n += emb.at(i, k) * emb.at(i, k);
    CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("svd embeddings: reconstruction error matches the power-iteration oracle") {
  Rng rng(2024);
  DenseMatrix a(12, 9);
  for (auto& v : a.data) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
  if (a.data[0] == 0.0) a.data[0] = 1.0;
  InteractionMatrix m = matrix_from_dense(a);
  for (int d : {2, 4}) {
    DenseMatrix emb = item_embeddings_svd(m, d, 77);
    // Recover V (unit columns) from the scaled embedding, then project.
    DenseMatrix v(9, d);
    for (int k = 0; k < d; ++k) {
      double norm = 0.0;
      for (int i = 0; i < 9; ++i) norm += emb.at(i, k) * emb.at(i, k);
      norm = std::sqrt(norm);
      for (int i = 0; i < 9; ++i) v.at(i, k) = norm > 1e-12 ? emb.at(i, k) / norm : 0.0;
    }
    DenseMatrix recon(12, 9);
    for (int r = 0; r < 12; ++r)
      for (int k = 0; k < d; ++k) {
        double av = 0.0;
        for (int j = 0; j < 9; ++j) av += a.at(r, j) * v.at(j, k);
        for (int j = 0; j < 9; ++j) recon.at(r, j) += av * v.at(j, k);
      }
    PowerSvdOracle oracle = PowerSvdOracle::run(a, d);
    CHECK(frob_err(a, recon) <= frob_err(a, oracle.reconstruction) + 1e-6);
  }
}

TEST_CASE("svd embeddings: degenerate inputs are errors") {
  InteractionMatrix empty;
  empty.resize(4, 4);
  CHECK_THROWS_AS(item_embeddings_svd(empty, 2, 1), DataError);
  DenseMatrix a = DenseMatrix::identity(3);
  InteractionMatrix m = matrix_from_dense(a);
  CHECK_THROWS_AS(item_embeddings_svd(m, 4, 1), ConfigError);
}

TEST_CASE("kmeans: C=1 puts every item in one category") {
  Rng rng(3);
  DenseMatrix emb(7, 3);
  for (auto& v : emb.data) v = rng.normal();
  ClusterModel cm = kmeans(emb, 1, 5);
  CHECK(cm.categories == 1);
  CHECK(cm.items[0].size() == 7);
  for (int a : cm.assignment) CHECK(a == 0);
}

TEST_CASE("kmeans: two well-separated blobs are recovered exactly") {
  Rng rng(8);
  DenseMatrix emb(20, 2);
  for (int i = 0; i < 20; ++i) {
    double cx = i < 10 ? -10.0 : 10.0;
    emb.at(i, 0) = cx + 0.1 * (2 * rng.uniform() - 1);
    emb.at(i, 1) = 0.1 * (2 * rng.uniform() - 1);
  }
  ClusterModel cm = kmeans(emb, 2, 17);
  for (int i = 1; i < 10; ++i) CHECK(cm.assignment[i] == cm.assignment[0]);
  for (int i = 11; i < 20; ++i) CHECK(cm.assignment[i] == cm.assignment[10]);
  CHECK(cm.assignment[0] != cm.assignment[10]);
}

TEST_CASE("kmeans: deterministic for a fixed seed; C > items rejected") {
  Rng rng(4);
  DenseMatrix emb(9, 2);
  for (auto& v : emb.data) v = rng.normal();
  ClusterModel a = kmeans(emb, 3, 42);
  ClusterModel b = kmeans(emb, 3, 42);
  CHECK(a.assignment == b.assignment);
  CHECK_THROWS_AS(kmeans(emb, 10, 1), ConfigError);
}

TEST_CASE("latent dims: proportional split with largest remainder, minimum 1") {
  Rng rng(4);
  DenseMatrix emb(10, 2);
  for (int i = 0; i < 10; ++i) {
    emb.at(i, 0) = i < 7 ? -5.0 + 0.01 * i : 5.0 + 0.01 * i;
    emb.at(i, 1) = 0.0;
  }
  ClusterModel cm = kmeans(emb, 2, 9);
  assign_latent_dims(cm, 10);
  CHECK(cm.latent_total() == 10);
  // 7:3 split over 10 dims
  int big = cm.items[0].size() == 7 ? 0 : 1;
  CHECK(cm.latent_dims[big] == 7);
  CHECK(cm.latent_dims[1 - big] == 3);
  CHECK(cm.latent_offsets[0] == 0);
  CHECK(cm.latent_offsets[1] == cm.latent_dims[0]);
}

TEST_CASE("encode: deterministic mode is repeatable and zero for zero encoders") {
  auto bundle = testutil::ToyBundle::make(
      2, 6, {{0, 0, 1}, {0, 3, 2}, {1, 1, 3}, {1, 5, 4}}, {}, {});
  Rng rng(7);
  DenseMatrix emb = item_embeddings_svd(bundle.train, 2, 3);
  ClusterModel cm = kmeans(emb, 2, 5);
  assign_latent_dims(cm, 4);
  ParamStore store;
  Rng init(11);
  VaeStack vae = VaeStack::create(store, cm, 3, 0.3, 0, init);

  DenseMatrix x0(2, 6);
  bundle.train.fill_dense_row(0, x0.row_ptr(0));
  bundle.train.fill_dense_row(1, x0.row_ptr(1));
  EncodeResult a = encode(store, vae, cm, x0, nullptr, true);
  EncodeResult b = encode(store, vae, cm, x0, nullptr, true);
  for (std::size_t i = 0; i < a.z0.size(); ++i) CHECK(a.z0.data[i] == b.z0.data[i]);

  for (auto& [name, e] : store.entries())
    if (name.rfind("enc", 0) == 0) std::fill(e.value.data.begin(), e.value.data.end(), 0.0);
  EncodeResult z = encode(store, vae, cm, x0, nullptr, true);
  for (double v : z.z0.data) CHECK(v == 0.0);
}

TEST_CASE("encode: reparameterized draw equals mu + sigma*eps on a 2-dim latent") {
  auto bundle = testutil::ToyBundle::make(1, 4, {{0, 0, 1}, {0, 2, 2}}, {}, {});
  ClusterModel cm;
  cm.categories = 1;
  cm.assignment = {0, 0, 0, 0};
  cm.items = {{0, 1, 2, 3}};
  assign_latent_dims(cm, 2);
  ParamStore store;
  Rng init(13);
  VaeStack vae = VaeStack::create(store, cm, 3, 0.3, 0, init);
  DenseMatrix x0(1, 4);
  bundle.train.fill_dense_row(0, x0.row_ptr(0));

  EncodeResult det = encode(store, vae, cm, x0, nullptr, true);
  Rng r1(555);
  EncodeResult sampled = encode(store, vae, cm, x0, &r1, false);
  Rng r2(555);
  for (int j = 0; j < 2; ++j) {
    double eps = r2.normal();
    double want = det.z0.at(0, j) + sampled.sigma[0].at(0, j) * eps;
    CHECK(sampled.z0.at(0, j) == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("decode: scatter puts category logits at the right global items") {
  // 5 items, C=2, hand assignment: category 0 = {0, 3}, category 1 = {1, 2, 4}
  ClusterModel cm;
  cm.categories = 2;
  cm.assignment = {0, 1, 1, 0, 1};
  cm.items = {{0, 3}, {1, 2, 4}};
  assign_latent_dims(cm, 4);
  ParamStore store;
  Rng init(3);
  VaeStack vae = VaeStack::create(store, cm, 2, 0.3, 0, init);
  DenseMatrix z(1, 4);
  z.data = {0.3, -0.2, 0.9, 0.1};
  DenseMatrix scores = decode(store, vae, cm, z);
  // category outputs computed independently
  DenseMatrix z0(1, cm.latent_dims[0]), z1(1, cm.latent_dims[1]);
  std::copy(z.data.begin(), z.data.begin() + cm.latent_dims[0], z0.data.begin());
  std::copy(z.data.begin() + cm.latent_dims[0], z.data.end(), z1.data.begin());
  DenseMatrix out0 = mlp_eval(store, "dec0/", vae.dec_specs[0], z0);
  DenseMatrix out1 = mlp_eval(store, "dec1/", vae.dec_specs[1], z1);
  CHECK(scores.at(0, 0) == out0.at(0, 0));
  CHECK(scores.at(0, 3) == out0.at(0, 1));
  CHECK(scores.at(0, 1) == out1.at(0, 0));
  CHECK(scores.at(0, 2) == out1.at(0, 1));
  CHECK(scores.at(0, 4) == out1.at(0, 2));
}

TEST_CASE("vae loss: zero-mean unit-variance latents have zero KL") {
  // zero encoder weights give mu = 0, logvar = 0 (sigma = 1): KL term is 0,
  // so the loss reduces to the negative multinomial log-likelihood.
  ClusterModel cm;
  cm.categories = 1;
  cm.assignment = {0, 0, 0};
  cm.items = {{0, 1, 2}};
  assign_latent_dims(cm, 2);
  ParamStore store;
  Rng init(5);
  VaeStack vae = VaeStack::create(store, cm, 2, 0.3, 0, init);
  for (auto& [name, e] : store.entries())
    std::fill(e.value.data.begin(), e.value.data.end(), 0.0);
  DenseMatrix x0(1, 3);
  x0.data = {1.0, 0.0, 1.0};
  double with_kl = vae_loss(store, vae, cm, x0, nullptr, 5.0);
  double without_kl = vae_loss(store, vae, cm, x0, nullptr, 0.0);
  CHECK(with_kl == doctest::Approx(without_kl).epsilon(1e-12));
  // zero decoder: uniform softmax over 3 items, two observed interactions
  CHECK(without_kl == doctest::Approx(2.0 * std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("vae loss: 1-dim latent with mu=1, sigma=1 has KL exactly 0.5") {
  ClusterModel cm;
  cm.categories = 1;
  cm.assignment = {0, 0};
  cm.items = {{0, 1}};
  assign_latent_dims(cm, 1);
  ParamStore store;
  // identity-ish encoder: w0 = 0 so hidden = tanh(b0); choose b0 = 0 and
  // output bias mu = 1, logvar = 0.
  store.add("enc0/w0", 2, 1);
  store.add("enc0/b0", 1, 1);
  store.add("enc0/w1", 1, 2);
  store.add("enc0/b1", 1, 2).data = {1.0, 0.0};  // mu = 1, logvar = 0
  store.add("dec0/w0", 1, 1);
  store.add("dec0/b0", 1, 1);
  store.add("dec0/w1", 1, 2);
  store.add("dec0/b1", 1, 2);
  VaeStack vae;
  vae.enc_specs = {MlpSpec{{2, 1, 2}}};
  vae.dec_specs = {MlpSpec{{1, 1, 2}}};
  vae.gamma_max = 1.0;
  DenseMatrix x0(1, 2);  // all-zero row: multinomial term vanishes
  double loss_g1 = vae_loss(store, vae, cm, x0, nullptr, 1.0);
  CHECK(loss_g1 == doctest::Approx(0.5).epsilon(1e-12));
  double loss_g2 = vae_loss(store, vae, cm, x0, nullptr, 2.0);
  CHECK(loss_g2 == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("vae loss: multinomial term is invariant to constant logit shifts") {
  ClusterModel cm;
  cm.categories = 1;
  cm.assignment = {0, 0, 0};
  cm.items = {{0, 1, 2}};
  assign_latent_dims(cm, 2);
  ParamStore store;
  Rng init(21);
  VaeStack vae = VaeStack::create(store, cm, 2, 0.3, 0, init);
  DenseMatrix x0(1, 3);
  x0.data = {1.0, 1.0, 0.0};
  double before = vae_loss(store, vae, cm, x0, nullptr, 0.0);
  for (auto& v : store.at("dec0/b1").data) v += 17.0;  // shift every logit
  double after = vae_loss(store, vae, cm, x0, nullptr, 0.0);
  CHECK(before == doctest::Approx(after).epsilon(1e-9));
}

TEST_CASE("vae loss: gradients match finite differences") {
  ClusterModel cm;
  cm.categories = 2;
  cm.assignment = {0, 1, 0, 1};
  cm.items = {{0, 2}, {1, 3}};
  assign_latent_dims(cm, 3);
  ParamStore store;
  Rng init(31);
  VaeStack vae = VaeStack::create(store, cm, 2, 0.3, 0, init);
  DenseMatrix x0(2, 4);
  x0.data = {1, 0, 1, 0, 0, 1, 0, 1};
  double gamma = 0.4;
  auto value = [&]() { return vae_loss(store, vae, cm, x0, nullptr, gamma); };
  Tape tape;
  GradMap grads = tape.backward(vae_loss_taped(tape, store, vae, cm, x0, nullptr, gamma).loss);
  CHECK(testutil::max_fd_rel_err(store, grads, value) < 1e-4);
}

TEST_CASE("vae loss: gamma = 0 removes the KL gradient contribution exactly") {
  ClusterModel cm;
  cm.categories = 1;
  cm.assignment = {0, 0, 0};
  cm.items = {{0, 1, 2}};
  assign_latent_dims(cm, 2);
  ParamStore store;
  Rng init(41);
  VaeStack vae = VaeStack::create(store, cm, 2, 0.3, 0, init);
  DenseMatrix x0(1, 3);
  x0.data = {1.0, 0.0, 1.0};
  // gamma = 0: gradient must equal the multinomial part alone. Compare against
  // a tape where the KL term never enters (gamma = 0 gives an exact zero
  // kl coefficient, so grads from the two builds must be identical).
  Tape t1;
  GradMap g0 = t1.backward(vae_loss_taped(t1, store, vae, cm, x0, nullptr, 0.0).loss);
  Tape t2;
  GradMap g1 = t2.backward(vae_loss_taped(t2, store, vae, cm, x0, nullptr, 1.0).loss);
  // encoder mean weights feed both terms; decoder weights only the multinomial.
  // With gamma=0 vs gamma=1, decoder grads agree, encoder grads differ.
  bool encoder_differs = false;
  for (const auto& [name, g] : g0) {
    const auto& h = g1.at(name);
    if (name.rfind("dec", 0) == 0) {
      for (std::size_t i = 0; i < g.size(); ++i)
        CHECK(g.data[i] == doctest::Approx(h.data[i]).epsilon(1e-12));
    } else {
      for (std::size_t i = 0; i < g.size(); ++i)
        if (std::abs(g.data[i] - h.data[i]) > 1e-12) encoder_differs = true;
    }
  }
  CHECK(encoder_differs);
}

TEST_CASE("train_latent: lambda = 0 leaves denoiser gradients at zero") {
  auto bundle = testutil::ToyBundle::make(
      3, 6, {{0, 0, 1}, {0, 2, 2}, {1, 1, 3}, {1, 4, 4}, {2, 3, 5}, {2, 5, 6}},
      {{0, 1, 7}}, {});
  LatentConfig cfg;
  cfg.base.steps = 2;
  cfg.base.epochs = 3;
  cfg.base.batch_size = 3;
  cfg.base.lr = 1e-3;
  cfg.base.hidden = {4};
  cfg.base.dropout = 0.0;
  cfg.base.seed = 5;
  cfg.base.eval_every = 0;
  cfg.base.patience = 0;
  cfg.categories = 2;
  cfg.latent_total = 4;
  cfg.lambda_diff = 0.0;
  cfg.svd_dim = 2;
  LatentTrainResult res = train_latent(bundle.train, bundle, cfg);
  // denoiser tensors must still be exactly at their initialization: rerun
  // with zero epochs and compare.
  LatentConfig cfg0 = cfg;
  cfg0.base.epochs = 0;
  LatentTrainResult init = train_latent(bundle.train, bundle, cfg0);
  for (const auto& [name, e] : res.store.entries()) {
    if (name.rfind("den/", 0) != 0) continue;
    const auto& other = init.store.entry(name).value;
    for (std::size_t i = 0; i < e.value.size(); ++i)
      CHECK(e.value.data[i] == other.data[i]);
  }
}

TEST_CASE("train_latent: toy run decreases the joint loss") {
  auto bundle = testutil::ToyBundle::make(
      3, 6, {{0, 0, 1}, {0, 2, 2}, {1, 1, 3}, {1, 4, 4}, {2, 3, 5}, {2, 5, 6}},
      {}, {});
  LatentConfig cfg;
  cfg.base.steps = 2;
  cfg.base.epochs = 150;
  cfg.base.batch_size = 3;
  cfg.base.lr = 5e-3;
  cfg.base.noise_scale = 0.0;
  cfg.base.sampler = StepSampling::kUniform;
  cfg.base.hidden = {6};
  cfg.base.dropout = 0.0;
  cfg.base.seed = 9;
  cfg.base.eval_every = 0;
  cfg.base.patience = 0;
  cfg.categories = 2;
  cfg.latent_total = 4;
  cfg.lambda_diff = 0.1;
  cfg.gamma_max = 0.1;
  cfg.anneal_epochs = 10;
  cfg.svd_dim = 2;
  LatentTrainResult res = train_latent(bundle.train, bundle, cfg);
  CHECK(res.last_loss < res.first_loss);
}

TEST_CASE("infer_latent: deterministic at t_prime = 0; zero decoder documents tie-break") {
  auto bundle = testutil::ToyBundle::make(
      2, 5, {{0, 0, 1}, {0, 2, 2}, {1, 1, 3}, {1, 4, 4}}, {}, {});
  LatentConfig cfg;
  cfg.base.steps = 2;
  cfg.base.epochs = 2;
  cfg.base.batch_size = 2;
  cfg.base.hidden = {4};
  cfg.base.seed = 3;
  cfg.base.eval_every = 0;
  cfg.base.patience = 0;
  cfg.categories = 2;
  cfg.latent_total = 4;
  cfg.svd_dim = 2;
  LatentTrainResult res = train_latent(bundle.train, bundle, cfg);
  DenseMatrix x0(1, 5);
  bundle.train.fill_dense_row(0, x0.row_ptr(0));
  DenseMatrix a = infer_latent(res.store, res.model, x0, 0);
  DenseMatrix b = infer_latent(res.store, res.model, x0, 0);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.data[i] == b.data[i]);

  // zero decoders -> all scores equal -> ranking falls back to index order
  ParamStore zeroed = res.store;
  for (auto& [name, e] : zeroed.entries())
    if (name.rfind("dec", 0) == 0) std::fill(e.value.data.begin(), e.value.data.end(), 0.0);
  DenseMatrix flat = infer_latent(zeroed, res.model, x0, 0);
  std::vector<std::uint8_t> mask(5, 0);
  std::vector<double> row(flat.data.begin(), flat.data.end());
  CHECK(rank_items(row, mask, 3) == std::vector<int>{0, 1, 2});
}

TEST_CASE("count_params: linear layer and full model accounting") {
  // in=3, out=2 -> 8 parameters
  MlpSpec small{{3, 2}};
  CHECK(small.param_count() == 8);

  // interaction-space denoiser at catalog scale, hidden [200, 600], embed 10
  ParamStore store;
  Rng rng(1);
  DenoiserNet net =
      DenoiserNet::create(store, 2810, {200, 600}, Objective::kX0Elbo, 0.5, rng);
  (void)net;
  auto counts = count_params(store);
  long long expect = (2820LL * 200 + 200) + (200LL * 600 + 600) + (600LL * 2810 + 2810);
  CHECK(counts["denoiser"] == expect);
  CHECK(counts["total"] == expect);
  CHECK(counts["encoders"] == 0);
}

TEST_CASE("count_params: latent variant is strictly smaller at matched dims") {
  // catalog-scale accounting without training anything
  int items = 2810;
  ClusterModel cm;
  cm.categories = 2;
  cm.assignment.assign(items, 0);
  for (int i = items / 2; i < items; ++i) cm.assignment[i] = 1;
  cm.items.assign(2, {});
  for (int i = 0; i < items; ++i) cm.items[cm.assignment[i]].push_back(i);
  assign_latent_dims(cm, 300);

  ParamStore latent_store;
  Rng rng(2);
  VaeStack vae = VaeStack::create(latent_store, cm, 150, 0.3, 0, rng);
  (void)vae;
  DenoiserNet den =
      DenoiserNet::create(latent_store, 300, {200, 600}, Objective::kX0Elbo, 0.0, rng);
  (void)den;
  auto latent_counts = count_params(latent_store);

  ParamStore flat_store;
  DenoiserNet flat =
      DenoiserNet::create(flat_store, items, {200, 600}, Objective::kX0Elbo, 0.5, rng);
  (void)flat;
  auto flat_counts = count_params(flat_store);

  CHECK(latent_counts["total"] < flat_counts["total"]);
  // headline reduction should be substantial (documented >= 30% on this config)
  CHECK(latent_counts["total"] <= 0.7 * flat_counts["total"]);
}

TEST_CASE("count_params: increasing C never increases encoder+decoder totals") {
  int items = 600;
  long long prev = -1;
  for (int c : {1, 2, 3, 5}) {
    ClusterModel cm;
    cm.categories = c;
    cm.assignment.assign(items, 0);
    for (int i = 0; i < items; ++i) cm.assignment[i] = i % c;
    cm.items.assign(c, {});
    for (int i = 0; i < items; ++i) cm.items[cm.assignment[i]].push_back(i);
    assign_latent_dims(cm, 300);
    ParamStore store;
    Rng rng(3);
    VaeStack vae = VaeStack::create(store, cm, std::max(1, 300 / c), 0.3, 0, rng);
    (void)vae;
    auto counts = count_params(store);
    long long enc_dec = counts["encoders"] + counts["decoders"];
    if (prev >= 0) CHECK(enc_dec <= prev);
    prev = enc_dec;
  }
}

TEST_CASE("cluster assignment: save/load round-trip") {
  ClusterModel cm;
  cm.categories = 3;
  cm.assignment = {0, 2, 1, 1, 0, 2, 2};
  cm.items.assign(3, {});
  for (std::size_t i = 0; i < cm.assignment.size(); ++i)
    cm.items[cm.assignment[i]].push_back(static_cast<int>(i));
  assign_latent_dims(cm, 6);
  auto path = std::filesystem::temp_directory_path() / "diffrec_clusters.tsv";
  save_cluster_assignment(cm, path.string());
  ClusterModel back = load_cluster_assignment(path.string(), 6);
  CHECK(back.assignment == cm.assignment);
  CHECK(back.latent_dims == cm.latent_dims);
}
