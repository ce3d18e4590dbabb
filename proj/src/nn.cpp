#include "diffrec/nn.hpp"

#include <cmath>

#include "diffrec/errors.hpp"

namespace diffrec {

long long MlpSpec::param_count() const {
  long long n = 0;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i)
    n += static_cast<long long>(dims[i]) * dims[i + 1] + dims[i + 1];
  return n;
}

void mlp_init(ParamStore& store, const std::string& prefix, const MlpSpec& spec,
              Rng& rng) {
  if (spec.dims.size() < 2) throw ConfigError("mlp: need at least in/out dims");
  for (int l = 0; l < spec.layer_count(); ++l) {
    DenseMatrix& w = store.add(prefix + "w" + std::to_string(l), spec.dims[l],
                               spec.dims[l + 1]);
    xavier_init(w, rng);
    store.add(prefix + "b" + std::to_string(l), 1, spec.dims[l + 1]);
  }
}

Tape::NodeId mlp_apply(Tape& tape, ParamStore& store, const std::string& prefix,
                       const MlpSpec& spec, Tape::NodeId input) {
  if (tape.value(input).cols != spec.in_dim())
    throw ConfigError("mlp: input has " + std::to_string(tape.value(input).cols) +
                      " cols, expected " + std::to_string(spec.in_dim()));
  Tape::NodeId h = input;
  for (int l = 0; l < spec.layer_count(); ++l) {
    Tape::NodeId w = tape.param(store, prefix + "w" + std::to_string(l));
    Tape::NodeId b = tape.param(store, prefix + "b" + std::to_string(l));
    h = tape.add_rowvec(tape.matmul(h, w), b);
    if (l + 1 < spec.layer_count()) h = tape.tanh(h);
  }
  return h;
}

DenseMatrix mlp_eval(const ParamStore& store, const std::string& prefix,
                     const MlpSpec& spec, const DenseMatrix& input) {
  if (input.cols != spec.in_dim())
    throw ConfigError("mlp: input has " + std::to_string(input.cols) +
                      " cols, expected " + std::to_string(spec.in_dim()));
  DenseMatrix h = input;
  DenseMatrix next;
  for (int l = 0; l < spec.layer_count(); ++l) {
    const DenseMatrix& w = store.at(prefix + "w" + std::to_string(l));
    const DenseMatrix& b = store.at(prefix + "b" + std::to_string(l));
    matmul(h, w, next);
    for (int r = 0; r < next.rows; ++r) {
      double* row = next.row_ptr(r);
      for (int c = 0; c < next.cols; ++c) row[c] += b.data[c];
    }
    if (l + 1 < spec.layer_count())
      for (auto& x : next.data) x = std::tanh(x);
    h = std::move(next);
    next = DenseMatrix();
  }
  check_finite(h, "mlp output (" + prefix + ")");
  return h;
}

DenseMatrix dropout_input(const DenseMatrix& input, double dropout_p,
                          bool train_mode, Rng& rng) {
  if (dropout_p < 0.0 || dropout_p >= 1.0)
    throw ConfigError("dropout probability must be in [0, 1)");
  if (!train_mode || dropout_p == 0.0) return input;
  DenseMatrix out = input;
  double keep = 1.0 - dropout_p;
  double scale = 1.0 / keep;
  for (auto& x : out.data) x = (rng.uniform() < keep) ? x * scale : 0.0;
  return out;
}

DenseMatrix mlp_forward(const ParamStore& store, const std::string& prefix,
                        const MlpSpec& spec, const DenseMatrix& input,
                        double dropout_p, bool train_mode, Rng& rng) {
  return mlp_eval(store, prefix, spec, dropout_input(input, dropout_p, train_mode, rng));
}

DenseMatrix timestep_embedding(int t, int dim) {
  if (dim <= 0 || dim % 2 != 0)
    throw ConfigError("timestep embedding dim must be positive and even, got " +
                      std::to_string(dim));
  if (t < 0) throw UsageError("timestep embedding: t must be non-negative");
  DenseMatrix e(1, dim);
  for (int k = 0; 2 * k < dim; ++k) {
    double freq = std::pow(10000.0, -2.0 * k / dim);
    double angle = t * freq;
    e.data[2 * k] = std::sin(angle);
    e.data[2 * k + 1] = std::cos(angle);
  }
  return e;
}

DenseMatrix timestep_embedding_rows(int t, int dim, int rows) {
  DenseMatrix e = timestep_embedding(t, dim);
  DenseMatrix out(rows, dim);
  for (int r = 0; r < rows; ++r)
    std::copy(e.data.begin(), e.data.end(), out.row_ptr(r));
  return out;
}

}  // namespace diffrec
