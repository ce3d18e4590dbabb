#pragma once

#include <string>
#include <vector>

#include "diffrec/matrix.hpp"
#include "diffrec/params.hpp"
#include "diffrec/rng.hpp"
#include "diffrec/tape.hpp"

namespace diffrec {

// Fully connected net: dims = {in, h1, ..., out}. tanh on every layer except
// the last, which stays linear.
struct MlpSpec {
  std::vector<int> dims;

  int in_dim() const { return dims.front(); }
  int out_dim() const { return dims.back(); }
  int layer_count() const { return static_cast<int>(dims.size()) - 1; }
  long long param_count() const;
};

// Creates `prefix + "w<i>"` / `prefix + "b<i>"` tensors. Weights are
// Xavier-uniform, biases zero.
void mlp_init(ParamStore& store, const std::string& prefix, const MlpSpec& spec,
              Rng& rng);

// Taped forward for training.
Tape::NodeId mlp_apply(Tape& tape, ParamStore& store, const std::string& prefix,
                       const MlpSpec& spec, Tape::NodeId input);

// Plain forward (no gradient recording) for inference paths.
DenseMatrix mlp_eval(const ParamStore& store, const std::string& prefix,
                     const MlpSpec& spec, const DenseMatrix& input);

// Inverted dropout on a raw input matrix: zero with probability p, scale
// survivors by 1/(1-p). Identity when train_mode is off or p == 0.
DenseMatrix dropout_input(const DenseMatrix& input, double dropout_p,
                          bool train_mode, Rng& rng);

// Spec-level convenience matching the basic forward contract: input dropout
// (training only) followed by the plain MLP evaluation.
DenseMatrix mlp_forward(const ParamStore& store, const std::string& prefix,
                        const MlpSpec& spec, const DenseMatrix& input,
                        double dropout_p, bool train_mode, Rng& rng);

// Sinusoidal step embedding: element 2k = sin(t / 10000^(2k/dim)),
// element 2k+1 = cos of the same angle. dim must be even.
DenseMatrix timestep_embedding(int t, int dim);

// Embedding tiled to `rows` identical rows, for batched concatenation.
DenseMatrix timestep_embedding_rows(int t, int dim, int rows);

}  // namespace diffrec
