#pragma once

#include <map>
#include <string>
#include <vector>

#include "diffrec/matrix.hpp"
#include "diffrec/rng.hpp"

namespace diffrec {

// Gradients keyed like the ParamStore they were computed against.
using GradMap = std::map<std::string, DenseMatrix>;

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Named trainable tensors plus their Adam moment accumulators and a shared
// step counter. std::map keeps iteration order deterministic.
class ParamStore {
 public:
  struct Entry {
    DenseMatrix value;
    DenseMatrix m;  // first moment
    DenseMatrix v;  // second moment
  };

  DenseMatrix& add(const std::string& name, int rows, int cols);
  bool has(const std::string& name) const { return entries_.count(name) != 0; }
  DenseMatrix& at(const std::string& name);
  const DenseMatrix& at(const std::string& name) const;
  Entry& entry(const std::string& name);

  const std::map<std::string, Entry>& entries() const { return entries_; }
  std::map<std::string, Entry>& entries() { return entries_; }

  long step() const { return step_; }
  void set_step(long s) { step_ = s; }

  // Number of trainable scalars across tensors whose name starts with prefix
  // (empty prefix counts everything).
  long long count_params(const std::string& prefix = "") const;

 private:
  std::map<std::string, Entry> entries_;
  long step_ = 0;
};

// Xavier-uniform weight init: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
void xavier_init(DenseMatrix& w, Rng& rng);

// One bias-corrected Adam update over every gradient in `grads`.
// Parameters without a gradient entry are left untouched. Increments the
// store's step counter by one. Throws NumericError on non-finite gradients
// before mutating anything.
void adam_step(ParamStore& params, const GradMap& grads, const AdamConfig& cfg);

}  // namespace diffrec
