#include "diffrec/params.hpp"

#include <cmath>

#include "diffrec/errors.hpp"

namespace diffrec {

DenseMatrix& ParamStore::add(const std::string& name, int rows, int cols) {
  if (entries_.count(name)) throw ConfigError("duplicate parameter tensor: " + name);
  Entry e;
  e.value = DenseMatrix(rows, cols);
  e.m = DenseMatrix(rows, cols);
  e.v = DenseMatrix(rows, cols);
  return entries_.emplace(name, std::move(e)).first->second.value;
}

DenseMatrix& ParamStore::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown parameter tensor: " + name);
  return it->second.value;
}

const DenseMatrix& ParamStore::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown parameter tensor: " + name);
  return it->second.value;
}

ParamStore::Entry& ParamStore::entry(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown parameter tensor: " + name);
  return it->second;
}

long long ParamStore::count_params(const std::string& prefix) const {
  long long n = 0;
  for (const auto& [name, e] : entries_)
    if (name.rfind(prefix, 0) == 0) n += static_cast<long long>(e.value.size());
  return n;
}

void xavier_init(DenseMatrix& w, Rng& rng) {
  double a = std::sqrt(6.0 / (w.rows + w.cols));
  for (auto& x : w.data) x = (2.0 * rng.uniform() - 1.0) * a;
}

void adam_step(ParamStore& params, const GradMap& grads, const AdamConfig& cfg) {
  for (const auto& [name, g] : grads) {
    const DenseMatrix& value = params.at(name);
    if (!g.same_shape(value))
      throw ConfigError("gradient shape " + g.shape_str() + " does not match parameter " +
                        name + " (" + value.shape_str() + ")");
    for (double x : g.data)
      if (!std::isfinite(x))
        throw NumericError("non-finite gradient for parameter " + name +
                           " at step " + std::to_string(params.step() + 1) +
                           "; aborting update");
  }
  long t = params.step() + 1;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (const auto& [name, g] : grads) {
    auto& e = params.entry(name);
    for (std::size_t i = 0; i < g.size(); ++i) {
      double gi = g.data[i];
      e.m.data[i] = cfg.beta1 * e.m.data[i] + (1.0 - cfg.beta1) * gi;
      e.v.data[i] = cfg.beta2 * e.v.data[i] + (1.0 - cfg.beta2) * gi * gi;
      double m_hat = e.m.data[i] / bc1;
      double v_hat = e.v.data[i] / bc2;
      e.value.data[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
  params.set_step(t);
}

}  // namespace diffrec
