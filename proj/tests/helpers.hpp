#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "diffrec/params.hpp"

namespace testutil {

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

// Central finite differences against the analytic gradients, h = 1e-5.
// `loss_fn` must re-evaluate the loss from the store's current values.
inline double max_fd_rel_err(diffrec::ParamStore& store,
                             const diffrec::GradMap& analytic,
                             const std::function<double()>& loss_fn,
                             double h = 1e-5) {
  double worst = 0.0;
  for (const auto& [name, grad] : analytic) {
    diffrec::DenseMatrix& value = store.at(name);
    for (std::size_t i = 0; i < value.size(); ++i) {
      double keep = value.data[i];
      value.data[i] = keep + h;
      double up = loss_fn();
      value.data[i] = keep - h;
      double down = loss_fn();
      value.data[i] = keep;
      double fd = (up - down) / (2.0 * h);
      worst = std::max(worst, rel_err(grad.data[i], fd));
    }
  }
  return worst;
}

}  // namespace testutil

#include "diffrec/data.hpp"

namespace testutil {

// In-code toy bundle: pairs are (user, item[, ts]); timestamps default to
// increasing sequence order.
struct ToyBundle {
  static diffrec::SplitBundle make(int users, int items,
                                   const std::vector<std::array<int, 3>>& train,
                                   const std::vector<std::array<int, 3>>& val,
                                   const std::vector<std::array<int, 3>>& test) {
    diffrec::SplitBundle b;
    b.regime = diffrec::Regime::kClean;
    for (int u = 0; u < users; ++u) b.user_tokens.push_back("u" + std::to_string(u));
    for (int i = 0; i < items; ++i) b.item_tokens.push_back("i" + std::to_string(i));
    b.train.resize(users, items);
    b.val.resize(users, items);
    b.test.resize(users, items);
    long long seq = 0;
    auto fill = [&](diffrec::InteractionMatrix& m, const std::vector<std::array<int, 3>>& pairs) {
      for (const auto& p : pairs) {
        diffrec::Interaction it;
        it.item = p[1];
        it.weight = 1.0;
        it.ts = p[2] > 0 ? p[2] : seq;
        it.seq = seq++;
        m.add(p[0], it);
      }
    };
    fill(b.train, train);
    fill(b.val, val);
    fill(b.test, test);
    b.manifest["regime"] = "clean";
    b.manifest["seed"] = "0";
    return b;
  }
};

}  // namespace testutil
