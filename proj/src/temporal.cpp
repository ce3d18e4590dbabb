#include "diffrec/temporal.hpp"

#include <algorithm>

#include "diffrec/errors.hpp"

namespace diffrec {

WeightedHistory reweight(const std::vector<int>& seq_items, int item_count,
                         double w_min, double w_max) {
  if (!(0.0 < w_min && w_min <= w_max && w_max <= 1.0))
    throw ConfigError("need 0 < w_min <= w_max <= 1");
  WeightedHistory wh;
  wh.weights.assign(item_count, 0.0);
  wh.sequence = seq_items;
  int m_total = static_cast<int>(seq_items.size());
  for (int m = 1; m <= m_total; ++m) {
    int item = seq_items[m - 1];
    if (item < 0 || item >= item_count)
      throw DataError("reweight: unknown item id " + std::to_string(item));
    if (wh.weights[item] != 0.0)
      throw DataError("reweight: duplicate item " + std::to_string(item) +
                      " in interaction sequence");
    double w = (m_total == 1)
                   ? w_max  // the only interaction is the most recent one
                   : w_min + (static_cast<double>(m - 1) / (m_total - 1)) * (w_max - w_min);
    wh.weights[item] = w;
  }
  return wh;
}

InteractionMatrix apply_temporal(const InteractionMatrix& train, double w_min,
                                 double w_max) {
  InteractionMatrix out = train;
  std::vector<const Interaction*> order;
  std::vector<int> seq_items;
  for (int u = 0; u < train.user_count; ++u) {
    if (train.rows[u].empty()) continue;
    order.clear();
    for (const auto& it : train.rows[u]) order.push_back(&it);
    std::sort(order.begin(), order.end(), [](const Interaction* a, const Interaction* b) {
      if (a->ts != b->ts) return a->ts < b->ts;
      return a->seq < b->seq;  // dataset line order breaks timestamp ties
    });
    seq_items.clear();
    for (const auto* it : order) seq_items.push_back(it->item);
    WeightedHistory wh = reweight(seq_items, train.item_count, w_min, w_max);
    for (auto& it : out.rows[u]) it.weight = wh.weights[it.item];
  }
  return out;
}

}  // namespace diffrec
