#pragma once

#include <vector>

#include "diffrec/data.hpp"

namespace diffrec {

// Recency reweighting: a user's m-th interaction (oldest first, M total)
// carries weight w_min + (m-1)/(M-1) * (w_max - w_min); a single interaction
// gets w_max. Timestamp ties follow input order (the `seq` field).

struct WeightedHistory {
  std::vector<double> weights;  // dense over items, 0 for non-interacted
  std::vector<int> sequence;    // item ids, oldest first
};

// `seq_items` must be unique item ids in interaction order.
WeightedHistory reweight(const std::vector<int>& seq_items, int item_count,
                         double w_min, double w_max);

// Replaces every user's train-row weights with the recency schedule. The
// result feeds the model as both input and regression target. Requires
// positive timestamps ordering, i.e. a temporal-regime bundle.
InteractionMatrix apply_temporal(const InteractionMatrix& train, double w_min,
                                 double w_max);

}  // namespace diffrec
