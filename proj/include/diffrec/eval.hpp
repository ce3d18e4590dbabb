#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "diffrec/data.hpp"
#include "diffrec/matrix.hpp"

namespace diffrec {

// Full-ranking evaluation: every non-interacted item is a candidate; metrics
// are Recall@K and NDCG@K with binary relevance.

// Top-K item indices by descending score, ties broken by ascending index;
// items with mask[i] != 0 are excluded. If fewer than K items are unmasked,
// returns all of them and sets *truncated when provided.
std::vector<int> rank_items(const std::vector<double>& scores,
                            const std::vector<std::uint8_t>& mask, int k,
                            bool* truncated = nullptr);

// |topk ∩ test| / |test|. `test_items` must be sorted ascending.
double recall_at_k(const std::vector<int>& topk, const std::vector<int>& test_items);

// DCG with 1/log2(rank+1) gains over hits in topk, normalized by the ideal
// DCG of min(K, |test|) leading hits.
double ndcg_at_k(const std::vector<int>& topk, const std::vector<int>& test_items,
                 int k);

enum class EvalSplit {
  kValidation,  // judge val items, mask + condition on train only
  kTest,        // judge test items, mask + condition on train + val
};

struct UserEval {
  int user = 0;
  std::vector<double> recall;  // parallel to ks
  std::vector<double> ndcg;
  int hits = 0;  // at the largest cutoff
};

struct EvalReport {
  std::vector<int> ks;
  std::vector<double> mean_recall;
  std::vector<double> mean_ndcg;
  long evaluated_users = 0;
  long skipped_users = 0;
  std::string masking_policy;
  std::vector<UserEval> per_user;

  std::string to_text() const;      // key=value lines
  std::string per_user_csv() const; // user, r@K..., n@K..., hits
  double recall_at(int k) const;
  double ndcg_at(int k) const;
};

// `scores` has one row per bundle user (user_count x item_count), produced by
// the model conditioned on that split's history. Users with an empty judged
// set or empty conditioning history are skipped (counted, not averaged).
EvalReport evaluate(const DenseMatrix& scores, const SplitBundle& bundle,
                    const std::vector<int>& ks, EvalSplit split);

}  // namespace diffrec
