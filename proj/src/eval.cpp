#include "diffrec/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "diffrec/errors.hpp"

namespace diffrec {

std::vector<int> rank_items(const std::vector<double>& scores,
                            const std::vector<std::uint8_t>& mask, int k,
                            bool* truncated) {
  if (k < 1) throw UsageError("rank_items: K must be >= 1");
  if (mask.size() != scores.size())
    throw ConfigError("rank_items: mask/scores size mismatch");
  for (double s : scores) check_finite(s, "ranking scores");

  std::vector<int> idx;
  idx.reserve(scores.size());
  for (int i = 0; i < static_cast<int>(scores.size()); ++i)
    if (!mask[i]) idx.push_back(i);
  if (truncated) *truncated = static_cast<int>(idx.size()) < k;
  auto cmp = [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  };
  int take = std::min<int>(k, static_cast<int>(idx.size()));
  std::partial_sort(idx.begin(), idx.begin() + take, idx.end(), cmp);
  idx.resize(take);
  return idx;
}

namespace {
bool in_sorted(const std::vector<int>& sorted, int x) {
  return std::binary_search(sorted.begin(), sorted.end(), x);
}
}  // namespace

double recall_at_k(const std::vector<int>& topk, const std::vector<int>& test_items) {
  if (test_items.empty()) throw UsageError("recall: empty test set");
  int hits = 0;
  for (int i : topk)
    if (in_sorted(test_items, i)) ++hits;
  return static_cast<double>(hits) / static_cast<double>(test_items.size());
}

double ndcg_at_k(const std::vector<int>& topk, const std::vector<int>& test_items,
                 int k) {
  if (test_items.empty()) throw UsageError("ndcg: empty test set");
  double dcg = 0.0;
  int limit = std::min<int>(k, static_cast<int>(topk.size()));
  for (int r = 1; r <= limit; ++r)
    if (in_sorted(test_items, topk[r - 1])) dcg += 1.0 / std::log2(r + 1.0);
  double idcg = 0.0;
  int ideal = std::min<int>(k, static_cast<int>(test_items.size()));
  for (int r = 1; r <= ideal; ++r) idcg += 1.0 / std::log2(r + 1.0);
  return dcg / idcg;
}

EvalReport evaluate(const DenseMatrix& scores, const SplitBundle& bundle,
                    const std::vector<int>& ks, EvalSplit split) {
  if (scores.rows != bundle.user_count() || scores.cols != bundle.item_count())
    throw ConfigError("evaluate: scores are " + scores.shape_str() + " but bundle has " +
                      std::to_string(bundle.user_count()) + " users x " +
                      std::to_string(bundle.item_count()) + " items");
  if (ks.empty()) throw UsageError("evaluate: no cutoffs given");

  EvalReport rep;
  rep.ks = ks;
  rep.mean_recall.assign(ks.size(), 0.0);
  rep.mean_ndcg.assign(ks.size(), 0.0);
  rep.masking_policy =
      split == EvalSplit::kTest ? "mask=train+val,judge=test" : "mask=train,judge=val";
  int max_k = *std::max_element(ks.begin(), ks.end());

  const InteractionMatrix& judged =
      split == EvalSplit::kTest ? bundle.test : bundle.val;
  std::vector<std::uint8_t> mask(bundle.item_count());
  std::vector<int> test_items;
  for (int u = 0; u < bundle.user_count(); ++u) {
    std::size_t history = bundle.train.rows[u].size();
    if (split == EvalSplit::kTest) history += bundle.val.rows[u].size();
    if (judged.rows[u].empty() || history == 0) {
      ++rep.skipped_users;
      continue;
    }
    std::fill(mask.begin(), mask.end(), 0);
    for (const auto& it : bundle.train.rows[u]) mask[it.item] = 1;
    if (split == EvalSplit::kTest)
      for (const auto& it : bundle.val.rows[u]) mask[it.item] = 1;
    test_items.clear();
    for (const auto& it : judged.rows[u]) test_items.push_back(it.item);

    std::vector<double> row(scores.row_ptr(u), scores.row_ptr(u) + scores.cols);
    std::vector<int> topk = rank_items(row, mask, max_k);

    UserEval ue;
    ue.user = u;
    for (std::size_t i = 0; i < ks.size(); ++i) {
      std::vector<int> head(topk.begin(),
                            topk.begin() + std::min<std::size_t>(ks[i], topk.size()));
      ue.recall.push_back(recall_at_k(head, test_items));
      ue.ndcg.push_back(ndcg_at_k(head, test_items, ks[i]));
    }
    for (int i : topk)
      if (in_sorted(test_items, i)) ++ue.hits;
    rep.per_user.push_back(std::move(ue));
    ++rep.evaluated_users;
  }
  if (rep.evaluated_users > 0) {
    for (const auto& ue : rep.per_user)
      for (std::size_t i = 0; i < ks.size(); ++i) {
        rep.mean_recall[i] += ue.recall[i];
        rep.mean_ndcg[i] += ue.ndcg[i];
      }
    for (std::size_t i = 0; i < ks.size(); ++i) {
      rep.mean_recall[i] /= rep.evaluated_users;
      rep.mean_ndcg[i] /= rep.evaluated_users;
    }
  }
  return rep;
}

namespace {
std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}
}  // namespace

std::string EvalReport::to_text() const {
  std::ostringstream out;
  out << "masking_policy=" << masking_policy << '\n';
  out << "evaluated_users=" << evaluated_users << '\n';
  out << "skipped_users=" << skipped_users << '\n';
  for (std::size_t i = 0; i < ks.size(); ++i)
    out << "recall@" << ks[i] << '=' << fmt(mean_recall[i]) << '\n';
  for (std::size_t i = 0; i < ks.size(); ++i)
    out << "ndcg@" << ks[i] << '=' << fmt(mean_ndcg[i]) << '\n';
  return out.str();
}

std::string EvalReport::per_user_csv() const {
  std::ostringstream out;
  out << "user";
  for (int k : ks) out << ",r@" << k;
  for (int k : ks) out << ",n@" << k;
  out << ",hits\n";
  for (const auto& ue : per_user) {
    out << ue.user;
    for (double v : ue.recall) out << ',' << fmt(v);
    for (double v : ue.ndcg) out << ',' << fmt(v);
    out << ',' << ue.hits << '\n';
  }
  return out.str();
}

double EvalReport::recall_at(int k) const {
  for (std::size_t i = 0; i < ks.size(); ++i)
    if (ks[i] == k) return mean_recall[i];
  throw UsageError("report has no cutoff K=" + std::to_string(k));
}

double EvalReport::ndcg_at(int k) const {
  for (std::size_t i = 0; i < ks.size(); ++i)
    if (ks[i] == k) return mean_ndcg[i];
  throw UsageError("report has no cutoff K=" + std::to_string(k));
}

}  // namespace diffrec
