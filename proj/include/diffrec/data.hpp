#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "diffrec/matrix.hpp"

namespace diffrec {

// One parsed input line. `rating` is NaN for the unrated marker "-";
// unrated interactions are treated as implicit positives.
struct RawInteraction {
  int user = -1;
  int item = -1;
  double rating = 0.0;
  long long timestamp = 0;
  long long line_no = 0;
};

bool is_rated(const RawInteraction& r);

struct Dataset {
  std::vector<RawInteraction> records;         // deduplicated
  std::vector<std::string> user_tokens;        // raw ids, file order
  std::vector<std::string> item_tokens;
  long long duplicates_dropped = 0;
  std::vector<std::string> warnings;
};

// TSV lines: user \t item \t rating \t timestamp. Malformed lines are
// reported (with line numbers) in warnings; duplicate (user, item) pairs keep
// the latest-timestamp record. Throws DataError if the file is unreadable or
// contains lines but no parsable records.
Dataset ingest(const std::string& path);

// One interaction inside a split. `seq` is the record's position in the
// global chronological order (timestamp, then input line) and fixes both the
// on-disk row order and the timestamp tie-break for sequence models.
struct Interaction {
  int item = 0;
  double weight = 1.0;
  long long ts = 0;
  long long seq = 0;
};

struct InteractionMatrix {
  int user_count = 0;
  int item_count = 0;
  std::vector<std::vector<Interaction>> rows;  // per user, sorted by item

  void resize(int users, int items);
  // Insert keeping item order; throws DataError on duplicate (user, item).
  void add(int user, const Interaction& it);
  bool contains(int user, int item) const;
  int degree(int user) const { return static_cast<int>(rows[user].size()); }
  long long interaction_count() const;
  // Dense row of weights (zeros for non-interacted items).
  void fill_dense_row(int user, double* out) const;
  bool operator==(const InteractionMatrix& o) const;
};

enum class Regime { kClean, kNaturalNoise, kRandomNoise, kTemporal };

std::string regime_name(Regime r);
Regime regime_from_name(const std::string& name);

struct SplitBundle {
  Regime regime = Regime::kClean;
  double noise_p = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::string> user_tokens;  // bundle index -> token
  std::vector<std::string> item_tokens;
  InteractionMatrix train, val, test;
  std::map<std::string, std::string> manifest;
  std::vector<std::pair<int, int>> injected;  // (user, item) noise log

  int user_count() const { return static_cast<int>(user_tokens.size()); }
  int item_count() const { return static_cast<int>(item_tokens.size()); }
};

// Clean protocol: drop ratings < 4, sort all interactions chronologically,
// split by interaction count with a floor-then-largest-remainder rule.
SplitBundle split_clean(const Dataset& ds, std::array<double, 3> ratios,
                        std::uint64_t seed);

// Same test set as clean; train/val rebuilt to include sub-4-rating
// interactions, then uniformly downsampled back to the clean sizes.
SplitBundle split_natural_noise(const Dataset& ds, std::array<double, 3> ratios,
                                std::uint64_t seed);

// Adds round(p * train-degree) non-interacted items per user to the clean
// training rows; validation and test untouched.
SplitBundle inject_random_noise(const SplitBundle& clean, double p,
                                std::uint64_t seed);

// Same membership as clean; tags the bundle so sequence-aware training is
// allowed to consume the per-user timestamp order.
SplitBundle split_temporal(const Dataset& ds, std::array<double, 3> ratios,
                           std::uint64_t seed);

// Row-wise union of two disjoint matrices (e.g. train + val conditioning
// histories); overlapping (user, item) pairs are a data error.
InteractionMatrix union_of(const InteractionMatrix& a, const InteractionMatrix& b);

// Bundle directory: train.tsv / val.tsv / test.tsv (user \t item \t weight
// \t timestamp; rows user-major in chronological order), vocab_users.tsv,
// vocab_items.tsv, manifest (sorted key=value), and injected.tsv when noise
// was injected.
void save_bundle(const SplitBundle& bundle, const std::string& dir);
SplitBundle load_bundle(const std::string& dir);

}  // namespace diffrec
