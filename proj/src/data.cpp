#include "diffrec/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "diffrec/errors.hpp"
#include "diffrec/rng.hpp"

namespace diffrec {

namespace {

constexpr double kUnrated = std::numeric_limits<double>::quiet_NaN();

// (timestamp, line) is the global chronological sort key everywhere.
struct ChronoKey {
  long long ts;
  long long line;
  bool operator<(const ChronoKey& o) const {
    return ts != o.ts ? ts < o.ts : line < o.line;
  }
};

ChronoKey key_of(const RawInteraction& r) { return {r.timestamp, r.line_no}; }

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

bool is_rated(const RawInteraction& r) { return !std::isnan(r.rating); }

Dataset ingest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read input file: " + path);

  Dataset ds;
  std::unordered_map<std::string, int> user_ids, item_ids;
  // (user, item) -> index into ds.records, for the keep-latest dedup rule.
  std::unordered_map<long long, std::size_t> seen;

  std::string line;
  long long line_no = 0;
  long long parsed = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string user_tok, item_tok, rating_tok, ts_tok;
    if (!(std::getline(ss, user_tok, '\t') && std::getline(ss, item_tok, '\t') &&
          std::getline(ss, rating_tok, '\t') && std::getline(ss, ts_tok))) {
      ds.warnings.push_back("line " + std::to_string(line_no) + ": expected 4 tab-separated fields");
      continue;
    }
    RawInteraction r;
    r.line_no = line_no;
    if (rating_tok == "-") {
      r.rating = kUnrated;
    } else {
      char* end = nullptr;
      r.rating = std::strtod(rating_tok.c_str(), &end);
      if (end == rating_tok.c_str() || *end != '\0' || r.rating < 0.5 || r.rating > 5.0) {
        ds.warnings.push_back("line " + std::to_string(line_no) + ": bad rating '" + rating_tok + "'");
        continue;
      }
    }
    try {
      std::size_t pos = 0;
      r.timestamp = std::stoll(ts_tok, &pos);
      if (pos != ts_tok.size()) throw std::invalid_argument(ts_tok);
    } catch (const std::exception&) {
      ds.warnings.push_back("line " + std::to_string(line_no) + ": bad timestamp '" + ts_tok + "'");
      continue;
    }
    auto intern = [](std::unordered_map<std::string, int>& ids,
                     std::vector<std::string>& tokens, const std::string& tok) {
      auto it = ids.find(tok);
      if (it != ids.end()) return it->second;
      int id = static_cast<int>(tokens.size());
      tokens.push_back(tok);
      ids.emplace(tok, id);
      return id;
    };
    r.user = intern(user_ids, ds.user_tokens, user_tok);
    r.item = intern(item_ids, ds.item_tokens, item_tok);
    ++parsed;

    long long pair_key = static_cast<long long>(r.user) * (1LL << 31) + r.item;
    auto it = seen.find(pair_key);
    if (it == seen.end()) {
      seen.emplace(pair_key, ds.records.size());
      ds.records.push_back(r);
    } else {
      RawInteraction& prev = ds.records[it->second];
      if (key_of(prev) < key_of(r)) prev = r;  // keep latest
      ++ds.duplicates_dropped;
    }
  }
  if (line_no == 0) {
    ds.warnings.push_back("input file is empty: " + path);
  } else if (parsed == 0) {
    throw DataError("no parsable records in " + path + " (" +
                    std::to_string(ds.warnings.size()) + " malformed lines)");
  }
  if (ds.duplicates_dropped > 0)
    ds.warnings.push_back(std::to_string(ds.duplicates_dropped) +
                          " duplicate (user,item) pairs dropped, keeping the latest timestamp");
  return ds;
}

void InteractionMatrix::resize(int users, int items) {
  user_count = users;
  item_count = items;
  rows.assign(users, {});
}

void InteractionMatrix::add(int user, const Interaction& it) {
  if (user < 0 || user >= user_count || it.item < 0 || it.item >= item_count)
    throw DataError("interaction index out of bounds");
  auto& row = rows[user];
  auto pos = std::lower_bound(row.begin(), row.end(), it.item,
                              [](const Interaction& a, int b) { return a.item < b; });
  if (pos != row.end() && pos->item == it.item)
    throw DataError("duplicate (user,item) pair within a split: user " +
                    std::to_string(user) + " item " + std::to_string(it.item));
  row.insert(pos, it);
}

bool InteractionMatrix::contains(int user, int item) const {
  const auto& row = rows[user];
  auto pos = std::lower_bound(row.begin(), row.end(), item,
                              [](const Interaction& a, int b) { return a.item < b; });
  return pos != row.end() && pos->item == item;
}

long long InteractionMatrix::interaction_count() const {
  long long n = 0;
  for (const auto& row : rows) n += static_cast<long long>(row.size());
  return n;
}

void InteractionMatrix::fill_dense_row(int user, double* out) const {
  std::fill(out, out + item_count, 0.0);
  for (const auto& it : rows[user]) out[it.item] = it.weight;
}

bool InteractionMatrix::operator==(const InteractionMatrix& o) const {
  if (user_count != o.user_count || item_count != o.item_count) return false;
  for (int u = 0; u < user_count; ++u) {
    if (rows[u].size() != o.rows[u].size()) return false;
    for (std::size_t i = 0; i < rows[u].size(); ++i) {
      const Interaction &a = rows[u][i], &b = o.rows[u][i];
      if (a.item != b.item || a.weight != b.weight || a.ts != b.ts) return false;
    }
  }
  return true;
}

InteractionMatrix union_of(const InteractionMatrix& a, const InteractionMatrix& b) {
  if (a.user_count != b.user_count || a.item_count != b.item_count)
    throw ConfigError("union: matrix dimensions differ");
  InteractionMatrix out = a;
  for (int u = 0; u < b.user_count; ++u)
    for (const auto& it : b.rows[u]) out.add(u, it);
  return out;
}

std::string regime_name(Regime r) {
  switch (r) {
    case Regime::kClean: return "clean";
    case Regime::kNaturalNoise: return "natural_noise";
    case Regime::kRandomNoise: return "random_noise";
    case Regime::kTemporal: return "temporal";
  }
  return "?";
}

Regime regime_from_name(const std::string& name) {
  if (name == "clean") return Regime::kClean;
  if (name == "natural" || name == "natural_noise") return Regime::kNaturalNoise;
  if (name == "random" || name == "random_noise") return Regime::kRandomNoise;
  if (name == "temporal") return Regime::kTemporal;
  throw ConfigError("unknown regime: " + name);
}

namespace {

// floor(n * ratio) per split, remaining interactions to the largest
// fractional remainders (earlier split wins ties).
std::array<long long, 3> split_sizes(long long n, const std::array<double, 3>& ratios) {
  double rsum = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(rsum - 1.0) > 1e-9)
    throw ConfigError("split ratios must sum to 1, got " + format_double(rsum));
  std::array<long long, 3> sizes;
  std::array<double, 3> rem;
  long long used = 0;
  for (int i = 0; i < 3; ++i) {
    double exact = n * ratios[i];
    sizes[i] = static_cast<long long>(std::floor(exact));
    rem[i] = exact - static_cast<double>(sizes[i]);
    used += sizes[i];
  }
  for (long long left = n - used; left > 0; --left) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (rem[i] > rem[best]) best = i;
    ++sizes[best];
    rem[best] = -1.0;
  }
  return sizes;
}

struct VocabBuilder {
  std::unordered_map<int, int> remap;  // raw id -> bundle id
  std::vector<int> raw_of;             // bundle id -> raw id

  int get(int raw) {
    auto it = remap.find(raw);
    if (it != remap.end()) return it->second;
    int id = static_cast<int>(raw_of.size());
    remap.emplace(raw, id);
    raw_of.push_back(raw);
    return id;
  }
};

// Shared assembly: records already carry split assignment. When vocab_first
// is given, its records are interned before anything else so the bundle's
// dense indices stay aligned with the clean bundle's (noise-only entities get
// the trailing indices).
void build_matrices(SplitBundle& bundle, const Dataset& ds,
                    const std::array<std::vector<RawInteraction>, 3>& parts,
                    const std::vector<RawInteraction>* vocab_first = nullptr) {
  VocabBuilder users, items;
  if (vocab_first) {
    for (const auto& r : *vocab_first) {
      users.get(r.user);
      items.get(r.item);
    }
  }
  for (const auto& part : parts)
    for (const auto& r : part) {
      users.get(r.user);
      items.get(r.item);
    }
  bundle.user_tokens.clear();
  bundle.item_tokens.clear();
  for (int raw : users.raw_of) bundle.user_tokens.push_back(ds.user_tokens[raw]);
  for (int raw : items.raw_of) bundle.item_tokens.push_back(ds.item_tokens[raw]);

  InteractionMatrix* mats[3] = {&bundle.train, &bundle.val, &bundle.test};
  // seq: global chronological position across the whole bundle.
  std::vector<std::pair<ChronoKey, std::pair<int, const RawInteraction*>>> all;
  for (int p = 0; p < 3; ++p)
    for (const auto& r : parts[p]) all.push_back({key_of(r), {p, &r}});
  std::sort(all.begin(), all.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  for (int p = 0; p < 3; ++p)
    mats[p]->resize(static_cast<int>(bundle.user_tokens.size()),
                    static_cast<int>(bundle.item_tokens.size()));
  long long seq = 0;
  for (const auto& [key, pr] : all) {
    const RawInteraction& r = *pr.second;
    Interaction it;
    it.item = items.get(r.item);
    it.weight = 1.0;  // binary implicit feedback
    it.ts = r.timestamp;
    it.seq = seq++;
    mats[pr.first]->add(users.get(r.user), it);
  }
}

void base_manifest(SplitBundle& b, const std::array<double, 3>& ratios) {
  b.manifest["regime"] = regime_name(b.regime);
  b.manifest["seed"] = std::to_string(b.seed);
  b.manifest["users"] = std::to_string(b.user_count());
  b.manifest["items"] = std::to_string(b.item_count());
  b.manifest["train_interactions"] = std::to_string(b.train.interaction_count());
  b.manifest["val_interactions"] = std::to_string(b.val.interaction_count());
  b.manifest["test_interactions"] = std::to_string(b.test.interaction_count());
  b.manifest["ratio_train"] = format_double(ratios[0]);
  b.manifest["ratio_val"] = format_double(ratios[1]);
  b.manifest["ratio_test"] = format_double(ratios[2]);
  b.manifest["split"] = "global_chronological";
  b.manifest["tie_break"] = "input_line_order";
  b.manifest["dedup"] = "keep_latest_timestamp";
  b.manifest["format_version"] = "1";
}

// Chronologically sorted records that survive the clean rating filter.
std::vector<RawInteraction> clean_records(const Dataset& ds) {
  std::vector<RawInteraction> kept;
  for (const auto& r : ds.records)
    if (!is_rated(r) || r.rating >= 4.0) kept.push_back(r);
  std::sort(kept.begin(), kept.end(),
            [](const RawInteraction& a, const RawInteraction& b) {
              return key_of(a) < key_of(b);
            });
  if (kept.empty())
    throw DataError("no interactions remain after discarding ratings < 4");
  return kept;
}

}  // namespace

SplitBundle split_clean(const Dataset& ds, std::array<double, 3> ratios,
                        std::uint64_t seed) {
  std::vector<RawInteraction> kept = clean_records(ds);
  auto sizes = split_sizes(static_cast<long long>(kept.size()), ratios);

  SplitBundle b;
  b.regime = Regime::kClean;
  b.seed = seed;
  std::array<std::vector<RawInteraction>, 3> parts;
  long long pos = 0;
  for (int p = 0; p < 3; ++p)
    for (long long i = 0; i < sizes[p]; ++i) parts[p].push_back(kept[pos++]);
  build_matrices(b, ds, parts);
  base_manifest(b, ratios);
  return b;
}

SplitBundle split_natural_noise(const Dataset& ds, std::array<double, 3> ratios,
                                std::uint64_t seed) {
  std::vector<RawInteraction> kept = clean_records(ds);
  auto sizes = split_sizes(static_cast<long long>(kept.size()), ratios);
  long long n_train = sizes[0], n_val = sizes[1];

  // Chronological boundaries of the clean split; noise joins the phase it
  // falls into, noise during the test period is dropped.
  ChronoKey val_start = {std::numeric_limits<long long>::max(), 0};
  ChronoKey test_start = val_start;
  if (n_val > 0 && n_train < static_cast<long long>(kept.size()))
    val_start = key_of(kept[n_train]);
  if (n_train + n_val < static_cast<long long>(kept.size()))
    test_start = key_of(kept[n_train + n_val]);
  if (n_val == 0) val_start = test_start;

  std::array<std::vector<RawInteraction>, 3> parts;
  for (long long i = 0; i < n_train; ++i) parts[0].push_back(kept[i]);
  for (long long i = n_train; i < n_train + n_val; ++i) parts[1].push_back(kept[i]);
  for (std::size_t i = n_train + n_val; i < kept.size(); ++i)
    parts[2].push_back(kept[i]);
  long long clean_train = static_cast<long long>(parts[0].size());
  long long clean_val = static_cast<long long>(parts[1].size());

  std::vector<RawInteraction> noise;
  for (const auto& r : ds.records)
    if (is_rated(r) && r.rating < 4.0) noise.push_back(r);
  std::sort(noise.begin(), noise.end(),
            [](const RawInteraction& a, const RawInteraction& b) {
              return key_of(a) < key_of(b);
            });
  for (const auto& r : noise) {
    if (key_of(r) < val_start)
      parts[0].push_back(r);
    else if (key_of(r) < test_start)
      parts[1].push_back(r);
    // else: falls into the test period, dropped
  }

  // Downsample each noisy pool back to the clean size, keeping chronological
  // order, so both regimes train on the same interaction budget.
  Rng rng(seed);
  Rng train_rng = rng.fork(1), val_rng = rng.fork(2);
  auto downsample = [](std::vector<RawInteraction>& pool, long long target, Rng& r) {
    std::sort(pool.begin(), pool.end(),
              [](const RawInteraction& a, const RawInteraction& b) {
                return key_of(a) < key_of(b);
              });
    if (static_cast<long long>(pool.size()) <= target) return;
    std::vector<std::size_t> idx(pool.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    r.shuffle(idx);
    idx.resize(static_cast<std::size_t>(target));
    std::sort(idx.begin(), idx.end());
    std::vector<RawInteraction> kept_pool;
    kept_pool.reserve(idx.size());
    for (std::size_t i : idx) kept_pool.push_back(pool[i]);
    pool = std::move(kept_pool);
  };
  downsample(parts[0], clean_train, train_rng);
  downsample(parts[1], clean_val, val_rng);

  SplitBundle b;
  b.regime = Regime::kNaturalNoise;
  b.seed = seed;
  build_matrices(b, ds, parts, &kept);
  base_manifest(b, ratios);
  b.manifest["clean_train_interactions"] = std::to_string(clean_train);
  b.manifest["clean_val_interactions"] = std::to_string(clean_val);
  b.manifest["natural_noise_records"] = std::to_string(noise.size());
  return b;
}

SplitBundle inject_random_noise(const SplitBundle& clean, double p,
                                std::uint64_t seed) {
  if (clean.regime != Regime::kClean)
    throw ConfigError("random-noise injection requires a clean bundle");
  if (p < 0.0 || p >= 1.0)
    throw ConfigError("noise proportion must be in [0, 1), got " + format_double(p));

  SplitBundle b = clean;
  b.regime = Regime::kRandomNoise;
  b.noise_p = p;
  b.seed = seed;
  b.injected.clear();
  Rng rng(seed);
  Rng inject_rng = rng.fork(3);
  long long warned_users = 0;
  long long next_seq = 0;
  for (const auto* m : {&b.train, &b.val, &b.test})
    for (const auto& row : m->rows)
      for (const auto& it : row) next_seq = std::max(next_seq, it.seq + 1);

  for (int u = 0; u < b.user_count(); ++u) {
    int deg = b.train.degree(u);
    if (deg == 0 || p == 0.0) continue;
    long long want = std::llround(p * deg);
    if (want == 0) continue;
    std::vector<int> candidates;
    candidates.reserve(b.item_count());
    for (int i = 0; i < b.item_count(); ++i)
      if (!b.train.contains(u, i) && !b.val.contains(u, i) && !b.test.contains(u, i))
        candidates.push_back(i);
    if (static_cast<long long>(candidates.size()) < want) {
      ++warned_users;
      want = static_cast<long long>(candidates.size());
    }
    long long max_ts = 0;
    for (const auto& it : b.train.rows[u]) max_ts = std::max(max_ts, it.ts);
    // Partial Fisher-Yates: first `want` entries are a uniform sample.
    for (long long k = 0; k < want; ++k) {
      std::size_t j = k + static_cast<std::size_t>(inject_rng.below(candidates.size() - k));
      std::swap(candidates[k], candidates[j]);
      Interaction it;
      it.item = candidates[k];
      it.weight = 1.0;
      it.ts = max_ts;
      it.seq = next_seq++;
      b.train.add(u, it);
      b.injected.emplace_back(u, candidates[k]);
    }
  }
  b.manifest["regime"] = regime_name(b.regime);
  b.manifest["seed"] = std::to_string(seed);
  b.manifest["noise_p"] = format_double(p);
  b.manifest["injected_pairs"] = std::to_string(b.injected.size());
  b.manifest["injected_timestamp"] = "max_train_ts_of_user";
  if (warned_users > 0)
    b.manifest["injection_truncated_users"] = std::to_string(warned_users);
  b.manifest["train_interactions"] = std::to_string(b.train.interaction_count());
  return b;
}

SplitBundle split_temporal(const Dataset& ds, std::array<double, 3> ratios,
                           std::uint64_t seed) {
  SplitBundle b = split_clean(ds, ratios, seed);
  b.regime = Regime::kTemporal;
  b.manifest["regime"] = regime_name(b.regime);
  return b;
}

namespace {

void write_matrix_tsv(const std::string& path, const InteractionMatrix& m) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  std::vector<const Interaction*> order;
  for (int u = 0; u < m.user_count; ++u) {
    order.clear();
    for (const auto& it : m.rows[u]) order.push_back(&it);
    std::sort(order.begin(), order.end(),
              [](const Interaction* a, const Interaction* b) { return a->seq < b->seq; });
    for (const auto* it : order)
      out << u << '\t' << it->item << '\t' << format_double(it->weight) << '\t'
          << it->ts << '\n';
  }
  if (!out) throw DataError("write failed: " + path);
}

InteractionMatrix read_matrix_tsv(const std::string& path, int users, int items) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  InteractionMatrix m;
  m.resize(users, items);
  std::string line;
  long long seq = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    int u, i;
    double w;
    long long ts;
    if (!(ss >> u >> i >> w >> ts))
      throw DataError("malformed row in " + path + ": " + line);
    Interaction it;
    it.item = i;
    it.weight = w;
    it.ts = ts;
    it.seq = seq++;
    m.add(u, it);
  }
  return m;
}

void write_vocab(const std::string& path, const std::vector<std::string>& tokens) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  for (std::size_t i = 0; i < tokens.size(); ++i)
    out << i << '\t' << tokens[i] << '\n';
}

std::vector<std::string> read_vocab(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw DataError("malformed vocab line in " + path);
    tokens.push_back(line.substr(tab + 1));
  }
  return tokens;
}

}  // namespace

void save_bundle(const SplitBundle& bundle, const std::string& dir) {
  std::filesystem::create_directories(dir);
  write_matrix_tsv(dir + "/train.tsv", bundle.train);
  write_matrix_tsv(dir + "/val.tsv", bundle.val);
  write_matrix_tsv(dir + "/test.tsv", bundle.test);
  write_vocab(dir + "/vocab_users.tsv", bundle.user_tokens);
  write_vocab(dir + "/vocab_items.tsv", bundle.item_tokens);
  std::ofstream man(dir + "/manifest", std::ios::trunc);
  if (!man) throw DataError("cannot write manifest in " + dir);
  for (const auto& [k, v] : bundle.manifest) man << k << '=' << v << '\n';
  if (!bundle.injected.empty()) {
    std::ofstream inj(dir + "/injected.tsv", std::ios::trunc);
    for (const auto& [u, i] : bundle.injected) inj << u << '\t' << i << '\n';
  }
}

SplitBundle load_bundle(const std::string& dir) {
  SplitBundle b;
  std::ifstream man(dir + "/manifest");
  if (!man) throw DataError("cannot read manifest in " + dir + " (not a bundle directory?)");
  std::string line;
  while (std::getline(man, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("malformed manifest line: " + line);
    b.manifest[line.substr(0, eq)] = line.substr(eq + 1);
  }
  b.regime = regime_from_name(b.manifest.at("regime"));
  b.seed = std::stoull(b.manifest.at("seed"));
  if (b.manifest.count("noise_p")) b.noise_p = std::stod(b.manifest.at("noise_p"));
  b.user_tokens = read_vocab(dir + "/vocab_users.tsv");
  b.item_tokens = read_vocab(dir + "/vocab_items.tsv");
  int users = b.user_count(), items = b.item_count();
  b.train = read_matrix_tsv(dir + "/train.tsv", users, items);
  b.val = read_matrix_tsv(dir + "/val.tsv", users, items);
  b.test = read_matrix_tsv(dir + "/test.tsv", users, items);
  return b;
}

}  // namespace diffrec
