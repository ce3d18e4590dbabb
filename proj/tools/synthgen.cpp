// Synthetic implicit-feedback dataset generator for benchmarks and the
// acceptance suite. Emits the ingestion TSV format (user, item, rating,
// timestamp) with MovieLens-like scale and structure: clustered item
// catalogue, per-user group preferences that drift over the user's timeline,
// popularity-skewed item choice, and rating levels correlated with preference
// so the ratings<4 filter behaves like natural noise removal.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "diffrec/rng.hpp"

using diffrec::Rng;

namespace {

struct Params {
  int users = 5949;
  int items = 2810;
  int groups = 32;
  long long interactions = 890000;  // raw ratings before any filtering
  std::uint64_t seed = 20240101;
  std::string out;
  long long t0 = 946684800;        // 2000-01-01
  long long span = 94608000;       // three years
};

struct Catalogue {
  std::vector<int> group_of;                 // item -> group
  std::vector<std::vector<int>> members;     // group -> items
  std::vector<std::vector<double>> pop_cdf;  // per group, Zipf popularity CDF
};

Catalogue build_catalogue(const Params& p, Rng& rng) {
  Catalogue cat;
  cat.group_of.resize(p.items);
  cat.members.assign(p.groups, {});
  std::vector<int> shuffled(p.items);
  for (int i = 0; i < p.items; ++i) shuffled[i] = i;
  rng.shuffle(shuffled);
  for (int idx = 0; idx < p.items; ++idx) {
    int g = idx % p.groups;
    cat.group_of[shuffled[idx]] = g;
    cat.members[g].push_back(shuffled[idx]);
  }
  cat.pop_cdf.assign(p.groups, {});
  for (int g = 0; g < p.groups; ++g) {
    double acc = 0.0;
    cat.pop_cdf[g].reserve(cat.members[g].size());
    for (std::size_t r = 0; r < cat.members[g].size(); ++r) {
      acc += 1.0 / std::pow(static_cast<double>(r + 1), 1.15);
      cat.pop_cdf[g].push_back(acc);
    }
    for (auto& v : cat.pop_cdf[g]) v /= acc;
  }
  return cat;
}

int draw_from_group(const Catalogue& cat, int g, Rng& rng) {
  const auto& cdf = cat.pop_cdf[g];
  double u = rng.uniform();
  auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
  std::size_t rank = std::min<std::size_t>(it - cdf.begin(), cdf.size() - 1);
  return cat.members[g][rank];
}

int draw_rating(bool preferred, Rng& rng) {
  double u = rng.uniform();
  if (preferred) {
    if (u < 0.35) return 5;
    if (u < 0.75) return 4;
    if (u < 0.90) return 3;
    if (u < 0.97) return 2;
    return 1;
  }
  if (u < 0.05) return 5;
  if (u < 0.20) return 4;
  if (u < 0.50) return 3;
  if (u < 0.80) return 2;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  Params p;
  CLI::App app{"synthetic interaction dataset generator"};
  app.add_option("--users", p.users);
  app.add_option("--items", p.items);
  app.add_option("--groups", p.groups);
  app.add_option("--interactions", p.interactions, "raw rating count before filtering");
  app.add_option("--seed", p.seed);
  app.add_option("--out", p.out, "output TSV path")->required();
  CLI11_PARSE(app, argc, argv);

  if (p.groups < 4 || p.items < p.groups || p.users < 1) {
    std::cerr << "error: need groups >= 4, items >= groups, users >= 1\n";
    return 1;
  }

  Rng rng(p.seed);
  Catalogue cat = build_catalogue(p, rng);

  std::ofstream out(p.out, std::ios::trunc);
  if (!out) {
    std::cerr << "error: cannot write " << p.out << '\n';
    return 1;
  }

  double mean_m = static_cast<double>(p.interactions) / p.users;
  long long written = 0;
  std::vector<int> seq_items;
  std::vector<char> taken(p.items, 0);
  for (int u = 0; u < p.users; ++u) {
    // Number of ratings: lognormal-ish around the target mean, clipped.
    double ln = std::exp(rng.normal() * 0.55);
    int m = static_cast<int>(std::lround(mean_m * ln));
    m = std::clamp(m, 18, p.items / 2);

    // Activity window inside the global timeline.
    double start = rng.uniform() * 0.55;
    double len = 0.35 + rng.uniform() * 0.45;
    double end = std::min(1.0, start + len);

    // Two preferred groups; taste drifts from mostly-a to mostly-b across the
    // user's own timeline, so both groups stay observable in early history
    // while recent interactions concentrate on b.
    int ga = static_cast<int>(rng.below(p.groups));
    int gb = (ga + 1 + static_cast<int>(rng.below(p.groups - 1))) % p.groups;

    std::vector<double> times(m);
    for (auto& t : times) t = start + (end - start) * rng.uniform();
    std::sort(times.begin(), times.end());

    seq_items.clear();
    std::fill(taken.begin(), taken.end(), 0);
    for (int j = 0; j < m; ++j) {
      double r = m == 1 ? 1.0 : static_cast<double>(j) / (m - 1);
      double w_a = 0.66 * (1.0 - r) + 0.16 * r;
      double w_b = 0.26 * (1.0 - r) + 0.76 * r;  // remainder is exploration noise
      int item = -1;
      bool preferred = false;
      for (int attempt = 0; attempt < 24 && item < 0; ++attempt) {
        double pick = rng.uniform();
        int candidate;
        if (pick < w_a) {
          candidate = draw_from_group(cat, ga, rng);
          preferred = true;
        } else if (pick < w_a + w_b) {
          candidate = draw_from_group(cat, gb, rng);
          preferred = true;
        } else {
          candidate = static_cast<int>(rng.below(p.items));
          int g = cat.group_of[candidate];
          preferred = g == ga || g == gb;
        }
        if (!taken[candidate]) item = candidate;
      }
      if (item < 0) continue;  // dense user, give up on this slot
      taken[item] = 1;
      seq_items.push_back(item);
      long long ts = p.t0 + static_cast<long long>(times[j] * p.span);
      out << 'u' << u << '\t' << 'i' << item << '\t' << draw_rating(preferred, rng)
          << '\t' << ts << '\n';
      ++written;
    }
  }
  out.flush();
  if (!out) {
    std::cerr << "error: write failed for " << p.out << '\n';
    return 1;
  }
  std::cerr << "wrote " << written << " ratings for " << p.users << " users / "
            << p.items << " items to " << p.out << '\n';
  return 0;
}
