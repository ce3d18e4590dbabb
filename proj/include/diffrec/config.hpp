#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "diffrec/diffusion.hpp"
#include "diffrec/latent.hpp"

namespace diffrec {

// Flat key=value run configuration. Every key has a default; unknown keys are
// rejected so typos fail loudly. The resolved map (defaults included) is
// echoed into each run's output directory.
class RunConfig {
 public:
  RunConfig();  // defaults

  // Merge `key=value` lines from a file ('#' comments and blanks allowed).
  void load_file(const std::string& path);
  // Apply one `key=value` override.
  void set(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  bool has_value(const std::string& key) const { return !get(key).empty(); }
  long long get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;
  std::uint64_t seed() const;

  std::array<double, 3> ratios() const;
  TrainConfig train_config() const;
  LatentConfig latent_config() const;

  // Sorted key=value dump.
  std::string resolved() const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace diffrec
