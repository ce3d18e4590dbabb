#include "diffrec/config.hpp"

#include <fstream>
#include <sstream>

#include "diffrec/errors.hpp"

namespace diffrec {

RunConfig::RunConfig() {
  values_ = {
      {"model", "diffrec"},
      {"data_dir", ""},
      {"out_dir", ""},
      {"seed", "1"},
      {"steps", "5"},
      {"t_prime", "0"},
      {"noise_scale", "0.0001"},
      {"noise_min", "0.0005"},
      {"noise_max", "0.005"},
      {"lr", "0.0001"},
      {"batch_size", "400"},
      {"epochs", "1000"},
      {"patience", "20"},
      {"eval_every", "1"},
      {"objective", "x0_elbo"},
      {"sampler", "importance"},
      {"hidden", "200,600"},
      {"dropout", "0.5"},
      {"t_per_row", "0"},
      {"categories", "2"},
      {"latent_total", "300"},
      {"lambda", "0.1"},
      {"gamma_max", "0.3"},
      {"anneal_epochs", "200"},
      {"svd_dim", "64"},
      {"w_min", "0.3"},
      {"w_max", "1"},
      {"ks", "10,20"},
      {"noise_p", "0.2"},
      {"ratio_train", "0.7"},
      {"ratio_val", "0.1"},
      {"ratio_test", "0.2"},
      {"resume", ""},
      {"per_user_csv", "0"},
  };
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path);
  std::string line;
  long n = 0;
  while (std::getline(in, line)) {
    ++n;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    while (!line.empty() && (line.back() == ' ' || line.back() == '\r' || line.back() == '\t'))
      line.pop_back();
    if (line.empty()) continue;
    try {
      set(line);
    } catch (const ConfigError& e) {
      throw ConfigError(path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

void RunConfig::set(const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("expected key=value, got '" + assignment + "'");
  set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key: " + key);
  it->second = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key: " + key);
  return it->second;
}

long long RunConfig::get_int(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t pos = 0;
    long long x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " is not an integer: '" + v + "'");
  }
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t pos = 0;
    double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " is not a number: '" + v + "'");
  }
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw ConfigError("config key " + key + " is not a boolean: '" + v + "'");
}

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
  const std::string& v = get(key);
  std::vector<int> out;
  std::istringstream ss(v);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    try {
      out.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + " has a bad list entry: '" + tok + "'");
    }
  }
  if (out.empty()) throw ConfigError("config key " + key + " must be a non-empty list");
  return out;
}

std::uint64_t RunConfig::seed() const {
  return static_cast<std::uint64_t>(get_int("seed"));
}

std::array<double, 3> RunConfig::ratios() const {
  return {get_double("ratio_train"), get_double("ratio_val"), get_double("ratio_test")};
}

TrainConfig RunConfig::train_config() const {
  TrainConfig tc;
  tc.objective = objective_from_name(get("objective"));
  tc.steps = static_cast<int>(get_int("steps"));
  tc.t_prime = static_cast<int>(get_int("t_prime"));
  tc.noise_scale = get_double("noise_scale");
  tc.noise_min = get_double("noise_min");
  tc.noise_max = get_double("noise_max");
  tc.lr = get_double("lr");
  tc.batch_size = static_cast<int>(get_int("batch_size"));
  tc.epochs = static_cast<int>(get_int("epochs"));
  tc.sampler = sampling_from_name(get("sampler"));
  tc.seed = seed();
  tc.hidden = get_int_list("hidden");
  tc.dropout = get_double("dropout");
  tc.patience = static_cast<int>(get_int("patience"));
  tc.eval_every = static_cast<int>(get_int("eval_every"));
  tc.t_per_row = get_bool("t_per_row");
  tc.validate();
  return tc;
}

LatentConfig RunConfig::latent_config() const {
  LatentConfig lc;
  lc.base = train_config();
  lc.categories = static_cast<int>(get_int("categories"));
  lc.latent_total = static_cast<int>(get_int("latent_total"));
  lc.lambda_diff = get_double("lambda");
  lc.gamma_max = get_double("gamma_max");
  lc.anneal_epochs = static_cast<int>(get_int("anneal_epochs"));
  lc.svd_dim = static_cast<int>(get_int("svd_dim"));
  lc.validate();
  return lc;
}

std::string RunConfig::resolved() const {
  std::ostringstream out;
  for (const auto& [k, v] : values_) out << k << '=' << v << '\n';
  return out.str();
}

}  // namespace diffrec
