#include "diffrec/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "diffrec/checkpoint.hpp"
#include "diffrec/errors.hpp"
#include "diffrec/temporal.hpp"

namespace diffrec::cli {

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out << text;
  if (!out) throw DataError("write failed: " + path);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::vector<int> parse_int_csv(const std::string& s) {
  std::vector<int> out;
  std::istringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(std::stoi(tok));
  return out;
}

std::string join_int_csv(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

bool known_model(const std::string& m) {
  return m == "diffrec" || m == "l-diffrec" || m == "t-diffrec" || m == "lt-diffrec";
}

}  // namespace

SplitBundle cmd_prepare(const std::string& source, const std::string& regime_arg,
                        const std::string& out_dir, const RunConfig& cfg) {
  std::string name = regime_arg;
  double noise_p = cfg.get_double("noise_p");
  auto paren = regime_arg.find('(');
  if (paren != std::string::npos) {
    if (regime_arg.back() != ')')
      throw ConfigError("bad regime syntax: " + regime_arg);
    name = regime_arg.substr(0, paren);
    noise_p = std::stod(regime_arg.substr(paren + 1,
                                          regime_arg.size() - paren - 2));
  }
  Regime regime = regime_from_name(name);

  Dataset ds = ingest(source);
  for (const auto& w : ds.warnings) std::cerr << "warning: " << w << '\n';

  SplitBundle bundle;
  switch (regime) {
    case Regime::kClean:
      bundle = split_clean(ds, cfg.ratios(), cfg.seed());
      break;
    case Regime::kNaturalNoise:
      bundle = split_natural_noise(ds, cfg.ratios(), cfg.seed());
      break;
    case Regime::kRandomNoise:
      bundle = inject_random_noise(split_clean(ds, cfg.ratios(), cfg.seed()),
                                   noise_p, cfg.seed());
      break;
    case Regime::kTemporal:
      bundle = split_temporal(ds, cfg.ratios(), cfg.seed());
      break;
  }
  save_bundle(bundle, out_dir);
  write_text(out_dir + "/config.resolved", cfg.resolved());
  return bundle;
}

TrainOutput cmd_train(const RunConfig& cfg) {
  const std::string model = cfg.get("model");
  if (!known_model(model)) throw ConfigError("unknown model: " + model);
  if (cfg.get("data_dir").empty()) throw ConfigError("data_dir is required");
  if (cfg.get("out_dir").empty()) throw ConfigError("out_dir is required");

  SplitBundle bundle = load_bundle(cfg.get("data_dir"));
  bool temporal_model = model == "t-diffrec" || model == "lt-diffrec";
  if (temporal_model && bundle.regime != Regime::kTemporal)
    throw ConfigError("model=" + model + " needs a temporal-regime bundle, but '" +
                      cfg.get("data_dir") + "' is regime=" +
                      regime_name(bundle.regime));

  InteractionMatrix train_matrix =
      temporal_model
          ? apply_temporal(bundle.train, cfg.get_double("w_min"), cfg.get_double("w_max"))
          : bundle.train;

  if (cfg.get_int("epochs") == 0)
    std::cerr << "warning: epochs=0, checkpoint will hold the initial parameters\n";

  Checkpoint resume_ck;
  const ParamStore* resume = nullptr;
  if (!cfg.get("resume").empty()) {
    resume_ck = load_checkpoint(cfg.get("resume"));
    resume = &resume_ck.store;
  }

  std::string out_dir = cfg.get("out_dir");
  std::filesystem::create_directories(out_dir);

  std::map<std::string, std::string> meta = cfg.values();
  meta["item_count"] = std::to_string(bundle.item_count());
  TrainOutput out;
  out.checkpoint_path = out_dir + "/checkpoint.drt";
  out.log_path = out_dir + "/train_log.txt";
  out.config_path = out_dir + "/config.resolved";

  std::ostringstream log;
  if (model == "diffrec" || model == "t-diffrec") {
    TrainResult res = train(train_matrix, bundle, cfg.train_config(), resume);
    for (const auto& l : res.log_lines) log << l << '\n';
    meta["best_epoch"] = std::to_string(res.best_epoch);
    meta["best_val_recall@20"] = fmt(std::max(0.0, res.best_recall20));
    meta["best_val_ndcg@20"] = fmt(res.best_ndcg20);
    meta["epochs_run"] = std::to_string(res.epochs_run);
    save_checkpoint(out.checkpoint_path, res.store, meta);
    out.best_epoch = res.best_epoch;
    out.best_recall20 = res.best_recall20;
    out.best_ndcg20 = res.best_ndcg20;
    out.epochs_run = res.epochs_run;
  } else {
    LatentTrainResult res = train_latent(train_matrix, bundle, cfg.latent_config(), resume);
    for (const auto& l : res.log_lines) log << l << '\n';
    meta["best_epoch"] = std::to_string(res.best_epoch);
    meta["best_val_recall@20"] = fmt(std::max(0.0, res.best_recall20));
    meta["best_val_ndcg@20"] = fmt(res.best_ndcg20);
    meta["epochs_run"] = std::to_string(res.epochs_run);
    meta["latent_dims"] = join_int_csv(res.model.cm.latent_dims);
    meta["vae_hidden"] = std::to_string(res.model.vae.enc_specs[0].dims[1]);
    meta["cluster_assignment"] = join_int_csv(res.model.cm.assignment);
    save_checkpoint(out.checkpoint_path, res.store, meta);
    save_cluster_assignment(res.model.cm, out_dir + "/clusters.tsv");
    out.best_epoch = res.best_epoch;
    out.best_recall20 = res.best_recall20;
    out.best_ndcg20 = res.best_ndcg20;
    out.epochs_run = res.epochs_run;
  }
  write_text(out.log_path, log.str());
  write_text(out.config_path, cfg.resolved());
  return out;
}

LoadedModel load_model(const std::string& checkpoint_path) {
  Checkpoint ck = load_checkpoint(checkpoint_path);
  LoadedModel m;
  m.meta = ck.meta;
  auto need = [&](const std::string& key) -> const std::string& {
    auto it = m.meta.find(key);
    if (it == m.meta.end())
      throw DataError("checkpoint missing metadata key: " + key);
    return it->second;
  };
  m.model = need("model");
  if (!known_model(m.model)) throw DataError("checkpoint has unknown model: " + m.model);
  m.item_count = std::stoi(need("item_count"));
  m.t_prime = std::stoi(need("t_prime"));
  m.seed = std::stoull(need("seed"));
  m.w_min = std::stod(need("w_min"));
  m.w_max = std::stod(need("w_max"));
  m.sched = build_schedule(std::stod(need("noise_scale")), std::stod(need("noise_min")),
                           std::stod(need("noise_max")), std::stoi(need("steps")));
  Objective objective = objective_from_name(need("objective"));
  std::vector<int> hidden = parse_int_csv(need("hidden"));
  double dropout = std::stod(need("dropout"));

  if (m.is_latent()) {
    std::vector<int> assignment = parse_int_csv(need("cluster_assignment"));
    std::vector<int> latent_dims = parse_int_csv(need("latent_dims"));
    if (static_cast<int>(assignment.size()) != m.item_count)
      throw DataError("checkpoint cluster assignment covers " +
                      std::to_string(assignment.size()) + " items, expected " +
                      std::to_string(m.item_count));
    ClusterModel cm;
    cm.categories = static_cast<int>(latent_dims.size());
    cm.assignment = assignment;
    cm.items.assign(cm.categories, {});
    for (std::size_t i = 0; i < assignment.size(); ++i)
      cm.items[assignment[i]].push_back(static_cast<int>(i));
    cm.latent_dims = latent_dims;
    cm.latent_offsets.assign(cm.categories, 0);
    for (int c = 1; c < cm.categories; ++c)
      cm.latent_offsets[c] = cm.latent_offsets[c - 1] + latent_dims[c - 1];
    cm.validate();
    m.latent.cm = cm;
    m.latent.vae = VaeStack::describe(cm, std::stoi(need("vae_hidden")),
                                      std::stod(need("gamma_max")), 0);
    m.latent.den = DenoiserNet::describe(cm.latent_total(), hidden, objective, 0.0);
    m.latent.sched = m.sched;
  } else {
    m.den = DenoiserNet::describe(m.item_count, hidden, objective, dropout);
  }
  m.store = std::move(ck.store);
  if (!m.store.has((m.is_latent() ? std::string("den/") : m.den.prefix) + "w0"))
    throw DataError("checkpoint is missing denoiser tensors");
  return m;
}

DenseMatrix LoadedModel::score(const DenseMatrix& histories) const {
  if (histories.cols != item_count)
    throw ConfigError("history vectors have " + std::to_string(histories.cols) +
                      " items but the checkpoint was trained on " +
                      std::to_string(item_count));
  Rng rng(seed ^ 0x1f2e3d4c5b6a7988ULL);  // only consumed when t_prime > 0
  if (is_latent())
    return infer_latent(store, latent, histories, t_prime, &rng);
  return infer(make_scorer(store, den, sched), sched, histories, t_prime, &rng);
}

EvalReport cmd_eval(const EvalArgs& args) {
  LoadedModel model = load_model(args.checkpoint);
  SplitBundle bundle = load_bundle(args.bundle_dir);
  if (bundle.item_count() != model.item_count)
    throw ConfigError("bundle has " + std::to_string(bundle.item_count()) +
                      " items but the checkpoint was trained on " +
                      std::to_string(model.item_count));
  if (args.ks.empty()) throw UsageError("eval: need at least one cutoff K");

  InteractionMatrix conditioning =
      args.test_split ? union_of(bundle.train, bundle.val) : bundle.train;
  if (model.is_temporal())
    conditioning = apply_temporal(conditioning, model.w_min, model.w_max);

  DenseMatrix histories(bundle.user_count(), bundle.item_count());
  for (int u = 0; u < bundle.user_count(); ++u)
    conditioning.fill_dense_row(u, histories.row_ptr(u));
  DenseMatrix scores = model.score(histories);

  EvalReport rep = evaluate(scores, bundle, args.ks,
                            args.test_split ? EvalSplit::kTest : EvalSplit::kValidation);
  if (!args.out_dir.empty()) {
    std::filesystem::create_directories(args.out_dir);
    write_text(args.out_dir + "/report.txt", rep.to_text());
    if (args.per_user_csv)
      write_text(args.out_dir + "/per_user.csv", rep.per_user_csv());
  }
  return rep;
}

std::vector<std::pair<int, double>> cmd_infer(const InferArgs& args) {
  if (args.k < 1) throw UsageError("infer: K must be >= 1");
  LoadedModel model = load_model(args.checkpoint);

  std::ifstream in(args.history_path);
  if (!in) throw DataError("cannot read history file: " + args.history_path);
  std::vector<int> seq;
  std::vector<double> given_weight;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    int item;
    if (!(ss >> item))
      throw DataError("history line " + std::to_string(line_no) + ": expected an item index");
    if (item < 0 || item >= model.item_count)
      throw DataError("history line " + std::to_string(line_no) + ": item " +
                      std::to_string(item) + " outside vocabulary of " +
                      std::to_string(model.item_count));
    double w = 1.0;
    ss >> w;
    if (std::find(seq.begin(), seq.end(), item) != seq.end())
      throw DataError("history line " + std::to_string(line_no) + ": duplicate item " +
                      std::to_string(item));
    seq.push_back(item);
    given_weight.push_back(w);
  }

  DenseMatrix x0(1, model.item_count);
  if (model.is_temporal() && !seq.empty()) {
    WeightedHistory wh = reweight(seq, model.item_count, model.w_min, model.w_max);
    for (int i : seq) x0.at(0, i) = wh.weights[i];
  } else {
    for (std::size_t i = 0; i < seq.size(); ++i) x0.at(0, seq[i]) = given_weight[i];
  }

  DenseMatrix scores = model.score(x0);
  std::vector<std::uint8_t> mask(model.item_count, 0);
  for (int i : seq) mask[i] = 1;
  std::vector<double> row(scores.data.begin(), scores.data.end());
  bool truncated = false;
  std::vector<int> topk = rank_items(row, mask, args.k, &truncated);
  if (truncated)
    std::cerr << "warning: only " << topk.size() << " unmasked items available for K="
              << args.k << '\n';
  std::vector<std::pair<int, double>> out;
  for (int i : topk) out.emplace_back(i, scores.at(0, i));
  return out;
}

}  // namespace diffrec::cli
