#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "diffrec/cli.hpp"
#include "diffrec/errors.hpp"

using namespace diffrec;

int main(int argc, char** argv) {
  CLI::App app{"Diffusion-based generative recommender: data preparation, training, "
               "evaluation, and inference"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key=value config file");
    cmd->add_option("--set", overrides, "override a config key (key=value)")
        ->take_all();
  };

  // prepare
  std::string source, regime, out_dir;
  auto* prepare = app.add_subcommand("prepare", "build a split-bundle directory");
  prepare->add_option("source", source, "input TSV (user\\titem\\trating\\ttimestamp)")
      ->required();
  prepare->add_option("regime", regime, "clean | natural | random[(p)] | temporal")
      ->required();
  prepare->add_option("out_dir", out_dir, "bundle output directory")->required();
  add_common(prepare);

  // train
  auto* train_cmd = app.add_subcommand("train", "train the configured model");
  add_common(train_cmd);

  // eval
  std::string checkpoint, bundle_dir, eval_out, split = "test", ks_arg = "10,20";
  bool per_user = false;
  auto* eval_cmd = app.add_subcommand("eval", "full-ranking top-K evaluation");
  eval_cmd->add_option("checkpoint", checkpoint, "trained checkpoint")->required();
  eval_cmd->add_option("bundle", bundle_dir, "bundle directory")->required();
  eval_cmd->add_option("--out", eval_out, "directory for report files");
  eval_cmd->add_option("--ks", ks_arg, "cutoffs, e.g. 10,20");
  eval_cmd->add_option("--split", split, "test | val");
  eval_cmd->add_flag("--per-user", per_user, "also write per-user CSV");

  // infer
  std::string history_path;
  int top_k = 10;
  auto* infer_cmd = app.add_subcommand("infer", "top-K items for one history");
  infer_cmd->add_option("checkpoint", checkpoint, "trained checkpoint")->required();
  infer_cmd->add_option("history", history_path, "history file: item-index [weight] per line")
      ->required();
  infer_cmd->add_option("--k", top_k, "list length");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg.load_file(config_path);
    for (const auto& o : overrides) cfg.set(o);

    if (prepare->parsed()) {
      SplitBundle b = cli::cmd_prepare(source, regime, out_dir, cfg);
      std::cout << "bundle " << regime_name(b.regime) << ": " << b.user_count()
                << " users, " << b.item_count() << " items, "
                << b.train.interaction_count() << "/" << b.val.interaction_count()
                << "/" << b.test.interaction_count() << " train/val/test -> "
                << out_dir << '\n';
    } else if (train_cmd->parsed()) {
      cli::TrainOutput out = cli::cmd_train(cfg);
      std::cout << "checkpoint " << out.checkpoint_path << " (best epoch "
                << out.best_epoch << ", val recall@20 " << out.best_recall20 << ")\n";
    } else if (eval_cmd->parsed()) {
      cli::EvalArgs args;
      args.checkpoint = checkpoint;
      args.bundle_dir = bundle_dir;
      args.out_dir = eval_out;
      args.per_user_csv = per_user;
      if (split == "test")
        args.test_split = true;
      else if (split == "val")
        args.test_split = false;
      else
        throw UsageError("--split must be test or val");
      args.ks.clear();
      {
        std::string tok;
        std::istringstream ss(ks_arg);
        while (std::getline(ss, tok, ','))
          if (!tok.empty()) args.ks.push_back(std::stoi(tok));
      }
      EvalReport rep = cli::cmd_eval(args);
      for (int k : args.ks) std::printf("R@%d=%.10g ", k, rep.recall_at(k));
      for (int k : args.ks) std::printf("N@%d=%.10g ", k, rep.ndcg_at(k));
      std::printf("\n");
    } else if (infer_cmd->parsed()) {
      cli::InferArgs args;
      args.checkpoint = checkpoint;
      args.history_path = history_path;
      args.k = top_k;
      for (const auto& [item, score] : cli::cmd_infer(args))
        std::printf("%d\t%.10g\n", item, score);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return 0;
}
