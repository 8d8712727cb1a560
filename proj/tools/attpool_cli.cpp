#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "attpool/commands.hpp"
#include "attpool/errors.hpp"

int main(int argc, char** argv) {
  CLI::App app{"attention-weighted structured feature aggregation"};
  app.require_subcommand(1);

  int rc = 0;

  // synth
  std::string synth_spec, synth_out;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--spec", synth_spec, "spec file (key = value lines)")
      ->required();
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->callback([&]() { rc = attpool::cmd_synth(synth_spec, synth_out); });

  // train
  std::string train_config, train_data, train_out;
  std::string train_pooling, train_attention, train_seed, train_flip;
  auto* train = app.add_subcommand("train", "two-stage training run");
  train->add_option("--config", train_config, "training config file")
      ->required();
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--out", train_out, "checkpoint output path")->required();
  train->add_option("--pooling", train_pooling, "override pooling")
      ->check(CLI::IsMember({"vlad", "bow", "gap"}));
  train->add_option("--attention", train_attention, "override attention mode")
      ->check(CLI::IsMember({"on", "off", "uniform"}));
  train->add_option("--seed", train_seed, "override master seed");
  train->add_option("--flip-avg", train_flip, "override flip averaging")
      ->check(CLI::IsMember({"on", "off"}));
  train->callback([&]() {
    std::map<std::string, std::string> overrides;
    if (!train_pooling.empty()) overrides["pooling"] = train_pooling;
    if (!train_attention.empty()) overrides["attention"] = train_attention;
    if (!train_seed.empty()) overrides["seed"] = train_seed;
    if (!train_flip.empty()) overrides["flip_average"] = train_flip;
    rc = attpool::cmd_train(train_config, train_data, train_out, overrides);
  });

  // eval
  std::string eval_ckpt, eval_data, eval_flip = "on", eval_metrics;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_option("--flip-avg", eval_flip, "average with flipped input")
      ->check(CLI::IsMember({"on", "off"}));
  eval->add_option("--metrics-out", eval_metrics,
                   "also write metrics-log lines to this file");
  eval->callback([&]() {
    rc = attpool::cmd_eval(eval_ckpt, eval_data, eval_flip, eval_metrics);
  });

  // gradcheck
  std::string gc_module = "all";
  double gc_tol = 1e-6;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  gc->add_option("--module", gc_module, "battery to run")
      ->check(CLI::IsMember({"all", "numerics", "aggregation", "attention",
                             "model"}));
  gc->add_option("--tol", gc_tol, "relative error tolerance");
  gc->callback([&]() { rc = attpool::cmd_gradcheck(gc_module, gc_tol); });

  // export-attention
  std::string exp_ckpt, exp_data, exp_out;
  bool exp_per_class = false;
  auto* exp = app.add_subcommand("export-attention",
                                 "write attention heatmaps as PGM");
  exp->add_option("--ckpt", exp_ckpt, "checkpoint path")->required();
  exp->add_option("--data", exp_data, "dataset directory")->required();
  exp->add_option("--out", exp_out, "output directory")->required();
  exp->add_flag("--per-class", exp_per_class, "also write per-class maps");
  exp->callback([&]() {
    rc = attpool::cmd_export_attention(exp_ckpt, exp_data, exp_out,
                                       exp_per_class);
  });

  // ablate
  std::string abl_config, abl_data, abl_lambdas;
  auto* abl = app.add_subcommand("ablate", "accuracy vs attention loss weight");
  abl->add_option("--config", abl_config, "training config file")->required();
  abl->add_option("--data", abl_data, "dataset directory")->required();
  abl->add_option("--lambdas", abl_lambdas, "comma-separated weights")
      ->required();
  abl->callback(
      [&]() { rc = attpool::cmd_ablate(abl_config, abl_data, abl_lambdas); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const attpool::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const attpool::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const attpool::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return rc;
}
