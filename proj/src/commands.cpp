#include "attpool/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <vector>

#include "attpool/attention.hpp"
#include "attpool/config.hpp"
#include "attpool/gradcheck.hpp"
#include "attpool/model.hpp"

namespace fs = std::filesystem;

namespace attpool {

namespace {

TrainConfig config_with_overrides(
    const std::string& config_path,
    const std::map<std::string, std::string>& overrides) {
  ConfigMap kv;
  if (!config_path.empty()) kv = parse_config_file(config_path);
  TrainConfig cfg = make_train_config(kv);
  for (const auto& [key, value] : overrides) {
    if (key == "pooling")
      cfg.pooling = parse_pooling(value);
    else if (key == "attention")
      cfg.attention = parse_attention(value);
    else if (key == "seed")
      cfg.seed = make_train_config({{"seed", {value, 0}}}).seed;
    else if (key == "flip_average")
      cfg.flip_average = parse_on_off(value);
    else
      throw ConfigError("unknown override '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path + " for writing");
  f << text;
  if (!f) throw DataError("write failed for " + path);
}

std::string eval_metrics_text(const EvalResult& ev, double lambda) {
  char line[192];
  std::snprintf(line, sizeof(line), "0,0,test,%.6f,%.6f,%.6f,%.6f",
                ev.loss_cls, ev.loss_att, ev.loss_cls + lambda * ev.loss_att,
                ev.accuracy);
  return std::string(metrics_header()) + "\n" + line + "\n";
}

}  // namespace

int cmd_synth(const std::string& spec_path, const std::string& out_dir) {
  const ConfigMap kv = parse_config_file(spec_path);
  const SyntheticSpec spec = make_synth_spec(kv);
  const SynthStats stats = synth_generate(spec, out_dir);
  const std::size_t total =
      spec.classes * (spec.train_per_class + spec.test_per_class);
  std::cout << "generated " << total << " samples in " << out_dir << "\n"
            << "mean_gap_cosine=" << stats.mean_gap_cosine << "\n"
            << "mean_signal_cosine=" << stats.mean_signal_cosine << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_path,
              const std::map<std::string, std::string>& overrides) {
  const TrainConfig cfg = config_with_overrides(config_path, overrides);
  const Dataset ds = load_dataset(data_dir);
  TrainResult result = train(ds, cfg);
  save_checkpoint(result.state, out_path);
  write_text(out_path + ".metrics", result.metrics_log);
  std::cout << "checkpoint: " << out_path << "\n"
            << "metrics: " << out_path << ".metrics\n";
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "test accuracy %.4f (mean per class %.4f)\n",
                result.final_test.accuracy,
                result.final_test.mean_class_accuracy);
  std::cout << buf;
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& flip, const std::string& metrics_out) {
  const ModelState<float> state = load_checkpoint(ckpt_path);
  const Dataset ds = load_dataset(data_dir);
  const bool flip_avg = flip.empty() ? true : parse_on_off(flip);
  const EvalResult ev = evaluate(state, ds, "test", flip_avg);

  char buf[192];
  std::snprintf(buf, sizeof(buf),
                "accuracy %.4f\nmean class accuracy %.4f\nloss_cls %.6f\n"
                "loss_att %.6f\n",
                ev.accuracy, ev.mean_class_accuracy, ev.loss_cls, ev.loss_att);
  std::cout << buf;
  const std::string text =
      eval_metrics_text(ev, static_cast<double>(state.lambda));
  std::cout << text;
  if (!metrics_out.empty()) write_text(metrics_out, text);
  return 0;
}

int cmd_gradcheck(const std::string& module, double tol) {
  std::vector<std::string> modules;
  if (module == "all")
    modules = {"numerics", "aggregation", "attention", "model"};
  else if (module == "numerics" || module == "aggregation" ||
           module == "attention" || module == "model")
    modules = {module};
  else
    throw ConfigError("unknown gradcheck module '" + module + "'");

  bool all_passed = true;
  for (const auto& m : modules) {
    for (const auto& c : gradcheck_suite(m)) {
      const GradCheckReport rep = c.run(tol);
      std::printf("%-11s %-28s %s  max_rel_err=%.3e  probes=%zu\n", m.c_str(),
                  c.name.c_str(), rep.passed ? "pass" : "FAIL",
                  rep.max_rel_err, rep.probes);
      if (!rep.passed) {
        all_passed = false;
        std::printf("  %s\n", rep.to_string().c_str());
      }
    }
  }
  std::printf("gradcheck %s at tol %.1e\n", all_passed ? "passed" : "FAILED",
              tol);
  return all_passed ? 0 : 4;
}

int cmd_export_attention(const std::string& ckpt_path,
                         const std::string& data_dir,
                         const std::string& out_dir, bool per_class) {
  const ModelState<float> state = load_checkpoint(ckpt_path);
  const Dataset ds = load_dataset(data_dir);
  fs::create_directories(out_dir);

  const auto idx = ds.split_indices("test");
  if (idx.empty()) throw DataError("export_attention: test split is empty");
  double quality_sum = 0, uniform_sum = 0;
  std::size_t quality_count = 0;
  for (std::size_t i : idx) {
    const std::string in_path = (fs::path(ds.root) / ds.samples[i].path).string();
    Tensor<float> x = read_feature_map(in_path);
    JointCache<float> scratch;
    Tensor<float> features = backbone_features(state, x, scratch);
    AttentionMaps<float> maps = attention_forward(features, state.att);
    maps.weights = attention_weights(maps);

    const std::size_t w = maps.h.extent(0), h = maps.h.extent(1),
                      c = maps.h.extent(2);
    Tensor<float> combined({w, h});
    for (std::size_t a = 0; a < w; ++a)
      for (std::size_t b = 0; b < h; ++b) {
        float m = maps.h(a, b, 0);
        for (std::size_t l = 1; l < c; ++l) m = std::max(m, maps.h(a, b, l));
        combined(a, b) = m;
      }
    const std::string stem = fs::path(ds.samples[i].path).stem().string();
    write_pgm((fs::path(out_dir) / (stem + "_att.pgm")).string(), combined);
    if (per_class)
      for (std::size_t l = 0; l < c; ++l) {
        Tensor<float> one({w, h});
        for (std::size_t a = 0; a < w; ++a)
          for (std::size_t b = 0; b < h; ++b) one(a, b) = maps.h(a, b, l);
        write_pgm(
            (fs::path(out_dir) / (stem + "_att_" + std::to_string(l) + ".pgm"))
                .string(),
            one);
      }

    const std::string mask_path = mask_path_for(in_path);
    if (fs::exists(mask_path)) {
      Tensor<float> mask = read_feature_map(mask_path);
      quality_sum += attention_quality(maps.weights, mask);
      double signal_cells = 0;
      for (std::size_t t = 0; t < mask.numel(); ++t)
        signal_cells += mask[t] > 0.5f ? 1.0 : 0.0;
      uniform_sum += signal_cells / static_cast<double>(mask.numel());
      ++quality_count;
    }
  }
  std::cout << "exported " << idx.size() << " heatmaps to " << out_dir << "\n";
  if (quality_count) {
    const double q = quality_sum / static_cast<double>(quality_count);
    const double u = uniform_sum / static_cast<double>(quality_count);
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "mean_attention_quality=%.6f\nuniform_baseline=%.6f\n"
                  "ratio=%.3f\n",
                  q, u, u > 0 ? q / u : 0.0);
    std::cout << buf;
  }
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& data_dir,
               const std::string& lambdas_csv) {
  TrainConfig cfg = config_with_overrides(config_path, {});
  const Dataset ds = load_dataset(data_dir);

  std::vector<double> lambdas;
  std::stringstream ss(lambdas_csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const double v = std::stod(item, &used);
      if (used != item.size() || v < 0) throw std::invalid_argument(item);
      lambdas.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError("bad lambda value '" + item + "'");
    }
  }
  if (lambdas.empty()) throw ConfigError("empty lambda list");

  std::cout << "lambda," << metrics_header() << "\n";
  for (const double lambda : lambdas) {
    cfg.lambda = lambda;
    TrainResult result = train(ds, cfg);
    const EvalResult& ev = result.final_test;
    char buf[224];
    std::snprintf(buf, sizeof(buf), "%g,%zu,2,test,%.6f,%.6f,%.6f,%.6f\n",
                  lambda, cfg.stage2_epochs, ev.loss_cls, ev.loss_att,
                  ev.loss_cls + lambda * ev.loss_att, ev.accuracy);
    std::cout << buf;
  }
  return 0;
}

}  // namespace attpool
