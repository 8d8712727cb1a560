#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "attpool/model.hpp"

namespace fs = std::filesystem;

namespace attpool {

namespace {

void fill_normal(Tensor<float>& t, Rng& rng, double stddev) {
  for (std::size_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<float>(rng.normal(0.0, stddev));
}

std::size_t argmax_first(const Tensor<float>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.numel(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

Tensor<float> load_sample(const Dataset& ds, std::size_t i) {
  return read_feature_map((fs::path(ds.root) / ds.samples[i].path).string());
}

void check_sample_shape(const Dataset& ds, const Tensor<float>& x,
                        std::size_t i) {
  const std::size_t want = ds.variant == "image" ? 3 : ds.dim;
  if (x.rank() != 3 || x.extent(2) != want)
    throw DataError("sample " + ds.samples[i].path + " has shape " +
                    x.shape_string() + ", expected depth " +
                    std::to_string(want));
}

std::string format_metrics_line(std::size_t epoch, int stage, const char* split,
                                double loss_cls, double loss_att,
                                double loss_total, double acc) {
  char buf[192];
  std::snprintf(buf, sizeof(buf), "%zu,%d,%s,%.6f,%.6f,%.6f,%.6f",
                epoch, stage, split, loss_cls, loss_att, loss_total, acc);
  return buf;
}

}  // namespace

ModelState<float> init_model(const TrainConfig& cfg, InputKind input,
                             std::size_t classes, std::size_t data_dim,
                             Rng& rng) {
  if (classes < 2) throw ValueError("init_model: need >= 2 classes");
  ModelState<float> s;
  s.input = input;
  s.pooling = cfg.pooling;
  s.attention = cfg.attention;
  s.classes = classes;
  s.lambda = static_cast<float>(cfg.lambda);

  if (input == InputKind::image) {
    s.backbone_width = cfg.backbone_width;
    s.feature_dim = cfg.feature_dim;
    s.conv1_w = Tensor<float>({3, 3, 3, s.backbone_width});
    s.conv1_b = Tensor<float>({s.backbone_width});
    s.conv2_w = Tensor<float>({3, 3, s.backbone_width, s.feature_dim});
    s.conv2_b = Tensor<float>({s.feature_dim});
    fill_normal(s.conv1_w, rng, std::sqrt(2.0 / (9.0 * 3.0)));
    fill_normal(s.conv2_w, rng, std::sqrt(2.0 / (9.0 * s.backbone_width)));
  } else {
    s.backbone_width = 0;
    s.feature_dim = data_dim;
  }

  const std::size_t d = s.feature_dim;
  s.att.w_ca = Tensor<float>({d, 1});
  s.att.b_ca = Tensor<float>({1});
  s.att.w_cs = Tensor<float>({d, classes});
  s.att.b_cs = Tensor<float>({classes});
  fill_normal(s.att.w_ca, rng, 0.01);
  fill_normal(s.att.w_cs, rng, 0.01);
  s.cb.alpha = static_cast<float>(cfg.alpha);
  return s;
}

TrainResult train(const Dataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  const InputKind input =
      ds.variant == "image" ? InputKind::image : InputKind::featuremap;
  const auto train_idx = ds.split_indices("train");
  if (train_idx.empty()) throw DataError("train: dataset has no train split");

  std::vector<Tensor<float>> inputs(ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    inputs[i] = load_sample(ds, i);
    check_sample_shape(ds, inputs[i], i);
  }

  Rng init_rng = Rng::substream(cfg.seed, "init");
  Rng shuffle_rng = Rng::substream(cfg.seed, "shuffle");
  ModelState<float> state = init_model(
      cfg, input, ds.classes, input == InputKind::image ? 3 : ds.dim, init_rng);

  std::ostringstream log;
  log << metrics_header() << "\n";

  // Stage 1: attention branch (and backbone) on the attention loss alone.
  init_optimizer(state);
  for (std::size_t epoch = 1; epoch <= cfg.stage1_epochs; ++epoch) {
    std::vector<std::size_t> order = train_idx;
    shuffle_rng.shuffle(order.begin(), order.end());
    double sum_loss = 0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t bs = std::min(cfg.batch_size, order.size() - start);
      JointGradients<float> acc = zero_gradients(state, inputs[order[start]]);
      const float inv = 1.0f / static_cast<float>(bs);
      double batch_loss = 0;
      for (std::size_t b = 0; b < bs; ++b) {
        const std::size_t i = order[start + b];
        JointCache<float> cache = forward_attention(state, inputs[i]);
        const double loss = cross_entropy(cache.att_logits, ds.samples[i].label);
        batch_loss += loss;
        sum_loss += loss;
        correct += argmax_first(cache.att_logits) == ds.samples[i].label;
        JointGradients<float> g =
            backward_attention(state, cache, ds.samples[i].label);
        accumulate_scaled(acc, g, inv);
      }
      if (!std::isfinite(batch_loss))
        throw ValueError("train: non-finite loss in stage 1 epoch " +
                         std::to_string(epoch));
      std::vector<double> lrs(acc.params.size(), cfg.stage1_lr);
      adam_step(state, acc.params, lrs, cfg);
    }
    const double n = static_cast<double>(order.size());
    log << format_metrics_line(epoch, 1, "train", 0.0, sum_loss / n,
                               sum_loss / n, correct / n)
        << "\n";
  }

  // Stage 2 initialization: k-means codebook over stage-1 features,
  // fresh classifier, fresh optimizer moments for the enlarged model.
  const std::size_t d = state.feature_dim;
  std::size_t k = 0;
  if (state.pooling != PoolKind::gap) {
    std::vector<double> rows;
    for (std::size_t i : train_idx) {
      JointCache<float> scratch;
      Tensor<float> x = backbone_features(state, inputs[i], scratch);
      const auto [n, dd] = descriptor_rows(x);
      for (std::size_t t = 0; t < n * dd; ++t)
        rows.push_back(static_cast<double>(x[t]));
    }
    std::size_t n_rows = rows.size() / d;
    if (n_rows > cfg.kmeans_max_descriptors) {
      Rng sub_rng = Rng::substream(cfg.seed, "kmeans-subsample");
      auto keep =
          sub_rng.sample_without_replacement(n_rows, cfg.kmeans_max_descriptors);
      std::sort(keep.begin(), keep.end());
      std::vector<double> reduced;
      reduced.reserve(keep.size() * d);
      for (std::size_t r : keep)
        for (std::size_t j = 0; j < d; ++j) reduced.push_back(rows[r * d + j]);
      rows = std::move(reduced);
      n_rows = keep.size();
    }
    Tensor<double> desc({n_rows, d}, std::move(rows));
    k = cfg.codewords_for();
    Tensor<double> centers = kmeans_fit(desc, k, cfg.seed);
    state.cb = codebook_cast<float>(init_decoupled(centers, cfg.alpha));
  }
  const std::size_t pooled_len = state.pooling == PoolKind::vlad ? d * k
                                 : state.pooling == PoolKind::bow ? k
                                                                  : d;
  state.cls_w = Tensor<float>({pooled_len, ds.classes});
  state.cls_b = Tensor<float>({ds.classes});
  fill_normal(state.cls_w, init_rng, 0.01);
  init_optimizer(state);

  // Stage 2: end-to-end joint training with per-group learning rates.
  for (std::size_t epoch = 1; epoch <= cfg.stage2_epochs; ++epoch) {
    const double scale =
        std::pow(cfg.lr_decay,
                 static_cast<double>((epoch - 1) / cfg.lr_decay_every));
    std::vector<std::size_t> order = train_idx;
    shuffle_rng.shuffle(order.begin(), order.end());
    double sum_cls = 0, sum_att = 0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t bs = std::min(cfg.batch_size, order.size() - start);
      JointGradients<float> acc = zero_gradients(state, inputs[order[start]]);
      const float inv = 1.0f / static_cast<float>(bs);
      double batch_loss = 0;
      for (std::size_t b = 0; b < bs; ++b) {
        const std::size_t i = order[start + b];
        JointCache<float> cache = forward_joint(state, inputs[i]);
        const LossParts parts = joint_loss(cache.cls_logits, cache.att_logits,
                                           ds.samples[i].label, cfg.lambda);
        batch_loss += parts.total;
        sum_cls += parts.cls;
        sum_att += parts.att;
        correct += argmax_first(cache.cls_logits) == ds.samples[i].label;
        JointGradients<float> g =
            backward_joint(state, cache, ds.samples[i].label, cfg.lambda);
        accumulate_scaled(acc, g, inv);
      }
      if (!std::isfinite(batch_loss))
        throw ValueError("train: non-finite loss in stage 2 epoch " +
                         std::to_string(epoch));
      auto refs = param_refs(state);
      std::vector<double> lrs(refs.size());
      for (std::size_t i = 0; i < refs.size(); ++i)
        lrs[i] = (refs[i].name.rfind("classifier.", 0) == 0
                      ? cfg.stage2_lr_classifier
                      : cfg.stage2_lr_shared) *
                 scale;
      adam_step(state, acc.params, lrs, cfg);
    }
    const double n = static_cast<double>(order.size());
    log << format_metrics_line(epoch, 2, "train", sum_cls / n, sum_att / n,
                               sum_cls / n + cfg.lambda * sum_att / n,
                               correct / n)
        << "\n";
  }

  TrainResult result;
  result.final_test = evaluate(state, ds, "test", cfg.flip_average);
  log << format_metrics_line(cfg.stage2_epochs, 2, "test",
                             result.final_test.loss_cls,
                             result.final_test.loss_att,
                             result.final_test.loss_cls +
                                 cfg.lambda * result.final_test.loss_att,
                             result.final_test.accuracy)
      << "\n";
  result.state = std::move(state);
  result.metrics_log = log.str();
  return result;
}

EvalResult evaluate(const ModelState<float>& state, const Dataset& ds,
                    const std::string& split, bool flip_average) {
  const auto idx = ds.split_indices(split);
  if (idx.empty()) throw DataError("evaluate: split '" + split + "' is empty");
  const std::size_t c = state.classes;

  EvalResult res;
  res.confusion = Tensor<double>({c, c});
  std::vector<std::size_t> count(c, 0), correct(c, 0);
  double sum_cls = 0, sum_att = 0;

  for (std::size_t i : idx) {
    Tensor<float> x = load_sample(ds, i);
    check_sample_shape(ds, x, i);
    const std::size_t label = ds.samples[i].label;

    JointCache<float> cache = forward_joint(state, x);
    Tensor<float> probs = softmax(cache.cls_logits);
    if (flip_average) {
      JointCache<float> flipped = forward_joint(state, flip_width(x));
      Tensor<float> probs2 = softmax(flipped.cls_logits);
      for (std::size_t j = 0; j < probs.numel(); ++j)
        probs[j] = 0.5f * (probs[j] + probs2[j]);
    }
    const std::size_t pred = argmax_first(probs);
    res.confusion(label, pred) += 1.0;
    ++count[label];
    if (pred == label) ++correct[label];
    sum_cls += -std::log(std::max(static_cast<double>(probs[label]), 1e-300));
    sum_att += cross_entropy(cache.att_logits, label);
  }

  const double total = static_cast<double>(idx.size());
  std::size_t hits = 0;
  for (std::size_t l = 0; l < c; ++l) hits += correct[l];
  res.accuracy = hits / total;
  res.per_class.resize(c, 0.0);
  double class_sum = 0;
  std::size_t classes_seen = 0;
  for (std::size_t l = 0; l < c; ++l) {
    if (count[l]) {
      res.per_class[l] =
          static_cast<double>(correct[l]) / static_cast<double>(count[l]);
      class_sum += res.per_class[l];
      ++classes_seen;
    }
  }
  res.mean_class_accuracy = classes_seen ? class_sum / classes_seen : 0.0;
  res.loss_cls = sum_cls / total;
  res.loss_att = sum_att / total;
  return res;
}

}  // namespace attpool
