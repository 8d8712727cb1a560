#ifndef ATTPOOL_MODEL_HPP
#define ATTPOOL_MODEL_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "attpool/aggregation.hpp"
#include "attpool/attention.hpp"
#include "attpool/codebook.hpp"
#include "attpool/data.hpp"
#include "attpool/ops.hpp"
#include "attpool/rng.hpp"
#include "attpool/tensor.hpp"

namespace attpool {

// "uniform" forces w_i = 1/N in the aggregation (a diagnostic mode: with
// attention on it must reproduce the attention-off pipeline after
// normalization).
enum class AttentionMode { off, on, uniform };
enum class InputKind { featuremap, image };

struct TrainConfig {
  PoolKind pooling = PoolKind::vlad;
  AttentionMode attention = AttentionMode::on;
  double lambda = 0.4;
  double alpha = 100.0;
  std::size_t codewords = 0;        // 0 = pooling default (64 vlad, 4096 bow)
  std::size_t feature_dim = 32;     // backbone output channels (image mode)
  std::size_t backbone_width = 16;  // first conv output channels
  std::size_t batch_size = 16;
  double weight_decay = 5e-4;
  double adam_eps = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  std::size_t stage1_epochs = 20;
  double stage1_lr = 1e-4;
  std::size_t stage2_epochs = 30;
  double stage2_lr_classifier = 1e-2;
  double stage2_lr_shared = 1e-4;
  double lr_decay = 0.1;
  std::size_t lr_decay_every = 15;
  std::uint64_t seed = 1;
  bool flip_average = true;
  std::size_t kmeans_max_descriptors = 100000;

  std::size_t codewords_for() const {
    if (codewords) return codewords;
    return pooling == PoolKind::bow ? 4096 : 64;
  }

  void validate() const {
    if (lambda < 0) throw ValueError("config: lambda must be >= 0");
    if (alpha <= 0) throw ValueError("config: alpha must be > 0");
    if (batch_size < 1) throw ValueError("config: batch_size must be >= 1");
    if (stage1_lr <= 0 || stage2_lr_classifier <= 0 || stage2_lr_shared <= 0)
      throw ValueError("config: learning rates must be > 0");
    if (adam_eps <= 0) throw ValueError("config: adam_eps must be > 0");
    if (lr_decay <= 0 || lr_decay > 1)
      throw ValueError("config: lr_decay must be in (0,1]");
    if (lr_decay_every < 1) throw ValueError("config: lr_decay_every must be >= 1");
  }
};

// Whole-network state. In featuremap (ingestion) mode the backbone tensors
// stay empty; before stage 2 the codebook and classifier stay empty. The
// trainable-parameter list therefore grows at stage-2 initialization, and
// the Adam moments are re-created to match.
template <class T>
struct ModelState {
  InputKind input = InputKind::image;
  PoolKind pooling = PoolKind::vlad;
  AttentionMode attention = AttentionMode::on;
  std::size_t classes = 0;
  std::size_t feature_dim = 0;
  std::size_t backbone_width = 0;
  T lambda = T(0.4);

  Tensor<T> conv1_w, conv1_b;  // [3,3,3,width], [width]
  Tensor<T> conv2_w, conv2_b;  // [3,3,width,D], [D]
  AttentionParams<T> att;
  Codebook<T> cb;
  Tensor<T> cls_w, cls_b;  // [P,C], [C]

  std::vector<Tensor<T>> adam_m, adam_v;
  std::uint64_t adam_t = 0;  // steps since the moments were (re)created
  std::uint64_t step = 0;    // cumulative optimizer steps
};

template <class T>
struct ParamRef {
  std::string name;
  Tensor<T>* tensor;
  bool decay;  // weight matrices and codebook s/centers decay; biases and h do not
};

// Trainable parameters in a frozen order; empty tensors (backbone in
// ingestion mode, heads before stage 2) are skipped.
template <class T>
std::vector<ParamRef<T>> param_refs(ModelState<T>& s) {
  std::vector<ParamRef<T>> out;
  auto add = [&](const char* name, Tensor<T>& t, bool decay) {
    if (!t.empty()) out.push_back({name, &t, decay});
  };
  add("conv1.weight", s.conv1_w, true);
  add("conv1.bias", s.conv1_b, false);
  add("conv2.weight", s.conv2_w, true);
  add("conv2.bias", s.conv2_b, false);
  add("att.ca.weight", s.att.w_ca, true);
  add("att.ca.bias", s.att.b_ca, false);
  add("att.cs.weight", s.att.w_cs, true);
  add("att.cs.bias", s.att.b_cs, false);
  add("codebook.centers", s.cb.centers, true);
  add("codebook.s", s.cb.s, true);
  add("codebook.h", s.cb.h, false);
  add("classifier.weight", s.cls_w, true);
  add("classifier.bias", s.cls_b, false);
  return out;
}

// Everything backward passes produce: per-parameter gradients aligned with
// param_refs(state), plus the gradient w.r.t. the network input.
template <class T>
struct JointGradients {
  std::vector<Tensor<T>> params;
  Tensor<T> d_input;
};

template <class T>
JointGradients<T> zero_gradients(ModelState<T>& state, const Tensor<T>& input) {
  JointGradients<T> g;
  for (const auto& r : param_refs(state))
    g.params.push_back(Tensor<T>::zeros_like(*r.tensor));
  g.d_input = Tensor<T>::zeros_like(input);
  return g;
}

template <class T>
void accumulate_scaled(JointGradients<T>& into, const JointGradients<T>& from,
                       T scale) {
  if (into.params.size() != from.params.size())
    throw ShapeError("gradient accumulation: parameter count mismatch");
  for (std::size_t i = 0; i < into.params.size(); ++i)
    for (std::size_t j = 0; j < into.params[i].numel(); ++j)
      into.params[i][j] += scale * from.params[i][j];
  for (std::size_t j = 0; j < into.d_input.numel(); ++j)
    into.d_input[j] += scale * from.d_input[j];
}

// ---------------------------------------------------------------------------
// Forward pass. The cache keeps every intermediate the backward pass needs;
// backward without a valid cache is a usage error.

template <class T>
struct JointCache {
  bool valid = false;
  bool heads = false;  // pooled branch + classifier were run
  Tensor<T> input;
  Tensor<T> pre1, act1, pool1;  // image-mode backbone intermediates
  Tensor<T> x;                  // pre-activation features [W,H,D]
  AttentionMaps<T> maps;
  Tensor<T> weights;  // empty when attention is off
  Tensor<T> assign;   // [N,K] (vlad/bow)
  Tensor<T> raw;      // [K,D] (vlad)
  PooledVector<T> pooled;
  Tensor<T> cls_logits;
  Tensor<T> att_logits;
};

template <class T>
Tensor<T> backbone_features(const ModelState<T>& state, const Tensor<T>& input,
                            JointCache<T>& cache) {
  if (state.input == InputKind::featuremap) {
    if (input.rank() != 3 || input.extent(2) != state.feature_dim)
      throw ShapeError("forward: feature map shape " + input.shape_string() +
                       " does not end in feature_dim " +
                       std::to_string(state.feature_dim));
    return input;
  }
  if (input.rank() != 3 || input.extent(2) != 3)
    throw ShapeError("forward: image shape " + input.shape_string() +
                     " is not [W,H,3]");
  cache.pre1 = conv2d_3x3(input, state.conv1_w, state.conv1_b);
  cache.act1 = relu(cache.pre1);
  cache.pool1 = maxpool2(cache.act1);
  return conv2d_3x3(cache.pool1, state.conv2_w, state.conv2_b);
}

template <class T>
Tensor<T> classifier_forward(const ModelState<T>& state, const Tensor<T>& v) {
  const std::size_t p = state.cls_w.extent(0), c = state.cls_w.extent(1);
  if (v.numel() != p)
    throw ShapeError("classifier: pooled vector length " +
                     std::to_string(v.numel()) + " != weight rows " +
                     std::to_string(p));
  Tensor<T> logits({c});
  for (std::size_t j = 0; j < c; ++j) {
    acc_t<T> sum = state.cls_b(j);
    for (std::size_t i = 0; i < p; ++i)
      sum += static_cast<acc_t<T>>(v[i]) * state.cls_w(i, j);
    logits(j) = static_cast<T>(sum);
  }
  return logits;
}

// Attention branch only (stage-1 pretraining): backbone + heatmaps + logits.
template <class T>
JointCache<T> forward_attention(const ModelState<T>& state, const Tensor<T>& input) {
  JointCache<T> cache;
  cache.input = input;
  cache.x = backbone_features(state, input, cache);
  cache.maps = attention_forward(cache.x, state.att);
  cache.att_logits = attention_logits(cache.maps);
  cache.valid = true;
  return cache;
}

template <class T>
JointCache<T> forward_joint(const ModelState<T>& state, const Tensor<T>& input) {
  JointCache<T> cache = forward_attention(state, input);

  const auto [n, d] = descriptor_rows(cache.x);
  if (state.attention == AttentionMode::on) {
    cache.weights = attention_weights(cache.maps);
  } else if (state.attention == AttentionMode::uniform) {
    cache.weights = Tensor<T>({n}, T(1) / static_cast<T>(n));
  }
  const Tensor<T>* w = cache.weights.empty() ? nullptr : &cache.weights;

  if (state.pooling != PoolKind::gap && state.cb.centers.empty())
    throw UsageError("forward_joint: codebook not initialized");
  if (state.cls_w.empty())
    throw UsageError("forward_joint: classifier not initialized");

  switch (state.pooling) {
    case PoolKind::vlad:
      cache.assign = soft_assign(cache.x, state.cb, AssignMode::decoupled);
      cache.raw = vlad_aggregate(cache.x, cache.assign, state.cb, w);
      cache.pooled = normalize_vlad(cache.raw);
      break;
    case PoolKind::bow:
      cache.assign = soft_assign(cache.x, state.cb, AssignMode::decoupled);
      cache.pooled = bow_aggregate(cache.assign, w);
      break;
    case PoolKind::gap:
      cache.pooled = gap_aggregate(cache.x, w);
      break;
  }
  cache.cls_logits = classifier_forward(state, cache.pooled.v);
  cache.heads = true;
  return cache;
}

struct LossParts {
  double cls = 0;
  double att = 0;
  double total = 0;
};

template <class T>
LossParts joint_loss(const Tensor<T>& cls_logits, const Tensor<T>& att_logits,
                     std::size_t label, double lambda) {
  LossParts parts;
  parts.cls = static_cast<double>(cross_entropy(cls_logits, label));
  parts.att = static_cast<double>(cross_entropy(att_logits, label));
  parts.total = parts.cls + lambda * parts.att;
  return parts;
}

// ---------------------------------------------------------------------------
// Backward passes.

namespace detail {

// Routes a feature gradient through the backbone (image mode) or straight to
// the input (ingestion mode), filling the conv parameter slots of `grads` by
// name.
template <class T>
void backbone_backward(ModelState<T>& state, const JointCache<T>& cache,
                       const Tensor<T>& d_x, JointGradients<T>& grads,
                       const std::vector<ParamRef<T>>& refs) {
  if (state.input == InputKind::featuremap) {
    for (std::size_t j = 0; j < d_x.numel(); ++j) grads.d_input[j] += d_x[j];
    return;
  }
  LayerGradients<T> g2 = conv2d_3x3_backward(cache.pool1, state.conv2_w, d_x);
  Tensor<T> d_act1 = maxpool2_backward(cache.act1, g2.d_input);
  Tensor<T> d_pre1 = relu_backward(cache.pre1, d_act1);
  LayerGradients<T> g1 = conv2d_3x3_backward(cache.input, state.conv1_w, d_pre1);

  auto slot = [&](const std::string& name) -> Tensor<T>& {
    for (std::size_t i = 0; i < refs.size(); ++i)
      if (refs[i].name == name) return grads.params[i];
    throw UsageError("backbone_backward: no gradient slot for " + name);
  };
  auto add_into = [](Tensor<T>& dst, const Tensor<T>& src) {
    for (std::size_t j = 0; j < dst.numel(); ++j) dst[j] += src[j];
  };
  add_into(slot("conv2.weight"), g2.d_params[0]);
  add_into(slot("conv2.bias"), g2.d_params[1]);
  add_into(slot("conv1.weight"), g1.d_params[0]);
  add_into(slot("conv1.bias"), g1.d_params[1]);
  add_into(grads.d_input, g1.d_input);
}

template <class T>
Tensor<T>& grad_slot(JointGradients<T>& grads, const std::vector<ParamRef<T>>& refs,
                     const std::string& name) {
  for (std::size_t i = 0; i < refs.size(); ++i)
    if (refs[i].name == name) return grads.params[i];
  throw UsageError("backward: no gradient slot for " + name);
}

}  // namespace detail

// Gradient of the stage-1 objective (attention cross-entropy alone).
template <class T>
JointGradients<T> backward_attention(ModelState<T>& state,
                                     const JointCache<T>& cache,
                                     std::size_t label) {
  if (!cache.valid) throw UsageError("backward_attention before forward");
  auto refs = param_refs(state);
  JointGradients<T> grads = zero_gradients(state, cache.input);

  Tensor<T> d_logits = cross_entropy_backward(cache.att_logits, label);
  Tensor<T> d_h = attention_logits_backward(cache.maps, d_logits);
  AttentionGradients<T> ga = attention_backward(cache.x, state.att, cache.maps, d_h);

  auto add_into = [](Tensor<T>& dst, const Tensor<T>& src) {
    for (std::size_t j = 0; j < dst.numel(); ++j) dst[j] += src[j];
  };
  add_into(detail::grad_slot(grads, refs, "att.ca.weight"), ga.d_w_ca);
  add_into(detail::grad_slot(grads, refs, "att.ca.bias"), ga.d_b_ca);
  add_into(detail::grad_slot(grads, refs, "att.cs.weight"), ga.d_w_cs);
  add_into(detail::grad_slot(grads, refs, "att.cs.bias"), ga.d_b_cs);
  detail::backbone_backward(state, cache, ga.d_input, grads, refs);
  return grads;
}

// Gradient of L = CE(cls) + lambda * CE(att) w.r.t. every trainable
// parameter and the input. The attention-weight path is part of the chain
// when attention is on; forced-uniform weights are constants.
template <class T>
JointGradients<T> backward_joint(ModelState<T>& state, const JointCache<T>& cache,
                                 std::size_t label, double lambda) {
  if (!cache.valid || !cache.heads)
    throw UsageError("backward_joint before forward_joint");
  auto refs = param_refs(state);
  JointGradients<T> grads = zero_gradients(state, cache.input);
  auto add_into = [](Tensor<T>& dst, const Tensor<T>& src) {
    for (std::size_t j = 0; j < dst.numel(); ++j) dst[j] += src[j];
  };

  // Classifier head.
  Tensor<T> d_cls = cross_entropy_backward(cache.cls_logits, label);
  {
    const std::size_t p = state.cls_w.extent(0), c = state.cls_w.extent(1);
    Tensor<T>& d_w = detail::grad_slot(grads, refs, "classifier.weight");
    Tensor<T>& d_b = detail::grad_slot(grads, refs, "classifier.bias");
    for (std::size_t j = 0; j < c; ++j) d_b(j) += d_cls(j);
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j < c; ++j)
        d_w(i, j) += cache.pooled.v[i] * d_cls(j);
  }
  Tensor<T> d_v({cache.pooled.v.numel()});
  for (std::size_t i = 0; i < d_v.numel(); ++i) {
    acc_t<T> sum = 0;
    for (std::size_t j = 0; j < state.cls_w.extent(1); ++j)
      sum += static_cast<acc_t<T>>(state.cls_w(i, j)) * d_cls(j);
    d_v[i] = static_cast<T>(sum);
  }

  // Pooled branch back to features, assignments and weights.
  const Tensor<T>* w = cache.weights.empty() ? nullptr : &cache.weights;
  Tensor<T> d_x = Tensor<T>::zeros_like(cache.x);
  Tensor<T> d_weights;
  if (state.pooling == PoolKind::vlad) {
    Tensor<T> d_raw = normalize_vlad_backward(cache.raw, d_v);
    VladGradients<T> gv =
        vlad_aggregate_backward(cache.x, cache.assign, state.cb, w, d_raw);
    AssignGradients<T> gs = soft_assign_backward(
        cache.x, state.cb, AssignMode::decoupled, cache.assign, gv.d_assign);
    add_into(d_x, gv.d_input);
    add_into(d_x, gs.d_input);
    add_into(detail::grad_slot(grads, refs, "codebook.centers"), gv.d_centers);
    add_into(detail::grad_slot(grads, refs, "codebook.s"), gs.d_s);
    add_into(detail::grad_slot(grads, refs, "codebook.h"), gs.d_h);
    d_weights = std::move(gv.d_weights);
  } else if (state.pooling == PoolKind::bow) {
    BowGradients<T> gb = bow_aggregate_backward(cache.assign, w, d_v);
    AssignGradients<T> gs = soft_assign_backward(
        cache.x, state.cb, AssignMode::decoupled, cache.assign, gb.d_assign);
    add_into(d_x, gs.d_input);
    add_into(detail::grad_slot(grads, refs, "codebook.s"), gs.d_s);
    add_into(detail::grad_slot(grads, refs, "codebook.h"), gs.d_h);
    d_weights = std::move(gb.d_weights);
  } else {
    GapGradients<T> gg = gap_aggregate_backward(cache.x, w, d_v);
    add_into(d_x, gg.d_input);
    d_weights = std::move(gg.d_weights);
  }

  // Attention branch: lambda-scaled classification loss on the maps, plus
  // the weight-map path out of the aggregation when attention is on.
  Tensor<T> d_h({cache.maps.h.extent(0), cache.maps.h.extent(1),
                 cache.maps.h.extent(2)});
  if (lambda != 0) {
    Tensor<T> d_att = cross_entropy_backward(cache.att_logits, label);
    for (std::size_t j = 0; j < d_att.numel(); ++j)
      d_att[j] = static_cast<T>(d_att[j] * lambda);
    d_h = attention_logits_backward(cache.maps, d_att);
  }
  if (state.attention == AttentionMode::on && !d_weights.empty()) {
    Tensor<T> d_h_w = attention_weights_backward(cache.maps, d_weights);
    add_into(d_h, d_h_w);
  }
  AttentionGradients<T> ga = attention_backward(cache.x, state.att, cache.maps, d_h);
  add_into(d_x, ga.d_input);
  add_into(detail::grad_slot(grads, refs, "att.ca.weight"), ga.d_w_ca);
  add_into(detail::grad_slot(grads, refs, "att.ca.bias"), ga.d_b_ca);
  add_into(detail::grad_slot(grads, refs, "att.cs.weight"), ga.d_w_cs);
  add_into(detail::grad_slot(grads, refs, "att.cs.bias"), ga.d_b_cs);

  detail::backbone_backward(state, cache, d_x, grads, refs);
  return grads;
}

// ---------------------------------------------------------------------------
// Adam with decoupled weight decay. The closed form of one step from zero
// moments is -lr * g / (|g| + eps): epsilon sits outside the square root.

template <class T>
void init_optimizer(ModelState<T>& state) {
  state.adam_m.clear();
  state.adam_v.clear();
  for (const auto& r : param_refs(state)) {
    state.adam_m.push_back(Tensor<T>::zeros_like(*r.tensor));
    state.adam_v.push_back(Tensor<T>::zeros_like(*r.tensor));
  }
  state.adam_t = 0;
}

template <class T>
void adam_step(ModelState<T>& state, const std::vector<Tensor<T>>& grads,
               const std::vector<double>& lr, const TrainConfig& cfg) {
  auto refs = param_refs(state);
  if (grads.size() != refs.size() || lr.size() != refs.size())
    throw ShapeError("adam_step: gradient/lr count " +
                     std::to_string(grads.size()) + "/" +
                     std::to_string(lr.size()) + " != parameter count " +
                     std::to_string(refs.size()));
  if (state.adam_m.size() != refs.size())
    throw UsageError("adam_step: optimizer moments not initialized");

  ++state.adam_t;
  ++state.step;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.adam_t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.adam_t));
  for (std::size_t i = 0; i < refs.size(); ++i) {
    Tensor<T>& theta = *refs[i].tensor;
    if (grads[i].shape() != theta.shape())
      throw ShapeError("adam_step: gradient shape " + grads[i].shape_string() +
                       " != parameter shape " + theta.shape_string() + " for " +
                       refs[i].name);
    Tensor<T>& m = state.adam_m[i];
    Tensor<T>& v = state.adam_v[i];
    for (std::size_t j = 0; j < theta.numel(); ++j) {
      const double g = static_cast<double>(grads[i][j]);
      const double mj = b1 * static_cast<double>(m[j]) + (1.0 - b1) * g;
      const double vj = b2 * static_cast<double>(v[j]) + (1.0 - b2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double update =
          lr[i] * (mj / bc1) / (std::sqrt(vj / bc2) + cfg.adam_eps);
      theta[j] = static_cast<T>(theta[j] - update);
      if (refs[i].decay && cfg.weight_decay > 0)
        theta[j] = static_cast<T>(theta[j] -
                                  lr[i] * cfg.weight_decay * theta[j]);
    }
  }
}

// ---------------------------------------------------------------------------
// Initialization, training, evaluation (32-bit; implemented in train.cpp).

ModelState<float> init_model(const TrainConfig& cfg, InputKind input,
                             std::size_t classes, std::size_t data_dim, Rng& rng);

struct EvalResult {
  double accuracy = 0;
  double mean_class_accuracy = 0;
  std::vector<double> per_class;
  Tensor<double> confusion;  // [C,C], rows = true class
  double loss_cls = 0;
  double loss_att = 0;
};

struct TrainResult {
  ModelState<float> state;
  std::string metrics_log;
  EvalResult final_test;
};

// Two stages: (1) backbone + attention branch on the attention loss alone,
// (2) k-means codebook init from stage-1 features, then end-to-end joint
// training with per-group learning rates.
TrainResult train(const Dataset& ds, const TrainConfig& cfg);

EvalResult evaluate(const ModelState<float>& state, const Dataset& ds,
                    const std::string& split, bool flip_average);

// Checkpoint container: magic "AAGG", u32 version, then length-prefixed
// named tensors (u32 name length, name bytes, u32 rank, u64 dims, f32
// little-endian payload). Round-trips are byte-identical.
void save_checkpoint(const ModelState<float>& state, const std::string& path);
ModelState<float> load_checkpoint(const std::string& path);

inline const char* metrics_header() {
  return "epoch,stage,split,loss_cls,loss_att,loss_total,acc";
}

}  // namespace attpool

#endif
