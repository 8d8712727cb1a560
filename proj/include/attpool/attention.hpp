#ifndef ATTPOOL_ATTENTION_HPP
#define ATTPOOL_ATTENTION_HPP

#include <string>

#include "attpool/ops.hpp"
#include "attpool/tensor.hpp"

namespace attpool {

// 1x1 filter bank of the attention branch: one class-agnostic filter and one
// filter per class. Both consume the same pre-activation feature map as the
// aggregation branch.
template <class T>
struct AttentionParams {
  Tensor<T> w_ca;  // [D,1]
  Tensor<T> b_ca;  // [1]
  Tensor<T> w_cs;  // [D,C]
  Tensor<T> b_cs;  // [C]

  std::size_t classes() const { return w_cs.extent(1); }
};

// h(i,j,c) = h_cs(i,j,c) * h_ca(i,j). Locations flatten as i = x*H + y,
// matching the descriptor order of a [W,H,D] feature map.
template <class T>
struct AttentionMaps {
  Tensor<T> h_ca;     // [W,H]
  Tensor<T> h_cs;     // [W,H,C]
  Tensor<T> h;        // [W,H,C]
  Tensor<T> weights;  // [N], filled by attention_weights
};

template <class T>
AttentionMaps<T> attention_forward(const Tensor<T>& features,
                                   const AttentionParams<T>& p) {
  if (features.rank() != 3)
    throw ShapeError("attention_forward: features shape " +
                     features.shape_string() + " is not [W,H,D]");
  const std::size_t w = features.extent(0), h = features.extent(1);
  const std::size_t c = p.classes();

  AttentionMaps<T> maps;
  Tensor<T> ca = conv2d_1x1(features, p.w_ca, p.b_ca);  // [W,H,1]
  maps.h_ca = Tensor<T>({w, h}, std::vector<T>(ca.data(), ca.data() + ca.numel()));
  maps.h_cs = conv2d_1x1(features, p.w_cs, p.b_cs);
  maps.h = Tensor<T>({w, h, c});
  for (std::size_t i = 0; i < w; ++i)
    for (std::size_t j = 0; j < h; ++j)
      for (std::size_t l = 0; l < c; ++l)
        maps.h(i, j, l) = maps.h_cs(i, j, l) * maps.h_ca(i, j);
  return maps;
}

// Per-class score: spatial mean of the combined map.
template <class T>
Tensor<T> attention_logits(const AttentionMaps<T>& maps) {
  const std::size_t w = maps.h.extent(0), hh = maps.h.extent(1),
                    c = maps.h.extent(2);
  const acc_t<T> n = static_cast<acc_t<T>>(w * hh);
  Tensor<T> logits({c});
  for (std::size_t l = 0; l < c; ++l) {
    acc_t<T> sum = 0;
    for (std::size_t i = 0; i < w; ++i)
      for (std::size_t j = 0; j < hh; ++j) sum += maps.h(i, j, l);
    logits(l) = static_cast<T>(sum / n);
  }
  return logits;
}

template <class T>
T attention_loss(const Tensor<T>& logits, std::size_t label) {
  return cross_entropy(logits, label);
}

// Attention weight map: per-location max over classes, clamped at zero and
// normalized to sum 1. If every location is non-positive, falls back to
// uniform weights.
template <class T>
Tensor<T> attention_weights(const AttentionMaps<T>& maps) {
  const std::size_t w = maps.h.extent(0), hh = maps.h.extent(1),
                    c = maps.h.extent(2);
  const std::size_t n = w * hh;
  Tensor<T> weights({n});
  acc_t<T> total = 0;
  for (std::size_t i = 0; i < w; ++i)
    for (std::size_t j = 0; j < hh; ++j) {
      T m = maps.h(i, j, 0);
      for (std::size_t l = 1; l < c; ++l) m = std::max(m, maps.h(i, j, l));
      const T r = m > T(0) ? m : T(0);
      weights[i * hh + j] = r;
      total += r;
    }
  if (total > acc_t<T>(1e-8)) {
    for (std::size_t i = 0; i < n; ++i)
      weights[i] = static_cast<T>(weights[i] / total);
  } else {
    weights.fill(T(1) / static_cast<T>(n));
  }
  return weights;
}

// d(loss)/d(h) for upstream gradients on the logits.
template <class T>
Tensor<T> attention_logits_backward(const AttentionMaps<T>& maps,
                                    const Tensor<T>& d_logits) {
  const std::size_t w = maps.h.extent(0), hh = maps.h.extent(1),
                    c = maps.h.extent(2);
  if (d_logits.rank() != 1 || d_logits.extent(0) != c)
    throw ShapeError("attention_logits_backward: upstream shape " +
                     d_logits.shape_string() + " != [C]");
  const acc_t<T> n = static_cast<acc_t<T>>(w * hh);
  Tensor<T> d_h({w, hh, c});
  for (std::size_t i = 0; i < w; ++i)
    for (std::size_t j = 0; j < hh; ++j)
      for (std::size_t l = 0; l < c; ++l)
        d_h(i, j, l) = static_cast<T>(static_cast<acc_t<T>>(d_logits(l)) / n);
  return d_h;
}

// Subgradient through max/clamp/normalize: the per-location max routes to
// the first class attaining it, the clamp passes only strictly positive
// maxima, and the uniform fallback is locally constant (zero gradient).
template <class T>
Tensor<T> attention_weights_backward(const AttentionMaps<T>& maps,
                                     const Tensor<T>& d_weights) {
  const std::size_t w = maps.h.extent(0), hh = maps.h.extent(1),
                    c = maps.h.extent(2);
  const std::size_t n = w * hh;
  if (d_weights.rank() != 1 || d_weights.extent(0) != n)
    throw ShapeError("attention_weights_backward: upstream shape " +
                     d_weights.shape_string() + " != [N]");

  std::vector<T> r(n);
  std::vector<std::size_t> arg(n);
  acc_t<T> total = 0;
  for (std::size_t i = 0; i < w; ++i)
    for (std::size_t j = 0; j < hh; ++j) {
      T m = maps.h(i, j, 0);
      std::size_t a = 0;
      for (std::size_t l = 1; l < c; ++l)
        if (maps.h(i, j, l) > m) {
          m = maps.h(i, j, l);
          a = l;
        }
      r[i * hh + j] = m > T(0) ? m : T(0);
      arg[i * hh + j] = a;
      total += r[i * hh + j];
    }

  Tensor<T> d_h({w, hh, c});
  if (total <= acc_t<T>(1e-8)) return d_h;  // uniform fallback branch

  acc_t<T> dot = 0;  // <d_w, w> with w = r / total
  for (std::size_t i = 0; i < n; ++i)
    dot += static_cast<acc_t<T>>(d_weights[i]) * (r[i] / total);
  for (std::size_t i = 0; i < w; ++i)
    for (std::size_t j = 0; j < hh; ++j) {
      const std::size_t idx = i * hh + j;
      if (!(r[idx] > T(0))) continue;  // clamped locations get no gradient
      const acc_t<T> d_r = (static_cast<acc_t<T>>(d_weights[idx]) - dot) / total;
      d_h(i, j, arg[idx]) += static_cast<T>(d_r);
    }
  return d_h;
}

template <class T>
struct AttentionGradients {
  Tensor<T> d_input;
  Tensor<T> d_w_ca;
  Tensor<T> d_b_ca;
  Tensor<T> d_w_cs;
  Tensor<T> d_b_cs;
};

// Backward through the combined-map product and both 1x1 convolutions.
template <class T>
AttentionGradients<T> attention_backward(const Tensor<T>& features,
                                         const AttentionParams<T>& p,
                                         const AttentionMaps<T>& maps,
                                         const Tensor<T>& d_h) {
  const std::size_t w = features.extent(0), hh = features.extent(1);
  const std::size_t c = p.classes();
  if (d_h.shape() != maps.h.shape())
    throw ShapeError("attention_backward: upstream shape " + d_h.shape_string() +
                     " != combined map shape " + maps.h.shape_string());

  Tensor<T> d_cs({w, hh, c});
  Tensor<T> d_ca({w, hh, 1});
  for (std::size_t i = 0; i < w; ++i)
    for (std::size_t j = 0; j < hh; ++j) {
      acc_t<T> sum = 0;
      for (std::size_t l = 0; l < c; ++l) {
        d_cs(i, j, l) = d_h(i, j, l) * maps.h_ca(i, j);
        sum += static_cast<acc_t<T>>(d_h(i, j, l)) * maps.h_cs(i, j, l);
      }
      d_ca(i, j, 0) = static_cast<T>(sum);
    }

  LayerGradients<T> g_cs = conv2d_1x1_backward(features, p.w_cs, d_cs);
  LayerGradients<T> g_ca = conv2d_1x1_backward(features, p.w_ca, d_ca);

  AttentionGradients<T> g;
  g.d_input = std::move(g_cs.d_input);
  for (std::size_t t = 0; t < g.d_input.numel(); ++t)
    g.d_input[t] += g_ca.d_input[t];
  g.d_w_cs = std::move(g_cs.d_params[0]);
  g.d_b_cs = std::move(g_cs.d_params[1]);
  g.d_w_ca = std::move(g_ca.d_params[0]);
  g.d_b_ca = std::move(g_ca.d_params[1]);
  return g;
}

// 8-bit grayscale PGM (P5) export of a heatmap, min-max scaled per image.
void write_pgm(const std::string& path, const Tensor<float>& map);

}  // namespace attpool

#endif
