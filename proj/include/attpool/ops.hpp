#ifndef ATTPOOL_OPS_HPP
#define ATTPOOL_OPS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "attpool/tensor.hpp"

namespace attpool {

// Wider accumulator for inner-product style reductions. Keeps float-mode
// training well conditioned and pushes double-mode rounding noise far below
// the finite-difference tolerance of the gradient checker.
template <class T>
struct accum_of {
  using type = double;
};
template <>
struct accum_of<double> {
  using type = long double;
};
template <class T>
using acc_t = typename accum_of<T>::type;

// Gradients of one layer: d_input mirrors the layer input, d_params mirror
// the trainable parameters in declaration order.
template <class T>
struct LayerGradients {
  Tensor<T> d_input;
  std::vector<Tensor<T>> d_params;
};

namespace detail {

inline void check(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// 1x1 convolution: a per-location linear map across channels.

template <class T>
Tensor<T> conv2d_1x1(const Tensor<T>& input, const Tensor<T>& weights,
                     const Tensor<T>& bias) {
  detail::check(input.rank() == 3, "conv2d_1x1: input rank " +
                                       std::to_string(input.rank()) + " != 3");
  detail::check(weights.rank() == 2, "conv2d_1x1: weights rank " +
                                         std::to_string(weights.rank()) + " != 2");
  const std::size_t w = input.extent(0), h = input.extent(1), din = input.extent(2);
  const std::size_t dout = weights.extent(1);
  detail::check(weights.extent(0) == din,
                "conv2d_1x1: input channels " + std::to_string(din) +
                    " != weight rows " + std::to_string(weights.extent(0)));
  detail::check(bias.rank() == 1 && bias.extent(0) == dout,
                "conv2d_1x1: bias length " + std::to_string(bias.numel()) +
                    " != output channels " + std::to_string(dout));

  Tensor<T> out({w, h, dout});
  for (std::size_t i = 0; i < w; ++i)
    for (std::size_t j = 0; j < h; ++j)
      for (std::size_t c = 0; c < dout; ++c) {
        acc_t<T> sum = bias(c);
        for (std::size_t d = 0; d < din; ++d)
          sum += static_cast<acc_t<T>>(input(i, j, d)) * weights(d, c);
        out(i, j, c) = static_cast<T>(sum);
      }
  return out;
}

template <class T>
LayerGradients<T> conv2d_1x1_backward(const Tensor<T>& input,
                                      const Tensor<T>& weights,
                                      const Tensor<T>& upstream) {
  const std::size_t w = input.extent(0), h = input.extent(1), din = input.extent(2);
  const std::size_t dout = weights.extent(1);
  detail::check(upstream.rank() == 3 && upstream.extent(0) == w &&
                    upstream.extent(1) == h && upstream.extent(2) == dout,
                "conv2d_1x1_backward: upstream shape " + upstream.shape_string() +
                    " does not match forward output");

  LayerGradients<T> g;
  g.d_input = Tensor<T>({w, h, din});
  Tensor<T> d_weights({din, dout});
  Tensor<T> d_bias({dout});

  for (std::size_t d = 0; d < din; ++d)
    for (std::size_t c = 0; c < dout; ++c) {
      acc_t<T> sum = 0;
      for (std::size_t i = 0; i < w; ++i)
        for (std::size_t j = 0; j < h; ++j)
          sum += static_cast<acc_t<T>>(input(i, j, d)) * upstream(i, j, c);
      d_weights(d, c) = static_cast<T>(sum);
    }
  for (std::size_t c = 0; c < dout; ++c) {
    acc_t<T> sum = 0;
    for (std::size_t i = 0; i < w; ++i)
      for (std::size_t j = 0; j < h; ++j) sum += upstream(i, j, c);
    d_bias(c) = static_cast<T>(sum);
  }
  for (std::size_t i = 0; i < w; ++i)
    for (std::size_t j = 0; j < h; ++j)
      for (std::size_t d = 0; d < din; ++d) {
        acc_t<T> sum = 0;
        for (std::size_t c = 0; c < dout; ++c)
          sum += static_cast<acc_t<T>>(upstream(i, j, c)) * weights(d, c);
        g.d_input(i, j, d) = static_cast<T>(sum);
      }

  g.d_params.push_back(std::move(d_weights));
  g.d_params.push_back(std::move(d_bias));
  return g;
}

// ---------------------------------------------------------------------------
// 3x3 cross-correlation, zero padding of width 1, same-size output.

template <class T>
Tensor<T> conv2d_3x3(const Tensor<T>& input, const Tensor<T>& weights,
                     const Tensor<T>& bias) {
  detail::check(input.rank() == 3, "conv2d_3x3: input rank != 3");
  detail::check(weights.rank() == 4 && weights.extent(0) == 3 && weights.extent(1) == 3,
                "conv2d_3x3: weights shape " + weights.shape_string() +
                    " is not [3,3,Din,Dout]");
  const std::size_t w = input.extent(0), h = input.extent(1), din = input.extent(2);
  const std::size_t dout = weights.extent(3);
  detail::check(weights.extent(2) == din,
                "conv2d_3x3: input channels " + std::to_string(din) +
                    " != weight channels " + std::to_string(weights.extent(2)));
  detail::check(bias.rank() == 1 && bias.extent(0) == dout,
                "conv2d_3x3: bias length " + std::to_string(bias.numel()) +
                    " != output channels " + std::to_string(dout));

  Tensor<T> out({w, h, dout});
  for (std::size_t i = 0; i < w; ++i)
    for (std::size_t j = 0; j < h; ++j)
      for (std::size_t c = 0; c < dout; ++c) {
        acc_t<T> sum = bias(c);
        for (std::size_t a = 0; a < 3; ++a) {
          std::size_t x = i + a;
          if (x < 1 || x > w) continue;  // zero padding
          for (std::size_t b = 0; b < 3; ++b) {
            std::size_t y = j + b;
            if (y < 1 || y > h) continue;
            for (std::size_t d = 0; d < din; ++d)
              sum += static_cast<acc_t<T>>(input(x - 1, y - 1, d)) * weights(a, b, d, c);
          }
        }
        out(i, j, c) = static_cast<T>(sum);
      }
  return out;
}

template <class T>
LayerGradients<T> conv2d_3x3_backward(const Tensor<T>& input,
                                      const Tensor<T>& weights,
                                      const Tensor<T>& upstream) {
  const std::size_t w = input.extent(0), h = input.extent(1), din = input.extent(2);
  const std::size_t dout = weights.extent(3);
  detail::check(upstream.rank() == 3 && upstream.extent(0) == w &&
                    upstream.extent(1) == h && upstream.extent(2) == dout,
                "conv2d_3x3_backward: upstream shape " + upstream.shape_string() +
                    " does not match forward output");

  LayerGradients<T> g;
  g.d_input = Tensor<T>({w, h, din});
  Tensor<T> d_weights({3, 3, din, dout});
  Tensor<T> d_bias({dout});

  std::vector<acc_t<T>> dw(static_cast<std::size_t>(9) * din * dout, acc_t<T>(0));
  std::vector<acc_t<T>> di(w * h * din, acc_t<T>(0));
  for (std::size_t i = 0; i < w; ++i)
    for (std::size_t j = 0; j < h; ++j)
      for (std::size_t a = 0; a < 3; ++a) {
        std::size_t x = i + a;
        if (x < 1 || x > w) continue;
        for (std::size_t b = 0; b < 3; ++b) {
          std::size_t y = j + b;
          if (y < 1 || y > h) continue;
          for (std::size_t c = 0; c < dout; ++c) {
            acc_t<T> up = upstream(i, j, c);
            for (std::size_t d = 0; d < din; ++d) {
              dw[((a * 3 + b) * din + d) * dout + c] +=
                  static_cast<acc_t<T>>(input(x - 1, y - 1, d)) * up;
              di[((x - 1) * h + (y - 1)) * din + d] +=
                  up * static_cast<acc_t<T>>(weights(a, b, d, c));
            }
          }
        }
      }
  for (std::size_t k = 0; k < dw.size(); ++k) d_weights[k] = static_cast<T>(dw[k]);
  for (std::size_t k = 0; k < di.size(); ++k) g.d_input[k] = static_cast<T>(di[k]);
  for (std::size_t c = 0; c < dout; ++c) {
    acc_t<T> sum = 0;
    for (std::size_t i = 0; i < w; ++i)
      for (std::size_t j = 0; j < h; ++j) sum += upstream(i, j, c);
    d_bias(c) = static_cast<T>(sum);
  }

  g.d_params.push_back(std::move(d_weights));
  g.d_params.push_back(std::move(d_bias));
  return g;
}

// ---------------------------------------------------------------------------
// Pointwise and pooling ops.

template <class T>
Tensor<T> relu(const Tensor<T>& input) {
  Tensor<T> out = Tensor<T>::zeros_like(input);
  for (std::size_t i = 0; i < input.numel(); ++i)
    out[i] = input[i] > T(0) ? input[i] : T(0);
  return out;
}

template <class T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& upstream) {
  detail::check(input.shape() == upstream.shape(),
                "relu_backward: upstream shape " + upstream.shape_string() +
                    " != input shape " + input.shape_string());
  Tensor<T> d = Tensor<T>::zeros_like(input);
  for (std::size_t i = 0; i < input.numel(); ++i)
    d[i] = input[i] > T(0) ? upstream[i] : T(0);
  return d;
}

// 2x2 max pooling with stride 2; odd edges take the partial window.
template <class T>
Tensor<T> maxpool2(const Tensor<T>& input) {
  detail::check(input.rank() == 3, "maxpool2: input rank != 3");
  const std::size_t w = input.extent(0), h = input.extent(1), dd = input.extent(2);
  const std::size_t wo = (w + 1) / 2, ho = (h + 1) / 2;
  Tensor<T> out({wo, ho, dd});
  for (std::size_t i = 0; i < wo; ++i)
    for (std::size_t j = 0; j < ho; ++j)
      for (std::size_t d = 0; d < dd; ++d) {
        T best = input(2 * i, 2 * j, d);
        for (std::size_t a = 0; a < 2; ++a)
          for (std::size_t b = 0; b < 2; ++b) {
            std::size_t x = 2 * i + a, y = 2 * j + b;
            if (x < w && y < h && input(x, y, d) > best) best = input(x, y, d);
          }
        out(i, j, d) = best;
      }
  return out;
}

// Routes upstream to the first maximum of each window (scan order), which
// keeps repeated runs bit-identical.
template <class T>
Tensor<T> maxpool2_backward(const Tensor<T>& input, const Tensor<T>& upstream) {
  const std::size_t w = input.extent(0), h = input.extent(1), dd = input.extent(2);
  const std::size_t wo = (w + 1) / 2, ho = (h + 1) / 2;
  detail::check(upstream.rank() == 3 && upstream.extent(0) == wo &&
                    upstream.extent(1) == ho && upstream.extent(2) == dd,
                "maxpool2_backward: upstream shape " + upstream.shape_string() +
                    " does not match pooled output");
  Tensor<T> d({w, h, dd});
  for (std::size_t i = 0; i < wo; ++i)
    for (std::size_t j = 0; j < ho; ++j)
      for (std::size_t c = 0; c < dd; ++c) {
        std::size_t bx = 2 * i, by = 2 * j;
        T best = input(bx, by, c);
        for (std::size_t a = 0; a < 2; ++a)
          for (std::size_t b = 0; b < 2; ++b) {
            std::size_t x = 2 * i + a, y = 2 * j + b;
            if (x < w && y < h && input(x, y, c) > best) {
              best = input(x, y, c);
              bx = x;
              by = y;
            }
          }
        d(bx, by, c) += upstream(i, j, c);
      }
  return d;
}

// ---------------------------------------------------------------------------
// Softmax / cross-entropy on logit vectors.

template <class T>
Tensor<T> softmax(const Tensor<T>& logits) {
  detail::check(logits.rank() == 1, "softmax: logits rank != 1");
  Tensor<T> p = Tensor<T>::zeros_like(logits);
  T m = logits[0];
  for (std::size_t i = 1; i < logits.numel(); ++i) m = std::max(m, logits[i]);
  acc_t<T> z = 0;
  for (std::size_t i = 0; i < logits.numel(); ++i) {
    p[i] = std::exp(logits[i] - m);
    z += p[i];
  }
  for (std::size_t i = 0; i < p.numel(); ++i)
    p[i] = static_cast<T>(p[i] / z);
  return p;
}

template <class T>
T cross_entropy(const Tensor<T>& logits, std::size_t label) {
  detail::check(logits.rank() == 1, "cross_entropy: logits rank != 1");
  if (label >= logits.numel())
    throw ValueError("cross_entropy: label " + std::to_string(label) +
                     " out of range [0," + std::to_string(logits.numel()) + ")");
  T m = logits[0];
  for (std::size_t i = 1; i < logits.numel(); ++i) m = std::max(m, logits[i]);
  acc_t<T> z = 0;
  for (std::size_t i = 0; i < logits.numel(); ++i)
    z += std::exp(static_cast<acc_t<T>>(logits[i]) - m);
  return static_cast<T>(std::log(z) - (static_cast<acc_t<T>>(logits[label]) - m));
}

// d(loss)/d(logits) = softmax(logits) - onehot(label)
template <class T>
Tensor<T> cross_entropy_backward(const Tensor<T>& logits, std::size_t label) {
  if (label >= logits.numel())
    throw ValueError("cross_entropy_backward: label " + std::to_string(label) +
                     " out of range");
  Tensor<T> d = softmax(logits);
  d[label] -= T(1);
  return d;
}

// ---------------------------------------------------------------------------
// Width-axis reversal of a [W,H,D] map (test-time flip averaging).

template <class T>
Tensor<T> flip_width(const Tensor<T>& input) {
  detail::check(input.rank() == 3, "flip_width: input rank != 3");
  const std::size_t w = input.extent(0), h = input.extent(1), d = input.extent(2);
  Tensor<T> out({w, h, d});
  for (std::size_t i = 0; i < w; ++i)
    for (std::size_t j = 0; j < h; ++j)
      for (std::size_t c = 0; c < d; ++c) out(i, j, c) = input(w - 1 - i, j, c);
  return out;
}

}  // namespace attpool

#endif
