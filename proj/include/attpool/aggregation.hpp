#ifndef ATTPOOL_AGGREGATION_HPP
#define ATTPOOL_AGGREGATION_HPP

#include <cmath>
#include <string>

#include "attpool/codebook.hpp"
#include "attpool/ops.hpp"
#include "attpool/tensor.hpp"

namespace attpool {

enum class AssignMode { direct, decoupled };
enum class PoolKind { vlad, bow, gap };

template <class T>
struct PooledVector {
  PoolKind kind = PoolKind::vlad;
  Tensor<T> v;
  bool normalized = false;
};

// Attention weights feeding an aggregation op must be a distribution over
// the N descriptor locations.
template <class T>
void validate_weights(const Tensor<T>& weights, std::size_t n) {
  if (weights.rank() != 1 || weights.extent(0) != n)
    throw ValueError("weights: expected length " + std::to_string(n) + ", got " +
                     weights.shape_string());
  acc_t<T> sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (weights[i] < T(0))
      throw ValueError("weights: negative entry at " + std::to_string(i));
    sum += weights[i];
  }
  if (std::fabs(static_cast<double>(sum) - 1.0) > 1e-6)
    throw ValueError("weights: sum " + std::to_string(static_cast<double>(sum)) +
                     " not 1 within 1e-6");
}

// ---------------------------------------------------------------------------
// Soft assignment of descriptors to codewords.
//
// direct:    z_ik = -alpha * |x_i - b_k|^2        (distance form)
// decoupled: z_ik = s_k . x_i + h_k               (trainable form)
// a_i = softmax(z_i), stabilized by max subtraction. The two coincide at
// initialization because the e^{-alpha|x|^2} factor cancels in the softmax.

template <class T>
Tensor<T> soft_assign(const Tensor<T>& features, const Codebook<T>& cb,
                      AssignMode mode) {
  const auto [n, d] = descriptor_rows(features);
  if (d != cb.d())
    throw ShapeError("soft_assign: descriptor dim " + std::to_string(d) +
                     " != codebook dim " + std::to_string(cb.d()));
  const std::size_t k = cb.k();
  const T* x = features.data();
  Tensor<T> a({n, k});
  std::vector<acc_t<T>> z(k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < k; ++c) {
      if (mode == AssignMode::direct) {
        acc_t<T> dist = 0;
        for (std::size_t j = 0; j < d; ++j) {
          const acc_t<T> t =
              static_cast<acc_t<T>>(x[i * d + j]) - cb.centers(c, j);
          dist += t * t;
        }
        z[c] = -static_cast<acc_t<T>>(cb.alpha) * dist;
      } else {
        acc_t<T> dot = cb.h(c);
        for (std::size_t j = 0; j < d; ++j)
          dot += static_cast<acc_t<T>>(cb.s(c, j)) * x[i * d + j];
        z[c] = dot;
      }
    }
    acc_t<T> m = z[0];
    for (std::size_t c = 1; c < k; ++c) m = std::max(m, z[c]);
    acc_t<T> total = 0;
    for (std::size_t c = 0; c < k; ++c) {
      z[c] = std::exp(z[c] - m);
      total += z[c];
    }
    for (std::size_t c = 0; c < k; ++c) a(i, c) = static_cast<T>(z[c] / total);
  }
  return a;
}

template <class T>
struct AssignGradients {
  Tensor<T> d_input;
  Tensor<T> d_centers;
  Tensor<T> d_s;
  Tensor<T> d_h;
};

template <class T>
AssignGradients<T> soft_assign_backward(const Tensor<T>& features,
                                        const Codebook<T>& cb, AssignMode mode,
                                        const Tensor<T>& assign,
                                        const Tensor<T>& d_assign) {
  const auto [n, d] = descriptor_rows(features);
  const std::size_t k = cb.k();
  if (assign.shape() != d_assign.shape() || assign.rank() != 2 ||
      assign.extent(0) != n || assign.extent(1) != k)
    throw ShapeError("soft_assign_backward: assignment shape " +
                     assign.shape_string() + " inconsistent with inputs");

  AssignGradients<T> g;
  g.d_input = Tensor<T>::zeros_like(features);
  g.d_centers = Tensor<T>::zeros_like(cb.centers);
  g.d_s = Tensor<T>::zeros_like(cb.s);
  g.d_h = Tensor<T>::zeros_like(cb.h);

  const T* x = features.data();
  T* dx = g.d_input.data();
  std::vector<acc_t<T>> dz(k);
  for (std::size_t i = 0; i < n; ++i) {
    acc_t<T> dot = 0;  // softmax backward: dz = a * (da - <da, a>)
    for (std::size_t c = 0; c < k; ++c)
      dot += static_cast<acc_t<T>>(d_assign(i, c)) * assign(i, c);
    for (std::size_t c = 0; c < k; ++c)
      dz[c] = static_cast<acc_t<T>>(assign(i, c)) *
              (static_cast<acc_t<T>>(d_assign(i, c)) - dot);

    if (mode == AssignMode::direct) {
      const acc_t<T> two_alpha = acc_t<T>(2) * static_cast<acc_t<T>>(cb.alpha);
      for (std::size_t c = 0; c < k; ++c)
        for (std::size_t j = 0; j < d; ++j) {
          const acc_t<T> resid =
              static_cast<acc_t<T>>(x[i * d + j]) - cb.centers(c, j);
          dx[i * d + j] -= static_cast<T>(dz[c] * two_alpha * resid);
          g.d_centers(c, j) += static_cast<T>(dz[c] * two_alpha * resid);
        }
    } else {
      for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t j = 0; j < d; ++j) {
          dx[i * d + j] += static_cast<T>(dz[c] * cb.s(c, j));
          g.d_s(c, j) += static_cast<T>(dz[c] * x[i * d + j]);
        }
        g.d_h(c) += static_cast<T>(dz[c]);
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// VLAD: per-codeword residual sums, optionally attention weighted.
//   unweighted: v_k = sum_i a_ik (x_i - b_k)
//   weighted:   v_k = sum_i w_i a_ik (x_i - b_k)

template <class T>
Tensor<T> vlad_aggregate(const Tensor<T>& features, const Tensor<T>& assign,
                         const Codebook<T>& cb,
                         const Tensor<T>* weights = nullptr) {
  const auto [n, d] = descriptor_rows(features);
  const std::size_t k = cb.k();
  if (d != cb.d())
    throw ShapeError("vlad_aggregate: descriptor dim " + std::to_string(d) +
                     " != codebook dim " + std::to_string(cb.d()));
  if (assign.rank() != 2 || assign.extent(0) != n || assign.extent(1) != k)
    throw ShapeError("vlad_aggregate: assignment shape " + assign.shape_string() +
                     " != [" + std::to_string(n) + "," + std::to_string(k) + "]");
  if (weights) validate_weights(*weights, n);

  const T* x = features.data();
  Tensor<T> raw({k, d});
  std::vector<acc_t<T>> acc(k * d, acc_t<T>(0));
  for (std::size_t i = 0; i < n; ++i) {
    const acc_t<T> wi = weights ? static_cast<acc_t<T>>((*weights)[i]) : acc_t<T>(1);
    for (std::size_t c = 0; c < k; ++c) {
      const acc_t<T> wa = wi * static_cast<acc_t<T>>(assign(i, c));
      for (std::size_t j = 0; j < d; ++j)
        acc[c * d + j] += wa * (static_cast<acc_t<T>>(x[i * d + j]) - cb.centers(c, j));
    }
  }
  for (std::size_t t = 0; t < acc.size(); ++t) raw[t] = static_cast<T>(acc[t]);
  return raw;
}

template <class T>
struct VladGradients {
  Tensor<T> d_input;
  Tensor<T> d_assign;
  Tensor<T> d_centers;
  Tensor<T> d_weights;  // empty when no weights were given
};

template <class T>
VladGradients<T> vlad_aggregate_backward(const Tensor<T>& features,
                                         const Tensor<T>& assign,
                                         const Codebook<T>& cb,
                                         const Tensor<T>* weights,
                                         const Tensor<T>& d_raw) {
  const auto [n, d] = descriptor_rows(features);
  const std::size_t k = cb.k();
  if (d_raw.rank() != 2 || d_raw.extent(0) != k || d_raw.extent(1) != d)
    throw ShapeError("vlad_aggregate_backward: upstream shape " +
                     d_raw.shape_string() + " != [K,D]");

  VladGradients<T> g;
  g.d_input = Tensor<T>::zeros_like(features);
  g.d_assign = Tensor<T>::zeros_like(assign);
  g.d_centers = Tensor<T>::zeros_like(cb.centers);
  if (weights) g.d_weights = Tensor<T>({n});

  const T* x = features.data();
  T* dx = g.d_input.data();
  for (std::size_t i = 0; i < n; ++i) {
    const acc_t<T> wi = weights ? static_cast<acc_t<T>>((*weights)[i]) : acc_t<T>(1);
    acc_t<T> dwi = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const acc_t<T> a = assign(i, c);
      acc_t<T> rho = 0;  // sum_d d_raw_kd (x_id - b_kd)
      for (std::size_t j = 0; j < d; ++j) {
        const acc_t<T> up = d_raw(c, j);
        rho += up * (static_cast<acc_t<T>>(x[i * d + j]) - cb.centers(c, j));
        dx[i * d + j] += static_cast<T>(wi * a * up);
      }
      g.d_assign(i, c) = static_cast<T>(wi * rho);
      dwi += a * rho;
    }
    if (weights) g.d_weights[i] = static_cast<T>(dwi);
  }
  for (std::size_t c = 0; c < k; ++c) {
    acc_t<T> mass = 0;  // sum_i w_i a_ik
    for (std::size_t i = 0; i < n; ++i) {
      const acc_t<T> wi = weights ? static_cast<acc_t<T>>((*weights)[i]) : acc_t<T>(1);
      mass += wi * static_cast<acc_t<T>>(assign(i, c));
    }
    for (std::size_t j = 0; j < d; ++j)
      g.d_centers(c, j) = static_cast<T>(-static_cast<acc_t<T>>(d_raw(c, j)) * mass);
  }
  return g;
}

// ---------------------------------------------------------------------------
// L2 normalization of a flat vector with a zero guard: vectors of norm below
// the guard pass through unchanged (keeps all-zero blocks zero, no NaN).

template <class T>
Tensor<T> l2_normalize(const Tensor<T>& x, T guard = T(1e-12)) {
  acc_t<T> norm2 = 0;
  for (std::size_t i = 0; i < x.numel(); ++i)
    norm2 += static_cast<acc_t<T>>(x[i]) * x[i];
  const acc_t<T> norm = std::sqrt(norm2);
  Tensor<T> y = x;
  if (norm < static_cast<acc_t<T>>(guard)) return y;
  for (std::size_t i = 0; i < y.numel(); ++i)
    y[i] = static_cast<T>(x[i] / norm);
  return y;
}

// d_x = (d_y - y <y, d_y>) / |x|, identity on the guarded branch.
template <class T>
Tensor<T> l2_normalize_backward(const Tensor<T>& x, const Tensor<T>& d_y,
                                T guard = T(1e-12)) {
  if (x.shape() != d_y.shape())
    throw ShapeError("l2_normalize_backward: upstream shape " +
                     d_y.shape_string() + " != input shape " + x.shape_string());
  acc_t<T> norm2 = 0;
  for (std::size_t i = 0; i < x.numel(); ++i)
    norm2 += static_cast<acc_t<T>>(x[i]) * x[i];
  const acc_t<T> norm = std::sqrt(norm2);
  if (norm < static_cast<acc_t<T>>(guard)) return d_y;
  acc_t<T> dot = 0;
  for (std::size_t i = 0; i < x.numel(); ++i)
    dot += (static_cast<acc_t<T>>(x[i]) / norm) * d_y[i];
  Tensor<T> d_x = Tensor<T>::zeros_like(x);
  for (std::size_t i = 0; i < x.numel(); ++i)
    d_x[i] = static_cast<T>((static_cast<acc_t<T>>(d_y[i]) -
                             (static_cast<acc_t<T>>(x[i]) / norm) * dot) /
                            norm);
  return d_x;
}

// ---------------------------------------------------------------------------
// VLAD normalization: per-cluster (intra) L2, concatenate, global L2. Rows
// and final vectors below the 1e-12 guard stay as they are.

template <class T>
PooledVector<T> normalize_vlad(const Tensor<T>& raw) {
  if (raw.rank() != 2)
    throw ShapeError("normalize_vlad: raw shape " + raw.shape_string() +
                     " is not [K,D]");
  const std::size_t k = raw.extent(0), d = raw.extent(1);
  Tensor<T> flat({k * d});
  for (std::size_t c = 0; c < k; ++c) {
    acc_t<T> norm2 = 0;
    for (std::size_t j = 0; j < d; ++j)
      norm2 += static_cast<acc_t<T>>(raw(c, j)) * raw(c, j);
    const acc_t<T> norm = std::sqrt(norm2);
    for (std::size_t j = 0; j < d; ++j)
      flat[c * d + j] = norm < acc_t<T>(1e-12)
                            ? raw(c, j)
                            : static_cast<T>(raw(c, j) / norm);
  }
  PooledVector<T> out;
  out.kind = PoolKind::vlad;
  out.v = l2_normalize(flat);
  out.normalized = true;
  return out;
}

template <class T>
Tensor<T> normalize_vlad_backward(const Tensor<T>& raw, const Tensor<T>& d_v) {
  const std::size_t k = raw.extent(0), d = raw.extent(1);
  if (d_v.rank() != 1 || d_v.extent(0) != k * d)
    throw ShapeError("normalize_vlad_backward: upstream shape " +
                     d_v.shape_string() + " != [K*D]");
  // Recompute the intra-normalized vector, backprop the global L2 first,
  // then each row's L2.
  Tensor<T> intra({k * d});
  for (std::size_t c = 0; c < k; ++c) {
    acc_t<T> norm2 = 0;
    for (std::size_t j = 0; j < d; ++j)
      norm2 += static_cast<acc_t<T>>(raw(c, j)) * raw(c, j);
    const acc_t<T> norm = std::sqrt(norm2);
    for (std::size_t j = 0; j < d; ++j)
      intra[c * d + j] = norm < acc_t<T>(1e-12)
                             ? raw(c, j)
                             : static_cast<T>(raw(c, j) / norm);
  }
  Tensor<T> d_intra = l2_normalize_backward(intra, d_v);
  Tensor<T> d_raw({k, d});
  for (std::size_t c = 0; c < k; ++c) {
    Tensor<T> row({d}), d_row({d});
    for (std::size_t j = 0; j < d; ++j) {
      row[j] = raw(c, j);
      d_row[j] = d_intra[c * d + j];
    }
    Tensor<T> d_r = l2_normalize_backward(row, d_row);
    for (std::size_t j = 0; j < d; ++j) d_raw(c, j) = d_r[j];
  }
  return d_raw;
}

// ---------------------------------------------------------------------------
// BoW: soft histogram over codewords, L2 normalized for classifier parity
// with VLAD.

template <class T>
PooledVector<T> bow_aggregate(const Tensor<T>& assign,
                              const Tensor<T>* weights = nullptr) {
  if (assign.rank() != 2)
    throw ShapeError("bow_aggregate: assignment shape " + assign.shape_string() +
                     " is not [N,K]");
  const std::size_t n = assign.extent(0), k = assign.extent(1);
  if (weights) validate_weights(*weights, n);
  Tensor<T> h({k});
  for (std::size_t c = 0; c < k; ++c) {
    acc_t<T> sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const acc_t<T> wi = weights ? static_cast<acc_t<T>>((*weights)[i]) : acc_t<T>(1);
      sum += wi * static_cast<acc_t<T>>(assign(i, c));
    }
    h(c) = static_cast<T>(sum);
  }
  PooledVector<T> out;
  out.kind = PoolKind::bow;
  out.v = l2_normalize(h);
  out.normalized = true;
  return out;
}

template <class T>
struct BowGradients {
  Tensor<T> d_assign;
  Tensor<T> d_weights;  // empty when no weights were given
};

template <class T>
BowGradients<T> bow_aggregate_backward(const Tensor<T>& assign,
                                       const Tensor<T>* weights,
                                       const Tensor<T>& d_v) {
  const std::size_t n = assign.extent(0), k = assign.extent(1);
  Tensor<T> h({k});
  for (std::size_t c = 0; c < k; ++c) {
    acc_t<T> sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const acc_t<T> wi = weights ? static_cast<acc_t<T>>((*weights)[i]) : acc_t<T>(1);
      sum += wi * static_cast<acc_t<T>>(assign(i, c));
    }
    h(c) = static_cast<T>(sum);
  }
  Tensor<T> d_h = l2_normalize_backward(h, d_v);

  BowGradients<T> g;
  g.d_assign = Tensor<T>::zeros_like(assign);
  if (weights) g.d_weights = Tensor<T>({n});
  for (std::size_t i = 0; i < n; ++i) {
    const acc_t<T> wi = weights ? static_cast<acc_t<T>>((*weights)[i]) : acc_t<T>(1);
    acc_t<T> dwi = 0;
    for (std::size_t c = 0; c < k; ++c) {
      g.d_assign(i, c) = static_cast<T>(wi * static_cast<acc_t<T>>(d_h(c)));
      dwi += static_cast<acc_t<T>>(assign(i, c)) * d_h(c);
    }
    if (weights) g.d_weights[i] = static_cast<T>(dwi);
  }
  return g;
}

// ---------------------------------------------------------------------------
// GAP: plain spatial mean, or a weighted mean when attention weights are
// given (weights already sum to 1, so no extra 1/N).

template <class T>
PooledVector<T> gap_aggregate(const Tensor<T>& features,
                              const Tensor<T>* weights = nullptr) {
  const auto [n, d] = descriptor_rows(features);
  if (weights) validate_weights(*weights, n);
  const T* x = features.data();
  Tensor<T> v({d});
  for (std::size_t j = 0; j < d; ++j) {
    acc_t<T> sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const acc_t<T> wi = weights ? static_cast<acc_t<T>>((*weights)[i])
                                  : acc_t<T>(1) / static_cast<acc_t<T>>(n);
      sum += wi * static_cast<acc_t<T>>(x[i * d + j]);
    }
    v(j) = static_cast<T>(sum);
  }
  PooledVector<T> out;
  out.kind = PoolKind::gap;
  out.v = std::move(v);
  out.normalized = false;
  return out;
}

template <class T>
struct GapGradients {
  Tensor<T> d_input;
  Tensor<T> d_weights;  // empty when no weights were given
};

template <class T>
GapGradients<T> gap_aggregate_backward(const Tensor<T>& features,
                                       const Tensor<T>* weights,
                                       const Tensor<T>& d_v) {
  const auto [n, d] = descriptor_rows(features);
  if (d_v.rank() != 1 || d_v.extent(0) != d)
    throw ShapeError("gap_aggregate_backward: upstream shape " +
                     d_v.shape_string() + " != [D]");
  GapGradients<T> g;
  g.d_input = Tensor<T>::zeros_like(features);
  if (weights) g.d_weights = Tensor<T>({n});
  const T* x = features.data();
  T* dx = g.d_input.data();
  for (std::size_t i = 0; i < n; ++i) {
    const acc_t<T> wi = weights ? static_cast<acc_t<T>>((*weights)[i])
                                : acc_t<T>(1) / static_cast<acc_t<T>>(n);
    acc_t<T> dwi = 0;
    for (std::size_t j = 0; j < d; ++j) {
      dx[i * d + j] = static_cast<T>(wi * static_cast<acc_t<T>>(d_v(j)));
      dwi += static_cast<acc_t<T>>(x[i * d + j]) * d_v(j);
    }
    if (weights) g.d_weights[i] = static_cast<T>(dwi);
  }
  return g;
}

}  // namespace attpool

#endif
