#ifndef ATTPOOL_CODEBOOK_HPP
#define ATTPOOL_CODEBOOK_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "attpool/ops.hpp"
#include "attpool/tensor.hpp"

namespace attpool {

// Codeword centers plus the decoupled assignment parameters. At init
// s = 2*alpha*b and h = -alpha*|b|^2 (the decoupled form of the squared
// distance softmax); after that s, h and centers train independently.
// alpha stays fixed.
template <class T>
struct Codebook {
  Tensor<T> centers;  // [K,D]
  Tensor<T> s;        // [K,D]
  Tensor<T> h;        // [K]
  T alpha = T(100);

  std::size_t k() const { return centers.extent(0); }
  std::size_t d() const { return centers.extent(1); }
};

template <class T>
Codebook<T> init_decoupled(const Tensor<T>& centers, T alpha) {
  if (centers.rank() != 2)
    throw ShapeError("init_decoupled: centers shape " + centers.shape_string() +
                     " is not [K,D]");
  if (!(alpha > T(0))) throw ValueError("init_decoupled: alpha must be positive");
  const std::size_t k = centers.extent(0), d = centers.extent(1);
  Codebook<T> cb;
  cb.centers = centers;
  cb.s = Tensor<T>({k, d});
  cb.h = Tensor<T>({k});
  cb.alpha = alpha;
  for (std::size_t i = 0; i < k; ++i) {
    acc_t<T> norm2 = 0;
    for (std::size_t j = 0; j < d; ++j) {
      cb.s(i, j) = T(2) * alpha * centers(i, j);
      norm2 += static_cast<acc_t<T>>(centers(i, j)) * centers(i, j);
    }
    cb.h(i) = static_cast<T>(-static_cast<acc_t<T>>(alpha) * norm2);
  }
  return cb;
}

template <class To, class From>
Codebook<To> codebook_cast(const Codebook<From>& cb) {
  Codebook<To> out;
  out.centers = tensor_cast<To>(cb.centers);
  out.s = tensor_cast<To>(cb.s);
  out.h = tensor_cast<To>(cb.h);
  out.alpha = static_cast<To>(cb.alpha);
  return out;
}

// Lloyd's algorithm with k-means++ seeding. Deterministic for a given seed;
// empty clusters are re-seeded to the point farthest from its assigned
// center. Stops when the relative inertia change drops below tol or after
// max_iters rounds. If inertia_history is given it receives the inertia
// after seeding and after every Lloyd update.
Tensor<double> kmeans_fit(const Tensor<double>& descriptors, std::size_t k,
                          std::uint64_t seed, std::size_t max_iters = 100,
                          double tol = 1e-6,
                          std::vector<double>* inertia_history = nullptr);

}  // namespace attpool

#endif
