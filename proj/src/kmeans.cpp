#include "attpool/codebook.hpp"

#include <cmath>
#include <limits>

#include "attpool/rng.hpp"

namespace attpool {

namespace {

double sq_dist(const double* a, const double* b, std::size_t d) {
  double s = 0;
  for (std::size_t j = 0; j < d; ++j) {
    const double t = a[j] - b[j];
    s += t * t;
  }
  return s;
}

}  // namespace

Tensor<double> kmeans_fit(const Tensor<double>& descriptors, std::size_t k,
                          std::uint64_t seed, std::size_t max_iters, double tol,
                          std::vector<double>* inertia_history) {
  const auto [n, d] = descriptor_rows(descriptors);
  if (k < 1) throw ValueError("kmeans_fit: k must be >= 1");
  if (n < k)
    throw ValueError("kmeans_fit: " + std::to_string(n) +
                     " descriptors < k = " + std::to_string(k));
  if (!all_finite(descriptors))
    throw ValueError("kmeans_fit: non-finite descriptor");

  const double* pts = descriptors.data();
  Rng rng = Rng::substream(seed, "kmeans");

  // k-means++ seeding: first center uniform, then proportional to the
  // squared distance to the nearest chosen center.
  Tensor<double> centers({k, d});
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  {
    const std::size_t first = rng.index(n);
    for (std::size_t j = 0; j < d; ++j) centers(0, j) = pts[first * d + j];
    for (std::size_t i = 0; i < n; ++i)
      nearest[i] = sq_dist(pts + i * d, &centers(0, 0), d);
    for (std::size_t c = 1; c < k; ++c) {
      double total = 0;
      for (std::size_t i = 0; i < n; ++i) total += nearest[i];
      std::size_t pick = 0;
      if (total > 0) {
        const double target = rng.uniform() * total;
        double run = 0;
        pick = n - 1;  // guards against rounding at the top end
        for (std::size_t i = 0; i < n; ++i) {
          run += nearest[i];
          if (run >= target) {
            pick = i;
            break;
          }
        }
      } else {
        pick = rng.index(n);  // all points coincide with a center
      }
      for (std::size_t j = 0; j < d; ++j) centers(c, j) = pts[pick * d + j];
      for (std::size_t i = 0; i < n; ++i)
        nearest[i] = std::min(nearest[i], sq_dist(pts + i * d, &centers(c, 0), d));
    }
  }

  std::vector<std::size_t> assign(n, 0);
  std::vector<double> dist(n, 0);
  auto assign_all = [&]() {
    double inertia = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = sq_dist(pts + i * d, &centers(0, 0), d);
      std::size_t arg = 0;
      for (std::size_t c = 1; c < k; ++c) {
        const double dd = sq_dist(pts + i * d, &centers(c, 0), d);
        if (dd < best) {
          best = dd;
          arg = c;
        }
      }
      assign[i] = arg;
      dist[i] = best;
      inertia += best;
    }
    return inertia;
  };

  double inertia = assign_all();
  if (inertia_history) inertia_history->push_back(inertia);

  std::vector<double> sums(k * d);
  std::vector<std::size_t> counts(k);
  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), std::size_t(0));
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[assign[i]];
      for (std::size_t j = 0; j < d; ++j) sums[assign[i] * d + j] += pts[i * d + j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        // Re-seed an empty cluster to the point farthest from its center.
        std::size_t far = 0;
        double far_d = -1;
        for (std::size_t i = 0; i < n; ++i)
          if (dist[i] > far_d) {
            far_d = dist[i];
            far = i;
          }
        for (std::size_t j = 0; j < d; ++j) centers(c, j) = pts[far * d + j];
        dist[far] = 0;  // avoid picking the same point for another empty cluster
      } else {
        for (std::size_t j = 0; j < d; ++j)
          centers(c, j) = sums[c * d + j] / static_cast<double>(counts[c]);
      }
    }
    const double next = assign_all();
    if (inertia_history) inertia_history->push_back(next);
    const double rel = std::fabs(inertia - next) / std::max(inertia, 1e-12);
    inertia = next;
    if (rel < tol) break;
  }
  return centers;
}

}  // namespace attpool
