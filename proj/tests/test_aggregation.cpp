#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "attpool/aggregation.hpp"
#include "attpool/rng.hpp"
#include "doctest.h"

using namespace attpool;
using TD = Tensor<double>;

namespace {

double cosine(const TD& a, const TD& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / std::sqrt(na * nb);
}

Codebook<double> tiny_codebook(Rng& rng, std::size_t k, std::size_t d,
                               double alpha) {
  TD centers({k, d});
  for (std::size_t i = 0; i < centers.numel(); ++i) centers[i] = rng.normal();
  return init_decoupled(centers, alpha);
}

}  // namespace

TEST_CASE("soft_assign") {
  SUBCASE("equidistant symmetry") {
    TD centers({2, 1});
    centers(0, 0) = 0.0;
    centers(1, 0) = 1.0;
    auto cb = init_decoupled(centers, 1.0);
    TD x({1, 1});
    x[0] = 0.5;
    TD a = soft_assign(x, cb, AssignMode::direct);
    CHECK(a(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(a(0, 1) == doctest::Approx(0.5).epsilon(1e-14));
  }
  SUBCASE("alpha 100 is effectively hard") {
    TD centers({2, 1});
    centers(0, 0) = 0.0;
    centers(1, 0) = 1.0;
    auto cb = init_decoupled(centers, 100.0);
    TD x({1, 1});
    x[0] = 0.0;
    TD a = soft_assign(x, cb, AssignMode::direct);
    CHECK(std::fabs(a(0, 0) - 1.0) < 1e-10);
    CHECK(a(0, 1) < 1e-10);
  }
  SUBCASE("rows sum to one in both modes for random inputs") {
    Rng rng(23);
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t k = 1 + rng.index(5), d = 1 + rng.index(4);
      auto cb = tiny_codebook(rng, k, d, 0.5 + 5.0 * rng.uniform());
      TD x({3, d});
      for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.normal(0.0, 2.0);
      for (auto mode : {AssignMode::direct, AssignMode::decoupled}) {
        TD a = soft_assign(x, cb, mode);
        for (std::size_t i = 0; i < 3; ++i) {
          double sum = 0;
          for (std::size_t c = 0; c < k; ++c) {
            sum += a(i, c);
            CHECK(a(i, c) >= 0.0);
            CHECK(a(i, c) <= 1.0);
          }
          CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        }
      }
    }
  }
  SUBCASE("direct equals decoupled at initialization") {
    Rng rng(29);
    double worst = 0;
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t k = 2 + rng.index(6), d = 1 + rng.index(6);
      auto cb = tiny_codebook(rng, k, d, 0.5 + 2.0 * rng.uniform());
      TD x({2, d});
      for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();
      TD a1 = soft_assign(x, cb, AssignMode::direct);
      TD a2 = soft_assign(x, cb, AssignMode::decoupled);
      for (std::size_t i = 0; i < a1.numel(); ++i)
        worst = std::max(worst, std::fabs(a1[i] - a2[i]));
    }
    CHECK(worst < 1e-10);
  }
  SUBCASE("dimension mismatch") {
    Rng rng(1);
    auto cb = tiny_codebook(rng, 2, 3, 1.0);
    TD x({2, 4});
    CHECK_THROWS_AS(soft_assign(x, cb, AssignMode::direct), ShapeError);
  }
}

TEST_CASE("vlad_aggregate") {
  SUBCASE("descriptor at the center gives zero residual") {
    TD centers({1, 2});
    centers(0, 0) = 0.7;
    centers(0, 1) = -0.3;
    auto cb = init_decoupled(centers, 1.0);
    TD x({1, 2});
    x[0] = 0.7;
    x[1] = -0.3;
    TD a = soft_assign(x, cb, AssignMode::direct);  // K=1 -> a = 1
    TD raw = vlad_aggregate(x, a, cb);
    CHECK(raw(0, 0) == 0.0);
    CHECK(raw(0, 1) == 0.0);
  }
  SUBCASE("uniform weights scale the unweighted sum by exactly 1/N") {
    Rng rng(31);
    auto cb = tiny_codebook(rng, 3, 2, 2.0);
    TD x({4, 2});  // power-of-two N keeps the scaling bit-exact
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();
    TD a = soft_assign(x, cb, AssignMode::direct);
    TD w({4});
    w.fill(0.25);
    TD raw_u = vlad_aggregate(x, a, cb);
    TD raw_w = vlad_aggregate(x, a, cb, &w);
    for (std::size_t i = 0; i < raw_u.numel(); ++i)
      CHECK(raw_w[i] == raw_u[i] * 0.25);
  }
  SUBCASE("worked example v = 1.25") {
    TD centers({1, 1});
    auto cb = init_decoupled(centers, 1.0);  // b = 0
    TD x({2, 1});
    x[0] = 1.0;
    x[1] = 2.0;
    TD a = soft_assign(x, cb, AssignMode::direct);
    TD w({2});
    w(0) = 0.75;
    w(1) = 0.25;
    TD raw = vlad_aggregate(x, a, cb, &w);
    CHECK(raw(0, 0) == 1.25);
  }
  SUBCASE("weight validation") {
    Rng rng(2);
    auto cb = tiny_codebook(rng, 2, 2, 1.0);
    TD x({3, 2});
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();
    TD a = soft_assign(x, cb, AssignMode::direct);
    TD wrong_len({2});
    wrong_len.fill(0.5);
    CHECK_THROWS_AS(vlad_aggregate(x, a, cb, &wrong_len), ValueError);
    TD negative({3});
    negative(0) = 0.5;
    negative(1) = 0.7;
    negative(2) = -0.2;
    CHECK_THROWS_AS(vlad_aggregate(x, a, cb, &negative), ValueError);
    TD unnormalized({3});
    unnormalized.fill(0.5);
    CHECK_THROWS_AS(vlad_aggregate(x, a, cb, &unnormalized), ValueError);
  }
  SUBCASE("translation invariance is exact on dyadic inputs") {
    Rng rng(37);
    const std::size_t k = 3, d = 2, n = 5;
    TD centers({k, d});
    for (std::size_t i = 0; i < centers.numel(); ++i)
      centers[i] = static_cast<double>(rng.index(2048)) / 1024.0;
    TD x({n, d});
    for (std::size_t i = 0; i < x.numel(); ++i)
      x[i] = static_cast<double>(rng.index(2048)) / 1024.0;
    auto cb = init_decoupled(centers, 2.0);
    TD a = soft_assign(x, cb, AssignMode::direct);
    TD raw = vlad_aggregate(x, a, cb);

    const double c = 0.5;
    TD xs = x;
    TD cs = centers;
    for (std::size_t i = 0; i < xs.numel(); ++i) xs[i] += c;
    for (std::size_t i = 0; i < cs.numel(); ++i) cs[i] += c;
    auto cb2 = init_decoupled(cs, 2.0);
    TD a2 = soft_assign(xs, cb2, AssignMode::direct);
    TD raw2 = vlad_aggregate(xs, a2, cb2);
    CHECK(a == a2);
    CHECK(raw == raw2);
  }
}

TEST_CASE("normalize_vlad") {
  SUBCASE("single nonzero row [3,4]") {
    TD raw({2, 2});
    raw(0, 0) = 3.0;
    raw(0, 1) = 4.0;
    auto out = normalize_vlad(raw);
    CHECK(out.kind == PoolKind::vlad);
    CHECK(out.normalized);
    CHECK(out.v.numel() == 4);
    CHECK(out.v[0] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(out.v[1] == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(out.v[2] == 0.0);
    CHECK(out.v[3] == 0.0);
  }
  SUBCASE("all-zero raw stays zero with the flag set") {
    TD raw({3, 2});
    auto out = normalize_vlad(raw);
    CHECK(out.normalized);
    for (std::size_t i = 0; i < out.v.numel(); ++i) CHECK(out.v[i] == 0.0);
    CHECK(all_finite(out.v));
  }
  SUBCASE("two identical rows give equal blocks and unit norm") {
    TD raw({2, 3});
    for (std::size_t k = 0; k < 2; ++k) {
      raw(k, 0) = 1.0;
      raw(k, 1) = -2.0;
      raw(k, 2) = 0.5;
    }
    auto out = normalize_vlad(raw);
    double norm = 0;
    for (std::size_t i = 0; i < out.v.numel(); ++i) norm += out.v[i] * out.v[i];
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-12));
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(out.v[j] == doctest::Approx(out.v[3 + j]).epsilon(1e-12));
  }
  SUBCASE("unit norm on random nonzero inputs") {
    Rng rng(41);
    for (int trial = 0; trial < 50; ++trial) {
      TD raw({1 + rng.index(5), 1 + rng.index(5)});
      for (std::size_t i = 0; i < raw.numel(); ++i)
        raw[i] = rng.normal(0.0, 3.0);
      auto out = normalize_vlad(raw);
      double norm = 0;
      for (std::size_t i = 0; i < out.v.numel(); ++i)
        norm += out.v[i] * out.v[i];
      CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("bow_aggregate") {
  SUBCASE("worked example direction [0.9, 0.1]") {
    TD a({2, 2});
    a(0, 0) = 1.0;
    a(1, 1) = 1.0;
    TD w({2});
    w(0) = 0.9;
    w(1) = 0.1;
    auto out = bow_aggregate(a, &w);
    CHECK(out.kind == PoolKind::bow);
    CHECK(out.v(0) / out.v(1) == doctest::Approx(9.0).epsilon(1e-12));
    double norm = 0;
    for (std::size_t i = 0; i < 2; ++i) norm += out.v[i] * out.v[i];
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("histogram mass before normalization: N unweighted, 1 weighted") {
    Rng rng(43);
    auto cb = tiny_codebook(rng, 4, 3, 1.0);
    TD x({6, 3});
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();
    TD a = soft_assign(x, cb, AssignMode::direct);
    // reconstruct the pre-normalization masses directly from the assignment
    double mass_u = 0, mass_w = 0;
    TD w({6});
    double total = 0;
    for (std::size_t i = 0; i < 6; ++i) {
      w[i] = 0.1 + rng.uniform();
      total += w[i];
    }
    for (std::size_t i = 0; i < 6; ++i) w[i] /= total;
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t c = 0; c < 4; ++c) {
        mass_u += a(i, c);
        mass_w += w[i] * a(i, c);
      }
    CHECK(mass_u == doctest::Approx(6.0).epsilon(1e-9));
    CHECK(mass_w == doctest::Approx(1.0).epsilon(1e-9));
    // entries of the normalized histogram are non-negative
    auto out = bow_aggregate(a, &w);
    for (std::size_t i = 0; i < out.v.numel(); ++i) CHECK(out.v[i] >= 0.0);
  }
}

TEST_CASE("gap_aggregate") {
  SUBCASE("constant map in both modes") {
    TD x({4, 3});
    for (std::size_t i = 0; i < 4; ++i) {
      x(i, 0) = 1.5;
      x(i, 1) = -2.0;
      x(i, 2) = 0.25;
    }
    TD w({4});
    w.fill(0.25);
    auto u = gap_aggregate(x);
    auto v = gap_aggregate(x, &w);
    CHECK(u.kind == PoolKind::gap);
    CHECK(!u.normalized);
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(u.v[j] == doctest::Approx(x(0, j)).epsilon(1e-15));
      CHECK(v.v[j] == doctest::Approx(x(0, j)).epsilon(1e-15));
    }
  }
  SUBCASE("uniform weights equal the plain mean exactly") {
    Rng rng(47);
    TD x({8, 5});
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();
    TD w({8});
    w.fill(0.125);
    auto u = gap_aggregate(x);
    auto v = gap_aggregate(x, &w);
    for (std::size_t j = 0; j < 5; ++j) CHECK(u.v[j] == v.v[j]);
  }
  SUBCASE("worked example 0.25*2 + 0.75*6 = 5") {
    TD x({2, 1});
    x(0, 0) = 2.0;
    x(1, 0) = 6.0;
    TD w({2});
    w(0) = 0.25;
    w(1) = 0.75;
    CHECK(gap_aggregate(x, &w).v[0] == 5.0);
  }
}

// The documented two-set construction: both sets share the signal (1,0) in
// one cell; the other cell holds distractors pointing in opposite
// directions. Unweighted VLAD is dominated by the distractors and the two
// aggregates point apart; oracle attention (all weight on the signal cell)
// makes them identical.
TEST_CASE("attention rescues per-cluster residual cosine") {
  TD centers({1, 2});  // b = 0
  auto cb = init_decoupled(centers, 1.0);
  TD xa({2, 2}), xb({2, 2});
  xa(0, 0) = 1.0;
  xa(0, 1) = 0.0;
  xa(1, 0) = -1.0;
  xa(1, 1) = 3.0;
  xb(0, 0) = 1.0;
  xb(0, 1) = 0.0;
  xb(1, 0) = -1.0;
  xb(1, 1) = -3.0;
  TD aa = soft_assign(xa, cb, AssignMode::direct);
  TD ab = soft_assign(xb, cb, AssignMode::direct);

  TD raw_a = vlad_aggregate(xa, aa, cb);
  TD raw_b = vlad_aggregate(xb, ab, cb);
  CHECK(cosine(raw_a, raw_b) < 0.0);

  TD oracle({2});
  oracle(0) = 1.0;
  oracle(1) = 0.0;
  TD wa = vlad_aggregate(xa, aa, cb, &oracle);
  TD wb = vlad_aggregate(xb, ab, cb, &oracle);
  CHECK(cosine(wa, wb) == 1.0);
}

TEST_CASE("uniform-attention reduction after normalization") {
  Rng rng(53);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 2 + rng.index(7);
    const std::size_t k = 1 + rng.index(4), d = 1 + rng.index(4);
    auto cb = tiny_codebook(rng, k, d, 0.5 + 3.0 * rng.uniform());
    TD x({n, d});
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();
    TD a = soft_assign(x, cb, AssignMode::direct);
    TD w({n});
    w.fill(1.0 / static_cast<double>(n));
    auto plain = normalize_vlad(vlad_aggregate(x, a, cb));
    auto uniform = normalize_vlad(vlad_aggregate(x, a, cb, &w));
    for (std::size_t i = 0; i < plain.v.numel(); ++i)
      CHECK(uniform.v[i] == doctest::Approx(plain.v[i]).epsilon(1e-6));
  }
}
