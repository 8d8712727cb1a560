#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "attpool/gradcheck.hpp"
#include "attpool/ops.hpp"
#include "attpool/rng.hpp"
#include "doctest.h"

using namespace attpool;
using TD = Tensor<double>;

TEST_CASE("tensor basics") {
  TD t({2, 3});
  CHECK(t.numel() == 6);
  t(1, 2) = 5.0;
  CHECK(t[5] == 5.0);  // row-major: last axis fastest
  CHECK(t.shape_string() == "[2,3]");
  CHECK_THROWS_AS(TD({0, 3}), ShapeError);
  CHECK(all_finite(t));
  t[0] = std::nan("");
  CHECK(!all_finite(t));
}

TEST_CASE("conv2d_1x1 forward") {
  SUBCASE("zero input gives bias everywhere") {
    TD x({3, 2, 4});
    TD w({4, 2});
    w.fill(1.5);
    TD b({2});
    b(0) = -1.0;
    b(1) = 2.0;
    TD y = conv2d_1x1(x, w, b);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 2; ++j) {
        CHECK(y(i, j, 0) == -1.0);
        CHECK(y(i, j, 1) == 2.0);
      }
  }
  SUBCASE("identity weights pass input through") {
    Rng rng(5);
    TD x({2, 2, 3});
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();
    TD w({3, 3});
    for (std::size_t i = 0; i < 3; ++i) w(i, i) = 1.0;
    TD b({3});
    TD y = conv2d_1x1(x, w, b);
    CHECK(y == x);
  }
  SUBCASE("direct arithmetic") {
    TD x({1, 1, 2});
    x[0] = 1.0;
    x[1] = 2.0;
    TD w({2, 1});
    w(0, 0) = 3.0;
    w(1, 0) = 4.0;
    TD b({1});
    b(0) = 0.5;
    CHECK(conv2d_1x1(x, w, b)[0] == doctest::Approx(11.5).epsilon(1e-15));
  }
  SUBCASE("shape mismatch names the dimension") {
    TD x({2, 2, 3});
    TD w({4, 2});
    TD b({2});
    CHECK_THROWS_AS(conv2d_1x1(x, w, b), ShapeError);
  }
}

TEST_CASE("conv2d_1x1 backward bias accumulates upstream") {
  Rng rng(11);
  TD x({3, 4, 2}), w({2, 3}), up({3, 4, 3});
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();
  for (std::size_t i = 0; i < w.numel(); ++i) w[i] = rng.normal();
  for (std::size_t i = 0; i < up.numel(); ++i) up[i] = rng.normal();
  auto g = conv2d_1x1_backward(x, w, up);
  for (std::size_t c = 0; c < 3; ++c) {
    double want = 0;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 4; ++j) want += up(i, j, c);
    CHECK(g.d_params[1](c) == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("conv2d_3x3 forward") {
  SUBCASE("delta kernel is identity") {
    Rng rng(7);
    TD x({4, 5, 1});
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();
    TD w({3, 3, 1, 1});
    w(1, 1, 0, 0) = 1.0;
    TD b({1});
    CHECK(conv2d_3x3(x, w, b) == x);
  }
  SUBCASE("all-ones kernel on constant interior") {
    TD x({5, 5, 1});
    x.fill(0.5);
    TD w({3, 3, 1, 1});
    w.fill(1.0);
    TD b({1});
    TD y = conv2d_3x3(x, w, b);
    CHECK(y(2, 2, 0) == doctest::Approx(4.5).epsilon(1e-15));
  }
  SUBCASE("2x2 input, all-ones kernel, zero pad: every corner sums all four") {
    TD x({2, 2, 1});
    x(0, 0, 0) = 1;
    x(0, 1, 0) = 2;
    x(1, 0, 0) = 3;
    x(1, 1, 0) = 4;
    TD w({3, 3, 1, 1});
    w.fill(1.0);
    TD b({1});
    TD y = conv2d_3x3(x, w, b);
    for (std::size_t i = 0; i < 4; ++i)
      CHECK(y[i] == doctest::Approx(10.0).epsilon(1e-15));
  }
}

TEST_CASE("relu and backward") {
  TD x({3});
  x(0) = -1.0;
  x(1) = 0.0;
  x(2) = 2.0;
  TD y = relu(x);
  CHECK(y(0) == 0.0);
  CHECK(y(1) == 0.0);
  CHECK(y(2) == 2.0);
  TD up({3});
  up.fill(1.0);
  TD d = relu_backward(x, up);
  CHECK(d(0) == 0.0);
  CHECK(d(1) == 0.0);  // closed at the kink
  CHECK(d(2) == 1.0);
}

TEST_CASE("maxpool2 forward") {
  SUBCASE("single window") {
    TD x({2, 2, 1});
    x[0] = 1;
    x[1] = 2;
    x[2] = 3;
    x[3] = 4;
    TD y = maxpool2(x);
    CHECK(y.extent(0) == 1);
    CHECK(y.extent(1) == 1);
    CHECK(y[0] == 4.0);
  }
  SUBCASE("constant field halves resolution") {
    TD x({4, 6, 2});
    x.fill(0.25);
    TD y = maxpool2(x);
    CHECK(y.extent(0) == 2);
    CHECK(y.extent(1) == 3);
    for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y[i] == 0.25);
  }
  SUBCASE("odd edge takes the partial window") {
    TD x({3, 1, 1});
    x(0, 0, 0) = 1;
    x(1, 0, 0) = 5;
    x(2, 0, 0) = 2;
    TD y = maxpool2(x);
    CHECK(y.extent(0) == 2);
    CHECK(y(0, 0, 0) == 5.0);
    CHECK(y(1, 0, 0) == 2.0);
  }
}

TEST_CASE("maxpool2 backward routes to the first argmax on ties") {
  TD x({2, 2, 1});
  x.fill(3.0);
  TD up({1, 1, 1});
  up[0] = 7.0;
  TD d = maxpool2_backward(x, up);
  CHECK(d(0, 0, 0) == 7.0);
  CHECK(d(0, 1, 0) == 0.0);
  CHECK(d(1, 0, 0) == 0.0);
  CHECK(d(1, 1, 0) == 0.0);
}

TEST_CASE("softmax and cross entropy") {
  SUBCASE("equal logits give ln C") {
    TD z({5});
    z.fill(0.7);
    CHECK(cross_entropy(z, 2) == doctest::Approx(std::log(5.0)).epsilon(1e-14));
  }
  SUBCASE("worked example ln(4/3)") {
    TD z({2});
    z(0) = std::log(3.0);
    z(1) = 0.0;
    CHECK(cross_entropy(z, 0) ==
          doctest::Approx(std::log(4.0 / 3.0)).epsilon(1e-14));
  }
  SUBCASE("shift invariance is exact for dyadic shifts") {
    TD z({3});
    z(0) = 0.5;
    z(1) = -1.25;
    z(2) = 2.0;
    TD zs = z;
    for (std::size_t i = 0; i < 3; ++i) zs[i] += 4.0;
    CHECK(cross_entropy(z, 1) == cross_entropy(zs, 1));
  }
  SUBCASE("softmax rows sum to one and backward is softmax minus onehot") {
    Rng rng(3);
    TD z({6});
    for (std::size_t i = 0; i < 6; ++i) z[i] = rng.normal(0.0, 2.0);
    TD p = softmax(z);
    double sum = 0;
    for (std::size_t i = 0; i < 6; ++i) sum += p[i];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    TD d = cross_entropy_backward(z, 4);
    for (std::size_t i = 0; i < 6; ++i)
      CHECK(d[i] == doctest::Approx(p[i] - (i == 4 ? 1.0 : 0.0)).epsilon(1e-12));
  }
  SUBCASE("label out of range") {
    TD z({3});
    CHECK_THROWS_AS(cross_entropy(z, 3), ValueError);
  }
}

TEST_CASE("flip_width reverses the leading axis and is an involution") {
  Rng rng(9);
  TD x({4, 3, 2});
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();
  TD f = flip_width(x);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t c = 0; c < 2; ++c)
        CHECK(f(i, j, c) == x(3 - i, j, c));
  CHECK(flip_width(f) == x);
}

TEST_CASE("gradcheck harness") {
  SUBCASE("quadratic passes") {
    TD theta({4});
    theta(0) = 0.3;
    theta(1) = -1.1;
    theta(2) = 2.0;
    theta(3) = 0.9;
    TD analytic({4});
    for (std::size_t i = 0; i < 4; ++i) analytic[i] = 2.0 * theta[i];
    auto f = [&]() {
      double s = 0;
      for (std::size_t i = 0; i < 4; ++i) s += theta[i] * theta[i];
      return s;
    };
    auto rep = gradcheck(f, {{"theta", &theta, &analytic}});
    CHECK(rep.passed);
    CHECK(rep.max_rel_err < 1e-9);
  }
  SUBCASE("a wrong gradient is caught") {
    TD theta({2});
    theta(0) = 1.0;
    theta(1) = -0.5;
    TD wrong({2});
    wrong(0) = 2.0 * theta(0);
    wrong(1) = 2.0 * theta(1) + 0.05;  // deliberate error
    auto f = [&]() { return theta(0) * theta(0) + theta(1) * theta(1); };
    auto rep = gradcheck(f, {{"theta", &theta, &wrong}});
    CHECK(!rep.passed);
  }
  SUBCASE("non-finite values are reported as failure with location") {
    TD theta({2});
    theta(0) = 1.0;
    theta(1) = 1.0;
    TD analytic({2});
    auto f = [&]() { return theta(0) > 1.0 ? std::nan("") : 0.0; };
    auto rep = gradcheck(f, {{"theta", &theta, &analytic}});
    CHECK(!rep.passed);
    REQUIRE(!rep.notes.empty());
    CHECK(rep.notes[0].find("theta") != std::string::npos);
  }
}

TEST_CASE("randomized finite-difference trials on smooth ops") {
  Rng shapes(21);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t w = 1 + shapes.index(3), h = 1 + shapes.index(3);
    const std::size_t din = 1 + shapes.index(3), dout = 1 + shapes.index(3);
    Rng rng(1000 + trial);
    TD x({w, h, din}), wt({din, dout}), b({dout}), r({w, h, dout});
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform(0.5, 1.5);
    for (std::size_t i = 0; i < wt.numel(); ++i) wt[i] = rng.uniform(0.5, 1.5);
    for (std::size_t i = 0; i < b.numel(); ++i) b[i] = rng.uniform(0.5, 1.5);
    for (std::size_t i = 0; i < r.numel(); ++i) r[i] = rng.uniform(0.5, 1.5);
    auto g = conv2d_1x1_backward(x, wt, r);
    auto f = [&]() {
      TD y = conv2d_1x1(x, wt, b);
      double s = 0;
      for (std::size_t i = 0; i < y.numel(); ++i) s += r[i] * y[i];
      return s;
    };
    auto rep = gradcheck(f, {{"x", &x, &g.d_input},
                             {"w", &wt, &g.d_params[0]},
                             {"b", &b, &g.d_params[1]}});
    CHECK(rep.passed);
  }
}

TEST_CASE("rng determinism and substreams") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng s1 = Rng::substream(42, "kmeans");
  Rng s2 = Rng::substream(42, "shuffle");
  Rng s3 = Rng::substream(42, "kmeans");
  CHECK(s1.next_u64() != s2.next_u64());
  Rng s4 = Rng::substream(42, "kmeans");
  CHECK(s3.next_u64() == s4.next_u64());

  Rng r(1);
  auto idx = r.sample_without_replacement(10, 4);
  CHECK(idx.size() == 4);
  std::vector<bool> seen(10, false);
  for (auto i : idx) {
    CHECK(i < 10);
    CHECK(!seen[i]);
    seen[i] = true;
  }
}
