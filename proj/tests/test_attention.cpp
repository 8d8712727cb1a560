#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <fstream>

#include "attpool/attention.hpp"
#include "attpool/rng.hpp"
#include "doctest.h"

using namespace attpool;
using TD = Tensor<double>;

namespace {

AttentionParams<double> random_params(Rng& rng, std::size_t d, std::size_t c) {
  AttentionParams<double> p;
  p.w_ca = TD({d, 1});
  p.b_ca = TD({1});
  p.w_cs = TD({d, c});
  p.b_cs = TD({c});
  for (std::size_t i = 0; i < p.w_ca.numel(); ++i) p.w_ca[i] = rng.normal();
  for (std::size_t i = 0; i < p.w_cs.numel(); ++i) p.w_cs[i] = rng.normal();
  return p;
}

}  // namespace

TEST_CASE("attention_forward") {
  SUBCASE("zero input and biases give zero maps") {
    Rng rng(3);
    auto p = random_params(rng, 3, 4);
    TD x({2, 2, 3});
    auto maps = attention_forward(x, p);
    for (std::size_t i = 0; i < maps.h_ca.numel(); ++i)
      CHECK(maps.h_ca[i] == 0.0);
    for (std::size_t i = 0; i < maps.h.numel(); ++i) CHECK(maps.h[i] == 0.0);
  }
  SUBCASE("class column equal to the agnostic filter squares the map") {
    Rng rng(5);
    auto p = random_params(rng, 4, 2);
    for (std::size_t d = 0; d < 4; ++d) p.w_cs(d, 0) = p.w_ca(d, 0);
    p.b_cs(0) = p.b_ca(0);
    TD x({3, 2, 4});
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();
    auto maps = attention_forward(x, p);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 2; ++j)
        CHECK(maps.h(i, j, 0) ==
              doctest::Approx(maps.h_ca(i, j) * maps.h_ca(i, j))
                  .epsilon(1e-12));
  }
  SUBCASE("worked example H = 6") {
    AttentionParams<double> p;
    p.w_ca = TD({2, 1});
    p.w_ca(0, 0) = 1.0;
    p.w_ca(1, 0) = 1.0;
    p.b_ca = TD({1});
    p.w_cs = TD({2, 1});
    p.w_cs(0, 0) = 2.0;
    p.w_cs(1, 0) = 0.0;
    p.b_cs = TD({1});
    TD x({1, 1, 2});
    x[0] = 1.0;
    x[1] = 2.0;
    auto maps = attention_forward(x, p);
    CHECK(maps.h_ca(0, 0) == 3.0);
    CHECK(maps.h_cs(0, 0, 0) == 2.0);
    CHECK(maps.h(0, 0, 0) == 6.0);
  }
}

TEST_CASE("attention_logits") {
  SUBCASE("constant combined map gives that constant") {
    AttentionMaps<double> maps;
    maps.h = TD({2, 3, 2});
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        maps.h(i, j, 0) = 0.4;
        maps.h(i, j, 1) = -1.25;
      }
    TD logits = attention_logits(maps);
    CHECK(logits(0) == doctest::Approx(0.4).epsilon(1e-14));
    CHECK(logits(1) == doctest::Approx(-1.25).epsilon(1e-14));
  }
  SUBCASE("single nonzero cell divides by N") {
    AttentionMaps<double> maps;
    maps.h = TD({4, 2, 1});
    maps.h(2, 1, 0) = 3.0;
    CHECK(attention_logits(maps)(0) == doctest::Approx(3.0 / 8.0).epsilon(1e-14));
  }
  SUBCASE("2x1 map [3, -1] averages to 1") {
    AttentionMaps<double> maps;
    maps.h = TD({2, 1, 1});
    maps.h(0, 0, 0) = 3.0;
    maps.h(1, 0, 0) = -1.0;
    CHECK(attention_logits(maps)(0) == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("attention_loss") {
  TD logits({3});
  logits.fill(0.2);
  CHECK(attention_loss(logits, 1) ==
        doctest::Approx(std::log(3.0)).epsilon(1e-14));
  TD two({2});
  two(0) = std::log(3.0);
  two(1) = 0.0;
  CHECK(attention_loss(two, 0) ==
        doctest::Approx(std::log(4.0 / 3.0)).epsilon(1e-14));
  CHECK_THROWS_AS(attention_loss(two, 2), ValueError);
}

TEST_CASE("attention_weights") {
  SUBCASE("equal positive maps give uniform weights") {
    AttentionMaps<double> maps;
    maps.h = TD({2, 2, 3});
    maps.h.fill(0.7);
    TD w = attention_weights(maps);
    for (std::size_t i = 0; i < 4; ++i)
      CHECK(w[i] == doctest::Approx(0.25).epsilon(1e-14));
  }
  SUBCASE("single positive location is one-hot") {
    AttentionMaps<double> maps;
    maps.h = TD({2, 2, 2});
    maps.h.fill(-1.0);
    maps.h(1, 0, 1) = 2.5;
    TD w = attention_weights(maps);
    for (std::size_t i = 0; i < 4; ++i) {
      // location index = x*H + y: (1,0) -> 2
      CHECK(w[i] == (i == 2 ? 1.0 : 0.0));
    }
  }
  SUBCASE("worked example maxima {3,1} -> [0.75, 0.25]") {
    AttentionMaps<double> maps;
    maps.h = TD({2, 1, 2});
    maps.h(0, 0, 0) = 3.0;
    maps.h(0, 0, 1) = -2.0;
    maps.h(1, 0, 0) = 0.5;
    maps.h(1, 0, 1) = 1.0;
    TD w = attention_weights(maps);
    CHECK(w(0) == doctest::Approx(0.75).epsilon(1e-14));
    CHECK(w(1) == doctest::Approx(0.25).epsilon(1e-14));
  }
  SUBCASE("all non-positive maps fall back to uniform") {
    AttentionMaps<double> maps;
    maps.h = TD({2, 2, 2});
    maps.h.fill(-0.5);
    TD w = attention_weights(maps);
    for (std::size_t i = 0; i < 4; ++i)
      CHECK(w[i] == doctest::Approx(0.25).epsilon(1e-14));
  }
  SUBCASE("weights sum to one on random maps") {
    Rng rng(61);
    for (int trial = 0; trial < 50; ++trial) {
      AttentionMaps<double> maps;
      maps.h = TD({1 + rng.index(4), 1 + rng.index(4), 1 + rng.index(3)});
      for (std::size_t i = 0; i < maps.h.numel(); ++i)
        maps.h[i] = rng.normal();
      TD w = attention_weights(maps);
      double sum = 0;
      for (std::size_t i = 0; i < w.numel(); ++i) {
        CHECK(w[i] >= 0.0);
        sum += w[i];
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
  SUBCASE("positive scaling leaves weights unchanged exactly") {
    Rng rng(67);
    AttentionMaps<double> maps;
    maps.h = TD({3, 3, 2});
    for (std::size_t i = 0; i < maps.h.numel(); ++i) maps.h[i] = rng.normal();
    TD w1 = attention_weights(maps);
    for (std::size_t i = 0; i < maps.h.numel(); ++i) maps.h[i] *= 2.0;
    TD w2 = attention_weights(maps);
    CHECK(w1 == w2);
    // and on the fallback branch
    AttentionMaps<double> neg;
    neg.h = TD({2, 2, 1});
    neg.h.fill(-1.0);
    TD f1 = attention_weights(neg);
    for (std::size_t i = 0; i < neg.h.numel(); ++i) neg.h[i] *= 2.0;
    TD f2 = attention_weights(neg);
    CHECK(f1 == f2);
  }
}

TEST_CASE("attention_weights_backward edge behavior") {
  SUBCASE("fallback branch has zero gradient") {
    AttentionMaps<double> maps;
    maps.h = TD({2, 2, 2});
    maps.h.fill(-0.5);
    TD up({4});
    up.fill(1.0);
    TD d = attention_weights_backward(maps, up);
    for (std::size_t i = 0; i < d.numel(); ++i) CHECK(d[i] == 0.0);
  }
  SUBCASE("clamped locations receive zero gradient") {
    AttentionMaps<double> maps;
    maps.h = TD({3, 1, 1});
    maps.h(0, 0, 0) = 2.0;
    maps.h(1, 0, 0) = 1.0;
    maps.h(2, 0, 0) = -3.0;  // clamped
    TD up({3});
    up(0) = 1.0;  // r = [2,1,0]: w0 moves against w1, so both grads are live
    TD d = attention_weights_backward(maps, up);
    CHECK(d(2, 0, 0) == 0.0);
    CHECK(d(0, 0, 0) != 0.0);
    CHECK(d(1, 0, 0) != 0.0);
  }
}

TEST_CASE("pgm export") {
  Tensor<float> map({3, 2});
  map(0, 0) = 0.0;
  map(1, 0) = 1.0;
  map(2, 0) = 2.0;
  map(0, 1) = 3.0;
  map(1, 1) = 4.0;
  map(2, 1) = 10.0;
  const std::string path = "test_map.pgm";
  write_pgm(path, map);
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  CHECK(magic == "P5");
  CHECK(w == 3);
  CHECK(h == 2);
  CHECK(maxval == 255);
  in.get();  // single whitespace after the header
  std::vector<unsigned char> pix(6);
  in.read(reinterpret_cast<char*>(pix.data()), 6);
  CHECK(in.gcount() == 6);
  // min-max scaling: min -> 0, max -> 255; raster order is rows of y
  CHECK(pix[0] == 0);    // (0,0)
  CHECK(pix[5] == 255);  // (2,1)
  std::remove(path.c_str());
}
