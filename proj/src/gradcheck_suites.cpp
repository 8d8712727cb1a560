#include <functional>
#include <optional>

#include "attpool/gradcheck.hpp"
#include "attpool/model.hpp"

// Gradient batteries. Every case builds its inputs deterministically from a
// seeded generator and re-rolls the seed until the construction clears the
// finite-difference safety margins: ReLU pre-activations and max-pool
// top-two gaps far from the probe step, attention argmax/clamp decisions
// stable, and no probed gradient component small enough to drown in
// central-difference rounding noise (components that are exactly zero by
// structure are fine: the probe reproduces them bit-exactly).

namespace attpool {

namespace {

using TD = Tensor<double>;

TD uniform_tensor(Rng& rng, std::vector<std::size_t> shape, double lo, double hi) {
  TD t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

TD normal_tensor(Rng& rng, std::vector<std::size_t> shape, double stddev) {
  TD t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, stddev);
  return t;
}

// Random projection with entries bounded away from zero, both signs.
TD signed_projection(Rng& rng, std::vector<std::size_t> shape) {
  TD t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) {
    const double mag = rng.uniform(0.5, 1.5);
    t[i] = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

double dot_all(const TD& r, const TD& t) {
  long double sum = 0;
  for (std::size_t i = 0; i < t.numel(); ++i)
    sum += static_cast<long double>(r[i]) * t[i];
  return static_cast<double>(sum);
}

bool all_abs_at_least(const TD& t, double margin) {
  for (std::size_t i = 0; i < t.numel(); ++i)
    if (std::fabs(t[i]) < margin) return false;
  return true;
}

// Per 2x2 window: either everything is non-positive (all-dead window, safe
// through the ReLU margin), or the maximum beats the runner-up by `margin`.
bool pool_gaps_ok(const TD& act, double margin) {
  const std::size_t w = act.extent(0), h = act.extent(1), d = act.extent(2);
  for (std::size_t i = 0; i < (w + 1) / 2; ++i)
    for (std::size_t j = 0; j < (h + 1) / 2; ++j)
      for (std::size_t c = 0; c < d; ++c) {
        double m1 = -1e300, m2 = -1e300;
        for (std::size_t a = 0; a < 2; ++a)
          for (std::size_t b = 0; b < 2; ++b) {
            const std::size_t x = 2 * i + a, y = 2 * j + b;
            if (x >= w || y >= h) continue;
            const double v = act(x, y, c);
            if (v > m1) {
              m2 = m1;
              m1 = v;
            } else if (v > m2) {
              m2 = v;
            }
          }
        if (m1 <= 0) continue;
        if (m2 > -1e299 && m1 - m2 < margin) return false;
      }
  return true;
}

// Stable weight-map subgradient: per-location class argmax unique by `margin`,
// per-location max bounded away from the clamp, and the normalizer clearly
// on its positive branch.
bool attention_margins_ok(const AttentionMaps<double>& maps, double margin,
                          double total_floor) {
  const std::size_t w = maps.h.extent(0), h = maps.h.extent(1),
                    c = maps.h.extent(2);
  double total = 0;
  for (std::size_t i = 0; i < w; ++i)
    for (std::size_t j = 0; j < h; ++j) {
      double m1 = -1e300, m2 = -1e300;
      for (std::size_t l = 0; l < c; ++l) {
        const double v = maps.h(i, j, l);
        if (v > m1) {
          m2 = m1;
          m1 = v;
        } else if (v > m2) {
          m2 = v;
        }
      }
      if (std::fabs(m1) < margin) return false;
      if (c > 1 && m1 - m2 < margin) return false;
      total += std::max(m1, 0.0);
    }
  return total >= total_floor;
}

// Every probed component must be exactly zero (structural) or large enough
// that finite-difference noise cannot push its relative error past tol.
bool grads_floor_ok(const std::vector<const TD*>& grads, double floor) {
  for (const TD* g : grads)
    for (std::size_t i = 0; i < g->numel(); ++i)
      if ((*g)[i] != 0.0 && std::fabs((*g)[i]) < floor) return false;
  return true;
}

bool row_norms_at_least(const TD& raw, double floor) {
  for (std::size_t k = 0; k < raw.extent(0); ++k) {
    double n2 = 0;
    for (std::size_t j = 0; j < raw.extent(1); ++j)
      n2 += raw(k, j) * raw(k, j);
    if (std::sqrt(n2) < floor) return false;
  }
  return true;
}

// Probing a normalized weight vector directly would violate its sum-to-one
// precondition, so weighted cases parameterize w = theta / sum(theta) and
// check gradients w.r.t. theta.
TD normalize_theta(const TD& theta) {
  double total = 0;
  for (std::size_t i = 0; i < theta.numel(); ++i) total += theta[i];
  TD w = TD::zeros_like(theta);
  for (std::size_t i = 0; i < theta.numel(); ++i) w[i] = theta[i] / total;
  return w;
}

TD theta_backward(const TD& theta, const TD& w, const TD& d_w) {
  double total = 0, mix = 0;
  for (std::size_t i = 0; i < theta.numel(); ++i) total += theta[i];
  for (std::size_t i = 0; i < theta.numel(); ++i) mix += d_w[i] * w[i];
  TD d_theta = TD::zeros_like(theta);
  for (std::size_t i = 0; i < theta.numel(); ++i)
    d_theta[i] = (d_w[i] - mix) / total;
  return d_theta;
}

constexpr double kGradFloor = 1e-4;
constexpr double kMargin = 1e-3;

using Attempt = std::function<std::optional<GradCheckReport>(Rng&, double)>;

GradCheckCase make_case(const char* name, std::uint64_t base_seed,
                        Attempt attempt) {
  const std::string case_name = name;
  return {case_name, [base_seed, attempt, case_name](double tol) {
            for (std::uint64_t k = 0; k < 64; ++k) {
              Rng rng(base_seed + k * 0x9E3779B97F4A7C15ull);
              if (auto rep = attempt(rng, tol)) return *rep;
            }
            GradCheckReport rep;
            rep.passed = false;
            rep.notes.push_back(case_name +
                                ": no margin-stable construction in 64 seeds");
            return rep;
          }};
}

// ---------------------------------------------------------------------------
// numerics

std::optional<GradCheckReport> try_conv1x1(Rng& rng, double tol) {
  TD x = uniform_tensor(rng, {4, 3, 5}, 0.5, 1.5);
  TD w = uniform_tensor(rng, {5, 4}, 0.5, 1.5);
  TD b = uniform_tensor(rng, {4}, 0.5, 1.5);
  TD r = uniform_tensor(rng, {4, 3, 4}, 0.5, 1.5);

  LayerGradients<double> g = conv2d_1x1_backward(x, w, r);
  if (!grads_floor_ok({&g.d_input, &g.d_params[0], &g.d_params[1]}, kGradFloor))
    return std::nullopt;
  auto f = [&]() { return dot_all(r, conv2d_1x1(x, w, b)); };
  return gradcheck(f,
                   {{"input", &x, &g.d_input},
                    {"weights", &w, &g.d_params[0]},
                    {"bias", &b, &g.d_params[1]}},
                   1e-5, tol);
}

std::optional<GradCheckReport> try_conv3x3(Rng& rng, double tol) {
  TD x = uniform_tensor(rng, {5, 4, 3}, 0.5, 1.5);
  TD w = uniform_tensor(rng, {3, 3, 3, 4}, 0.5, 1.5);
  TD b = uniform_tensor(rng, {4}, 0.5, 1.5);
  TD r = uniform_tensor(rng, {5, 4, 4}, 0.5, 1.5);

  LayerGradients<double> g = conv2d_3x3_backward(x, w, r);
  if (!grads_floor_ok({&g.d_input, &g.d_params[0], &g.d_params[1]}, kGradFloor))
    return std::nullopt;
  auto f = [&]() { return dot_all(r, conv2d_3x3(x, w, b)); };
  return gradcheck(f,
                   {{"input", &x, &g.d_input},
                    {"weights", &w, &g.d_params[0]},
                    {"bias", &b, &g.d_params[1]}},
                   1e-5, tol);
}

std::optional<GradCheckReport> try_relu_chain(Rng& rng, double tol) {
  TD x = uniform_tensor(rng, {4, 4, 3}, 0.5, 1.5);
  TD w1 = normal_tensor(rng, {3, 3, 3, 4}, 0.4);
  TD b1 = uniform_tensor(rng, {4}, -0.2, 0.2);
  TD w2 = normal_tensor(rng, {4, 3}, 0.7);
  TD b2 = uniform_tensor(rng, {3}, -0.2, 0.2);
  TD r = signed_projection(rng, {4, 4, 3});

  TD pre = conv2d_3x3(x, w1, b1);
  if (!all_abs_at_least(pre, kMargin)) return std::nullopt;
  TD act = relu(pre);

  LayerGradients<double> g2 = conv2d_1x1_backward(act, w2, r);
  TD d_pre = relu_backward(pre, g2.d_input);
  LayerGradients<double> g1 = conv2d_3x3_backward(x, w1, d_pre);
  if (!grads_floor_ok({&g1.d_input, &g1.d_params[0], &g1.d_params[1],
                       &g2.d_params[0], &g2.d_params[1]},
                      kGradFloor))
    return std::nullopt;

  auto f = [&]() {
    return dot_all(r, conv2d_1x1(relu(conv2d_3x3(x, w1, b1)), w2, b2));
  };
  return gradcheck(f,
                   {{"input", &x, &g1.d_input},
                    {"conv.weights", &w1, &g1.d_params[0]},
                    {"conv.bias", &b1, &g1.d_params[1]},
                    {"head.weights", &w2, &g2.d_params[0]},
                    {"head.bias", &b2, &g2.d_params[1]}},
                   1e-5, tol);
}

std::optional<GradCheckReport> try_maxpool_chain(Rng& rng, double tol) {
  TD x = uniform_tensor(rng, {6, 5, 3}, 0.5, 1.5);
  TD w = normal_tensor(rng, {3, 2}, 0.8);
  TD b = uniform_tensor(rng, {2}, -0.2, 0.2);
  TD r = signed_projection(rng, {3, 3, 2});

  if (!pool_gaps_ok(x, kMargin)) return std::nullopt;
  TD pooled = maxpool2(x);
  LayerGradients<double> g = conv2d_1x1_backward(pooled, w, r);
  TD d_x = maxpool2_backward(x, g.d_input);
  if (!grads_floor_ok({&d_x, &g.d_params[0], &g.d_params[1]}, kGradFloor))
    return std::nullopt;

  auto f = [&]() { return dot_all(r, conv2d_1x1(maxpool2(x), w, b)); };
  return gradcheck(f,
                   {{"input", &x, &d_x},
                    {"head.weights", &w, &g.d_params[0]},
                    {"head.bias", &b, &g.d_params[1]}},
                   1e-5, tol);
}

std::optional<GradCheckReport> try_backbone_chain(Rng& rng, double tol) {
  TD x = uniform_tensor(rng, {6, 6, 3}, 0.5, 1.5);
  TD w1 = normal_tensor(rng, {3, 3, 3, 4}, 0.4);
  TD b1 = uniform_tensor(rng, {4}, -0.2, 0.2);
  TD w2 = normal_tensor(rng, {3, 3, 4, 5}, 0.3);
  TD b2 = uniform_tensor(rng, {5}, -0.2, 0.2);
  TD r = signed_projection(rng, {3, 3, 5});

  TD pre1 = conv2d_3x3(x, w1, b1);
  if (!all_abs_at_least(pre1, kMargin)) return std::nullopt;
  TD act1 = relu(pre1);
  if (!pool_gaps_ok(act1, kMargin)) return std::nullopt;
  TD pooled = maxpool2(act1);

  LayerGradients<double> g2 = conv2d_3x3_backward(pooled, w2, r);
  TD d_act1 = maxpool2_backward(act1, g2.d_input);
  TD d_pre1 = relu_backward(pre1, d_act1);
  LayerGradients<double> g1 = conv2d_3x3_backward(x, w1, d_pre1);
  if (!grads_floor_ok({&g1.d_input, &g1.d_params[0], &g1.d_params[1],
                       &g2.d_params[0], &g2.d_params[1]},
                      kGradFloor))
    return std::nullopt;

  auto f = [&]() {
    return dot_all(
        r, conv2d_3x3(maxpool2(relu(conv2d_3x3(x, w1, b1))), w2, b2));
  };
  return gradcheck(f,
                   {{"input", &x, &g1.d_input},
                    {"conv1.weights", &w1, &g1.d_params[0]},
                    {"conv1.bias", &b1, &g1.d_params[1]},
                    {"conv2.weights", &w2, &g2.d_params[0]},
                    {"conv2.bias", &b2, &g2.d_params[1]}},
                   1e-5, tol);
}

std::optional<GradCheckReport> try_softmax_ce(Rng& rng, double tol) {
  TD logits = uniform_tensor(rng, {7}, -1.0, 1.0);
  const std::size_t label = 3;
  TD d = cross_entropy_backward(logits, label);
  if (!grads_floor_ok({&d}, 1e-3)) return std::nullopt;
  auto f = [&]() { return static_cast<double>(cross_entropy(logits, label)); };
  return gradcheck(f, {{"logits", &logits, &d}}, 1e-5, tol);
}

// ---------------------------------------------------------------------------
// aggregation

Codebook<double> random_codebook(Rng& rng, std::size_t k, std::size_t d,
                                 double alpha) {
  Codebook<double> cb;
  cb.centers = uniform_tensor(rng, {k, d}, 0.0, 1.2);
  cb.s = normal_tensor(rng, {k, d}, 0.8);
  cb.h = normal_tensor(rng, {k}, 0.5);
  cb.alpha = alpha;
  return cb;
}

std::optional<GradCheckReport> try_soft_assign_direct(Rng& rng, double tol) {
  TD x = uniform_tensor(rng, {6, 3}, 0.5, 1.5);
  Codebook<double> cb = random_codebook(rng, 4, 3, 1.5);
  TD r = signed_projection(rng, {6, 4});

  TD a = soft_assign(x, cb, AssignMode::direct);
  AssignGradients<double> g =
      soft_assign_backward(x, cb, AssignMode::direct, a, r);
  if (!grads_floor_ok({&g.d_input, &g.d_centers}, kGradFloor))
    return std::nullopt;
  auto f = [&]() { return dot_all(r, soft_assign(x, cb, AssignMode::direct)); };
  return gradcheck(f,
                   {{"input", &x, &g.d_input},
                    {"centers", &cb.centers, &g.d_centers}},
                   1e-5, tol);
}

std::optional<GradCheckReport> try_soft_assign_decoupled(Rng& rng, double tol) {
  TD x = uniform_tensor(rng, {6, 3}, 0.5, 1.5);
  Codebook<double> cb = random_codebook(rng, 4, 3, 1.5);
  TD r = signed_projection(rng, {6, 4});

  TD a = soft_assign(x, cb, AssignMode::decoupled);
  AssignGradients<double> g =
      soft_assign_backward(x, cb, AssignMode::decoupled, a, r);
  if (!grads_floor_ok({&g.d_input, &g.d_s, &g.d_h}, kGradFloor))
    return std::nullopt;
  auto f = [&]() {
    return dot_all(r, soft_assign(x, cb, AssignMode::decoupled));
  };
  return gradcheck(f,
                   {{"input", &x, &g.d_input},
                    {"s", &cb.s, &g.d_s},
                    {"h", &cb.h, &g.d_h}},
                   1e-5, tol);
}

// Shared scaffold for the VLAD chains (assign -> aggregate -> both
// normalizations), with and without the theta-parameterized weights.
std::optional<GradCheckReport> try_vlad_chain(Rng& rng, double tol,
                                              bool weighted) {
  TD x = uniform_tensor(rng, {5, 3}, 0.5, 1.5);
  Codebook<double> cb = random_codebook(rng, 4, 3, 1.5);
  TD theta = uniform_tensor(rng, {5}, 0.5, 1.5);
  TD r = signed_projection(rng, {12});

  auto forward = [&](TD* w_out) {
    TD a = soft_assign(x, cb, AssignMode::decoupled);
    TD w = weighted ? normalize_theta(theta) : TD();
    if (w_out) *w_out = w;
    TD raw = vlad_aggregate(x, a, cb, weighted ? &w : nullptr);
    return raw;
  };
  TD w;
  TD raw = forward(&w);
  if (!row_norms_at_least(raw, 0.05)) return std::nullopt;

  TD a = soft_assign(x, cb, AssignMode::decoupled);
  TD d_raw = normalize_vlad_backward(raw, r);
  VladGradients<double> gv =
      vlad_aggregate_backward(x, a, cb, weighted ? &w : nullptr, d_raw);
  AssignGradients<double> gs =
      soft_assign_backward(x, cb, AssignMode::decoupled, a, gv.d_assign);
  TD d_x = gv.d_input;
  for (std::size_t i = 0; i < d_x.numel(); ++i) d_x[i] += gs.d_input[i];
  TD d_theta;
  if (weighted) d_theta = theta_backward(theta, w, gv.d_weights);

  std::vector<const TD*> floors = {&d_x, &gv.d_centers, &gs.d_s, &gs.d_h};
  if (weighted) floors.push_back(&d_theta);
  if (!grads_floor_ok(floors, kGradFloor)) return std::nullopt;

  auto f = [&]() {
    TD raw_now = forward(nullptr);
    return dot_all(r, normalize_vlad(raw_now).v);
  };
  std::vector<GradCheckParam> params = {{"input", &x, &d_x},
                                        {"centers", &cb.centers, &gv.d_centers},
                                        {"s", &cb.s, &gs.d_s},
                                        {"h", &cb.h, &gs.d_h}};
  if (weighted) params.push_back({"theta", &theta, &d_theta});
  return gradcheck(f, params, 1e-5, tol);
}

std::optional<GradCheckReport> try_bow_chain(Rng& rng, double tol,
                                             bool weighted) {
  TD x = uniform_tensor(rng, {5, 3}, 0.5, 1.5);
  Codebook<double> cb = random_codebook(rng, 4, 3, 1.5);
  TD theta = uniform_tensor(rng, {5}, 0.5, 1.5);
  TD r = signed_projection(rng, {4});

  auto forward = [&]() {
    TD a = soft_assign(x, cb, AssignMode::decoupled);
    TD w = weighted ? normalize_theta(theta) : TD();
    return bow_aggregate(a, weighted ? &w : nullptr).v;
  };
  TD a = soft_assign(x, cb, AssignMode::decoupled);
  TD w = weighted ? normalize_theta(theta) : TD();
  BowGradients<double> gb =
      bow_aggregate_backward(a, weighted ? &w : nullptr, r);
  AssignGradients<double> gs =
      soft_assign_backward(x, cb, AssignMode::decoupled, a, gb.d_assign);
  TD d_theta;
  if (weighted) d_theta = theta_backward(theta, w, gb.d_weights);

  std::vector<const TD*> floors = {&gs.d_input, &gs.d_s, &gs.d_h};
  if (weighted) floors.push_back(&d_theta);
  if (!grads_floor_ok(floors, kGradFloor)) return std::nullopt;

  auto f = [&]() { return dot_all(r, forward()); };
  std::vector<GradCheckParam> params = {{"input", &x, &gs.d_input},
                                        {"s", &cb.s, &gs.d_s},
                                        {"h", &cb.h, &gs.d_h}};
  if (weighted) params.push_back({"theta", &theta, &d_theta});
  return gradcheck(f, params, 1e-5, tol);
}

std::optional<GradCheckReport> try_gap_chain(Rng& rng, double tol,
                                             bool weighted) {
  TD x = uniform_tensor(rng, {5, 3}, 0.5, 1.5);
  TD theta = uniform_tensor(rng, {5}, 0.5, 1.5);
  TD r = signed_projection(rng, {3});

  TD w = weighted ? normalize_theta(theta) : TD();
  GapGradients<double> gg =
      gap_aggregate_backward(x, weighted ? &w : nullptr, r);
  TD d_theta;
  if (weighted) d_theta = theta_backward(theta, w, gg.d_weights);

  std::vector<const TD*> floors = {&gg.d_input};
  if (weighted) floors.push_back(&d_theta);
  if (!grads_floor_ok(floors, kGradFloor)) return std::nullopt;

  auto f = [&]() {
    TD w_now = weighted ? normalize_theta(theta) : TD();
    return dot_all(r, gap_aggregate(x, weighted ? &w_now : nullptr).v);
  };
  std::vector<GradCheckParam> params = {{"input", &x, &gg.d_input}};
  if (weighted) params.push_back({"theta", &theta, &d_theta});
  return gradcheck(f, params, 1e-5, tol);
}

// ---------------------------------------------------------------------------
// attention

AttentionParams<double> random_attention(Rng& rng, std::size_t d, std::size_t c) {
  AttentionParams<double> p;
  p.w_ca = normal_tensor(rng, {d, 1}, 0.6);
  p.b_ca = uniform_tensor(rng, {1}, -0.2, 0.2);
  p.w_cs = normal_tensor(rng, {d, c}, 0.6);
  p.b_cs = uniform_tensor(rng, {c}, -0.2, 0.2);
  return p;
}

std::optional<GradCheckReport> try_attention_branch(Rng& rng, double tol) {
  TD x = normal_tensor(rng, {4, 4, 3}, 1.0);
  AttentionParams<double> p = random_attention(rng, 3, 3);
  const std::size_t label = 1;

  AttentionMaps<double> maps = attention_forward(x, p);
  TD logits = attention_logits(maps);
  TD d_logits = cross_entropy_backward(logits, label);
  TD d_h = attention_logits_backward(maps, d_logits);
  AttentionGradients<double> g = attention_backward(x, p, maps, d_h);
  if (!grads_floor_ok({&g.d_input, &g.d_w_ca, &g.d_b_ca, &g.d_w_cs, &g.d_b_cs},
                      kGradFloor))
    return std::nullopt;

  auto f = [&]() {
    AttentionMaps<double> m = attention_forward(x, p);
    return static_cast<double>(attention_loss(attention_logits(m), label));
  };
  return gradcheck(f,
                   {{"input", &x, &g.d_input},
                    {"ca.weights", &p.w_ca, &g.d_w_ca},
                    {"ca.bias", &p.b_ca, &g.d_b_ca},
                    {"cs.weights", &p.w_cs, &g.d_w_cs},
                    {"cs.bias", &p.b_cs, &g.d_b_cs}},
                   1e-5, tol);
}

std::optional<GradCheckReport> try_attention_weights(Rng& rng, double tol) {
  TD x = normal_tensor(rng, {4, 4, 3}, 1.0);
  AttentionParams<double> p = random_attention(rng, 3, 3);
  TD r = signed_projection(rng, {16});

  AttentionMaps<double> maps = attention_forward(x, p);
  if (!attention_margins_ok(maps, 2e-3, 0.05)) return std::nullopt;
  TD d_h = attention_weights_backward(maps, r);
  AttentionGradients<double> g = attention_backward(x, p, maps, d_h);
  if (!grads_floor_ok({&g.d_input, &g.d_w_ca, &g.d_b_ca, &g.d_w_cs, &g.d_b_cs},
                      kGradFloor))
    return std::nullopt;

  auto f = [&]() {
    AttentionMaps<double> m = attention_forward(x, p);
    return dot_all(r, attention_weights(m));
  };
  return gradcheck(f,
                   {{"input", &x, &g.d_input},
                    {"ca.weights", &p.w_ca, &g.d_w_ca},
                    {"ca.bias", &p.b_ca, &g.d_b_ca},
                    {"cs.weights", &p.w_cs, &g.d_w_cs},
                    {"cs.bias", &p.b_cs, &g.d_b_cs}},
                   1e-5, tol);
}

// ---------------------------------------------------------------------------
// model: the full joint composition on a small end-to-end network.

struct JointSetup {
  ModelState<double> state;
  TD input;
  std::size_t label = 1;
  double lambda = 0.4;
};

JointSetup random_joint(Rng& rng, InputKind input_kind, PoolKind pooling) {
  JointSetup js;
  ModelState<double>& s = js.state;
  s.input = input_kind;
  s.pooling = pooling;
  s.attention = AttentionMode::on;
  s.lambda = js.lambda;

  std::size_t d = 0;
  if (input_kind == InputKind::image) {
    s.classes = 2;
    s.feature_dim = d = 6;
    s.backbone_width = 4;
    js.input = uniform_tensor(rng, {8, 8, 3}, 0.5, 1.5);
    s.conv1_w = normal_tensor(rng, {3, 3, 3, 4}, 0.4);
    s.conv1_b = uniform_tensor(rng, {4}, -0.2, 0.2);
    s.conv2_w = normal_tensor(rng, {3, 3, 4, 6}, 0.3);
    s.conv2_b = uniform_tensor(rng, {6}, -0.2, 0.2);
  } else {
    s.classes = 3;
    s.feature_dim = d = 5;
    s.backbone_width = 0;
    js.input = normal_tensor(rng, {4, 4, 5}, 1.0);
  }
  s.att = random_attention(rng, d, s.classes);

  std::size_t k = 0;
  if (pooling != PoolKind::gap) {
    k = input_kind == InputKind::image ? 2 : 3;
    s.cb.centers = uniform_tensor(rng, {k, d}, -0.5, 0.5);
    s.cb.s = normal_tensor(rng, {k, d}, 0.6);
    s.cb.h = normal_tensor(rng, {k}, 0.3);
    s.cb.alpha = 2.0;
  }
  const std::size_t pooled_len =
      pooling == PoolKind::vlad ? d * k : pooling == PoolKind::bow ? k : d;
  s.cls_w = normal_tensor(rng, {pooled_len, s.classes}, 0.6);
  s.cls_b = uniform_tensor(rng, {s.classes}, -0.2, 0.2);
  return js;
}

std::optional<GradCheckReport> try_joint(Rng& rng, double tol,
                                         InputKind input_kind, PoolKind pooling) {
  JointSetup js = random_joint(rng, input_kind, pooling);
  ModelState<double>& s = js.state;

  JointCache<double> cache = forward_joint(s, js.input);
  if (input_kind == InputKind::image) {
    if (!all_abs_at_least(cache.pre1, kMargin)) return std::nullopt;
    if (!pool_gaps_ok(cache.act1, kMargin)) return std::nullopt;
  }
  if (!attention_margins_ok(cache.maps, 5e-3, 0.05)) return std::nullopt;
  if (pooling == PoolKind::vlad && !row_norms_at_least(cache.raw, 0.05))
    return std::nullopt;

  JointGradients<double> grads = backward_joint(s, cache, js.label, js.lambda);
  std::vector<const TD*> floor_list = {&grads.d_input};
  for (const auto& g : grads.params) floor_list.push_back(&g);
  for (const TD* g : floor_list)
    for (std::size_t i = 0; i < g->numel(); ++i)
      if ((*g)[i] != 0.0 && std::fabs((*g)[i]) < kGradFloor)
        return std::nullopt;

  auto f = [&]() {
    JointCache<double> c = forward_joint(s, js.input);
    return joint_loss(c.cls_logits, c.att_logits, js.label, js.lambda).total;
  };
  std::vector<GradCheckParam> params;
  auto refs = param_refs(s);
  for (std::size_t i = 0; i < refs.size(); ++i)
    params.push_back({refs[i].name, refs[i].tensor, &grads.params[i]});
  params.push_back({"input", &js.input, &grads.d_input});
  return gradcheck(f, params, 1e-5, tol);
}

}  // namespace

std::vector<GradCheckCase> gradcheck_suite(const std::string& module) {
  std::vector<GradCheckCase> cases;
  if (module == "numerics") {
    cases.push_back(make_case("conv1x1", 101, try_conv1x1));
    cases.push_back(make_case("conv3x3", 202, try_conv3x3));
    cases.push_back(make_case("relu_chain", 303, try_relu_chain));
    cases.push_back(make_case("maxpool_chain", 404, try_maxpool_chain));
    cases.push_back(make_case("backbone_chain", 505, try_backbone_chain));
    cases.push_back(make_case("softmax_ce", 606, try_softmax_ce));
  } else if (module == "aggregation") {
    cases.push_back(make_case("soft_assign_direct", 711, try_soft_assign_direct));
    cases.push_back(
        make_case("soft_assign_decoupled", 822, try_soft_assign_decoupled));
    cases.push_back(make_case("vlad_unweighted", 933, [](Rng& rng, double tol) {
      return try_vlad_chain(rng, tol, false);
    }));
    cases.push_back(make_case("vlad_weighted", 1044, [](Rng& rng, double tol) {
      return try_vlad_chain(rng, tol, true);
    }));
    cases.push_back(make_case("bow_unweighted", 1155, [](Rng& rng, double tol) {
      return try_bow_chain(rng, tol, false);
    }));
    cases.push_back(make_case("bow_weighted", 1266, [](Rng& rng, double tol) {
      return try_bow_chain(rng, tol, true);
    }));
    cases.push_back(make_case("gap_unweighted", 1377, [](Rng& rng, double tol) {
      return try_gap_chain(rng, tol, false);
    }));
    cases.push_back(make_case("gap_weighted", 1488, [](Rng& rng, double tol) {
      return try_gap_chain(rng, tol, true);
    }));
  } else if (module == "attention") {
    cases.push_back(make_case("branch_loss", 1599, try_attention_branch));
    cases.push_back(make_case("weights_path", 1700, try_attention_weights));
  } else if (module == "model") {
    cases.push_back(make_case("joint_image_vlad", 1811, [](Rng& rng, double tol) {
      return try_joint(rng, tol, InputKind::image, PoolKind::vlad);
    }));
    cases.push_back(
        make_case("joint_featuremap_vlad", 1922, [](Rng& rng, double tol) {
          return try_joint(rng, tol, InputKind::featuremap, PoolKind::vlad);
        }));
    cases.push_back(make_case("joint_image_bow", 2033, [](Rng& rng, double tol) {
      return try_joint(rng, tol, InputKind::image, PoolKind::bow);
    }));
    cases.push_back(make_case("joint_image_gap", 2144, [](Rng& rng, double tol) {
      return try_joint(rng, tol, InputKind::image, PoolKind::gap);
    }));
  } else {
    throw ValueError("gradcheck_suite: unknown module '" + module + "'");
  }
  return cases;
}

}  // namespace attpool
