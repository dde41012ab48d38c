// Copyright (c) 2026 rgalign contributors
// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "rgalign/autodiff.hpp"
#include "rgalign/gradcheck.hpp"
#include "rgalign/optim.hpp"
#include "rgalign/rng.hpp"

using namespace rgalign;
using diff::Dense;
using diff::ParamStore;
using diff::Tape;
using diff::Var;
using Catch::Approx;

namespace {

Dense random_vec(std::size_t n, rng::Xoshiro256pp& gen, double scale = 1.0) {
  Dense v(n, 1);
  for (auto& x : v.data) x = scale * gen.gaussian();
  return v;
}

Dense random_mat(std::size_t r, std::size_t c, rng::Xoshiro256pp& gen,
                 double scale = 0.5) {
  Dense m(r, c);
  for (auto& x : m.data) x = scale * gen.gaussian();
  return m;
}

// Literal-formula attention oracle, independent of the Tape composition.
std::vector<double> brute_self_attention(const std::vector<std::vector<double>>& seq) {
  const std::size_t l = seq.size();
  const std::size_t d = seq[0].size();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> pooled(d, 0.0);
  for (std::size_t i = 0; i < l; ++i) {
    std::vector<double> scores(l);
    for (std::size_t j = 0; j < l; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += seq[i][k] * seq[j][k];
      scores[j] = s * scale;
    }
    const auto w = diff::softmax(scores);
    for (std::size_t j = 0; j < l; ++j)
      for (std::size_t k = 0; k < d; ++k) pooled[k] += w[j] * seq[j][k] / l;
  }
  return pooled;
}

}  // namespace

TEST_CASE("softmax basics") {
  REQUIRE(diff::softmax({0.0, 0.0}) == std::vector<double>{0.5, 0.5});
  const auto thirds = diff::softmax({1.0, 1.0, 1.0});
  for (double v : thirds) REQUIRE(v == Approx(1.0 / 3.0).margin(1e-15));
  const auto two_thirds = diff::softmax({std::log(2.0), 0.0});
  REQUIRE(two_thirds[0] == Approx(2.0 / 3.0).margin(1e-12));
  REQUIRE(two_thirds[1] == Approx(1.0 / 3.0).margin(1e-12));
  REQUIRE_THROWS_WITH(diff::softmax({}), Catch::Matchers::ContainsSubstring("empty logits"));
}

TEST_CASE("softmax sums to one and is shift invariant") {
  rng::Xoshiro256pp gen(17);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + gen.below(8);
    std::vector<double> x(n);
    for (auto& v : x) v = gen.uniform(-30.0, 30.0);
    const auto p = diff::softmax(x);
    double sum = 0.0;
    for (double v : p) {
      sum += v;
      REQUIRE(v > 0.0);
      REQUIRE(v < 1.0 + 1e-12);
    }
    REQUIRE(sum == Approx(1.0).margin(1e-12));

    std::vector<double> shifted = x;
    const double c = gen.uniform(-5.0, 5.0);
    for (auto& v : shifted) v += c;
    const auto q = diff::softmax(shifted);
    for (std::size_t i = 0; i < n; ++i)
      REQUIRE(std::abs(p[i] - q[i]) < 1e-12);
  }
}

TEST_CASE("kl_divergence closed forms") {
  REQUIRE(diff::kl_divergence({0.3, 0.7}, {0.3, 0.7}) == Approx(0.0).margin(1e-15));
  REQUIRE(diff::kl_divergence({1.0, 0.0}, {0.5, 0.5}) ==
          Approx(std::log(2.0)).margin(1e-12));
  // 0.5 ln(0.5/0.9) + 0.5 ln(0.5/0.1) = ln(5/3)
  REQUIRE(diff::kl_divergence({0.5, 0.5}, {0.9, 0.1}) ==
          Approx(std::log(5.0 / 3.0)).margin(1e-12));
  REQUIRE_THROWS(diff::kl_divergence({1.0}, {0.5, 0.5}));
  REQUIRE_THROWS(diff::kl_divergence({0.5, 0.5}, {1.0, 0.0}));
}

TEST_CASE("kl_divergence is nonnegative, zero iff equal") {
  rng::Xoshiro256pp gen(23);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + gen.below(6);
    std::vector<double> a(n), b(n);
    for (auto& v : a) v = gen.uniform(-3.0, 3.0);
    for (auto& v : b) v = gen.uniform(-3.0, 3.0);
    const auto p = diff::softmax(a);
    const auto q = diff::softmax(b);
    const double kl = diff::kl_divergence(p, q);
    REQUIRE(kl >= -1e-12);
    REQUIRE(diff::kl_divergence(p, p) == Approx(0.0).margin(1e-12));
    bool equal = true;
    for (std::size_t i = 0; i < n; ++i)
      if (std::abs(p[i] - q[i]) > 1e-12) equal = false;
    if (!equal) REQUIRE(kl > 0.0);
  }
}

TEST_CASE("cosine_sim basics and properties") {
  REQUIRE(diff::cosine_sim({1.0, 0.0}, {1.0, 0.0}) == Approx(1.0));
  REQUIRE(diff::cosine_sim({1.0, 0.0}, {0.0, 1.0}) == Approx(0.0).margin(1e-15));
  REQUIRE(diff::cosine_sim({1.0, 1.0}, {1.0, 0.0}) ==
          Approx(1.0 / std::sqrt(2.0)).margin(1e-12));
  REQUIRE_THROWS_WITH(diff::cosine_sim({0.0, 0.0}, {1.0, 0.0}),
                      Catch::Matchers::ContainsSubstring("degenerate"));

  rng::Xoshiro256pp gen(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> a(4), b(4);
    for (auto& v : a) v = gen.gaussian();
    for (auto& v : b) v = gen.gaussian();
    const double c1 = diff::cosine_sim(a, b);
    REQUIRE(c1 >= -1.0 - 1e-12);
    REQUIRE(c1 <= 1.0 + 1e-12);
    REQUIRE(diff::cosine_sim(b, a) == Approx(c1).margin(1e-12));
    const double alpha = gen.uniform(0.1, 9.0);
    const double beta = gen.uniform(0.1, 9.0);
    std::vector<double> sa = a, sb = b;
    for (auto& v : sa) v *= alpha;
    for (auto& v : sb) v *= beta;
    REQUIRE(diff::cosine_sim(sa, sb) == Approx(c1).margin(1e-12));
  }
}

TEST_CASE("affine forward fixtures") {
  Tape t;
  SECTION("identity") {
    Var W = t.constant(Dense(2, 2, {1, 0, 0, 1}));
    Var b = t.constant(Dense(2, 1, {0, 0}));
    Var x = t.constant(Dense::vec({3.0, 4.0}));
    const Dense& y = t.value(t.affine(W, b, x));
    REQUIRE(y[0] == 3.0);
    REQUIRE(y[1] == 4.0);
  }
  SECTION("zero weights pass through bias") {
    Var W = t.constant(Dense(2, 2));
    Var b = t.constant(Dense::vec({1.0, 2.0}));
    Var x = t.constant(Dense::vec({-9.0, 100.0}));
    const Dense& y = t.value(t.affine(W, b, x));
    REQUIRE(y[0] == 1.0);
    REQUIRE(y[1] == 2.0);
  }
  SECTION("hand multiply") {
    Var W = t.constant(Dense(2, 2, {1, 2, 0, 1}));
    Var b = t.constant(Dense::vec({0.0, 0.0}));
    Var x = t.constant(Dense::vec({1.0, 1.0}));
    const Dense& y = t.value(t.affine(W, b, x));
    REQUIRE(y[0] == 3.0);
    REQUIRE(y[1] == 1.0);
  }
  SECTION("shape mismatch") {
    Var W = t.constant(Dense(2, 3));
    Var b = t.constant(Dense::vec({0.0, 0.0}));
    Var x = t.constant(Dense::vec({1.0, 1.0}));
    REQUIRE_THROWS(t.affine(W, b, x));
  }
}

TEST_CASE("self attention fixtures") {
  SECTION("single element returns the vector unchanged") {
    const Dense v = Dense::vec({0.3, -1.2, 0.8});
    const Dense out = diff::self_attention_pooled({v});
    for (std::size_t i = 0; i < 3; ++i) REQUIRE(out[i] == v[i]);
  }
  SECTION("identical vectors are a fixed point") {
    const Dense v = Dense::vec({0.5, 0.25});
    const Dense out = diff::self_attention_pooled({v, v, v});
    REQUIRE(out[0] == Approx(0.5).margin(1e-14));
    REQUIRE(out[1] == Approx(0.25).margin(1e-14));
  }
  SECTION("orthogonal pair matches the brute-force oracle") {
    const std::vector<std::vector<double>> seq = {{1.0, 0.0}, {0.0, 1.0}};
    const auto expect = brute_self_attention(seq);
    const Dense out =
        diff::self_attention_pooled({Dense::vec({1.0, 0.0}), Dense::vec({0.0, 1.0})});
    REQUIRE(out[0] == Approx(expect[0]).margin(1e-14));
    REQUIRE(out[1] == Approx(expect[1]).margin(1e-14));
  }
  SECTION("random sequences match the oracle") {
    rng::Xoshiro256pp gen(31);
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t l = 2 + gen.below(4), d = 2 + gen.below(3);
      std::vector<std::vector<double>> seq(l, std::vector<double>(d));
      std::vector<Dense> dseq;
      for (auto& row : seq) {
        for (auto& x : row) x = gen.gaussian();
        dseq.push_back(Dense::vec(row));
      }
      const auto expect = brute_self_attention(seq);
      const Dense out = diff::self_attention_pooled(dseq);
      for (std::size_t k = 0; k < d; ++k)
        REQUIRE(out[k] == Approx(expect[k]).margin(1e-12));
    }
  }
  SECTION("permutation invariant after pooling") {
    rng::Xoshiro256pp gen(37);
    std::vector<Dense> seq;
    for (int i = 0; i < 5; ++i) seq.push_back(random_vec(3, gen));
    const Dense base = diff::self_attention_pooled(seq);
    std::vector<Dense> perm = {seq[3], seq[0], seq[4], seq[2], seq[1]};
    const Dense out = diff::self_attention_pooled(perm);
    for (std::size_t k = 0; k < 3; ++k)
      REQUIRE(std::abs(out[k] - base[k]) < 1e-10);
  }
  SECTION("empty errors") {
    REQUIRE_THROWS(diff::self_attention_pooled({}));
  }
}

TEST_CASE("cross attention fixtures") {
  SECTION("single pair returns the value vector") {
    const Dense a = Dense::vec({2.0, -1.0});
    const Dense b = Dense::vec({0.1, 0.9});
    const Dense out = diff::cross_attention_pooled({a}, {b});
    REQUIRE(out[0] == Approx(0.1).margin(1e-14));
    REQUIRE(out[1] == Approx(0.9).margin(1e-14));
  }
  SECTION("identical values collapse to that value") {
    rng::Xoshiro256pp gen(41);
    const Dense c = Dense::vec({0.4, -0.6, 1.1});
    std::vector<Dense> qs, kvs;
    for (int i = 0; i < 4; ++i) {
      qs.push_back(random_vec(3, gen));
      kvs.push_back(c);
    }
    const Dense out = diff::cross_attention_pooled(qs, kvs);
    for (std::size_t k = 0; k < 3; ++k)
      REQUIRE(out[k] == Approx(c[k]).margin(1e-13));
  }
  SECTION("two pairs match hand-evaluated weights") {
    const std::vector<std::vector<double>> a = {{1.0, 0.0}, {0.0, 2.0}};
    const std::vector<std::vector<double>> b = {{1.0, 1.0}, {-1.0, 0.5}};
    const double scale = 1.0 / std::sqrt(2.0);
    std::vector<double> expect(2, 0.0);
    for (int i = 0; i < 2; ++i) {
      std::vector<double> scores(2);
      for (int j = 0; j < 2; ++j)
        scores[j] = (a[i][0] * b[j][0] + a[i][1] * b[j][1]) * scale;
      const auto w = diff::softmax(scores);
      for (int j = 0; j < 2; ++j)
        for (int k = 0; k < 2; ++k) expect[k] += w[j] * b[j][k] / 2.0;
    }
    const Dense out = diff::cross_attention_pooled(
        {Dense::vec({1.0, 0.0}), Dense::vec({0.0, 2.0})},
        {Dense::vec({1.0, 1.0}), Dense::vec({-1.0, 0.5})});
    REQUIRE(out[0] == Approx(expect[0]).margin(1e-14));
    REQUIRE(out[1] == Approx(expect[1]).margin(1e-14));
  }
  SECTION("mismatched lengths error") {
    REQUIRE_THROWS(diff::cross_attention_pooled({Dense::vec({1.0})}, {}));
  }
}

TEST_CASE("grad_check on simple losses") {
  SECTION("quadratic") {
    ParamStore ps;
    ps.add("x", Dense::vec({3.0}));
    auto report = diff::grad_check(
        [](Tape& t, ParamStore& p) {
          Var x = t.param(p.at("x"));
          return t.mul(x, x);
        },
        ps, 1e-5, 1e-6);
    REQUIRE(report.pass);
    REQUIRE(ps.at("x").grad[0] == Approx(6.0).margin(1e-8));
  }
  SECTION("softmax + KL composite") {
    rng::Xoshiro256pp gen(53);
    ParamStore ps;
    ps.add("v", random_vec(5, gen));
    const std::vector<double> target = diff::softmax({0.1, 0.4, -0.2, 0.9, 0.0});
    auto report = diff::grad_check(
        [&target](Tape& t, ParamStore& p) {
          Var v = t.param(p.at("v"));
          return diff::kl_to_softmax(t, target, v);
        },
        ps, 1e-5, 1e-4);
    REQUIRE(report.pass);
  }
  SECTION("constant loss") {
    ParamStore ps;
    ps.add("x", Dense::vec({1.0, 2.0}));
    auto report = diff::grad_check(
        [](Tape& t, ParamStore&) { return t.constant(Dense(1, 1, {4.0})); }, ps,
        1e-5, 1e-6);
    REQUIRE(report.pass);
    REQUIRE(report.max_rel_err == 0.0);
  }
  SECTION("h out of range") {
    ParamStore ps;
    ps.add("x", Dense::vec({1.0}));
    REQUIRE_THROWS(diff::grad_check(
        [](Tape& t, ParamStore& p) { return t.param(p.at("x")); }, ps, 1e-2));
  }
}

// Composite touching every differentiable op, checked across 100 seeds.
TEST_CASE("all ops pass grad_check on 100 random seeds") {
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    rng::Xoshiro256pp gen(seed);
    ParamStore ps;
    ps.add("W", random_mat(3, 3, gen));
    ps.add("b", random_vec(3, gen, 0.3));
    ps.add("table", random_mat(4, 3, gen));
    ps.add("u", random_vec(3, gen));
    ps.add("v", random_vec(3, gen));
    const Dense target = random_vec(3, gen);
    const std::vector<double> dist = diff::softmax({0.2, -0.1, 0.5});

    auto loss_fn = [&](Tape& t, ParamStore& p) {
      Var W = t.param(p.at("W"));
      Var b = t.param(p.at("b"));
      Var u = t.param(p.at("u"));
      Var v = t.param(p.at("v"));
      Var e0 = t.row(p.at("table"), 1);
      Var e1 = t.row(p.at("table"), 3);

      Var h = t.tanh(t.affine(W, b, u));
      Var s = t.sigmoid(t.hadamard(h, v));
      Var att = diff::self_attention(t, {h, s, e0});
      Var x = diff::cross_attention(t, {att, e0}, {e1, s});
      Var cat = t.concat({x, att});
      Var pooled = t.mean_vecs({x, att, s});
      Var cs = diff::cosine(t, pooled, e1);
      Var cc = diff::cosine_const(t, cat, Dense(6, 1, {1, 2, -1, 0.5, 1, -2}));
      Var kl = diff::kl_to_softmax(t, dist, pooled);
      Var packd = t.pack({cs, cc, t.dot_const(s, target)});
      Var lsm = t.pick(t.log_softmax(packd), 1);
      Var sp = t.softplus(t.sub(cs, cc));
      Var ratio = t.div(t.add(sp, t.constant(Dense(1, 1, {2.0}))),
                        t.add(t.softplus(lsm), t.constant(Dense(1, 1, {1.5}))));
      Var lg = t.log(t.add(t.mul(ratio, ratio), t.constant(Dense(1, 1, {0.7}))));
      return t.add(t.add(kl, lg), t.scale(t.dot(u, v), 0.3));
    };

    auto report = diff::grad_check(loss_fn, ps, 1e-5, 1e-4);
    INFO("seed " << seed << " worst " << report.worst.param << "["
                 << report.worst.index << "] rel " << report.max_rel_err);
    REQUIRE(report.pass);
  }
}

TEST_CASE("optimizer_step behavior") {
  SECTION("zero gradients leave only weight decay") {
    ParamStore ps;
    ps.add("w", Dense::vec({1.0, -2.0}));
    diff::OptimizerState st;
    st.schedule = {1.0, 0.0, 10};
    st.weight_decay = 0.01;
    st.clip_norm = 1.0;
    diff::optimizer_step(ps, st, 5);
    const double lr = st.schedule.at(5);
    REQUIRE(ps.at("w").value[0] == Approx(1.0 * (1.0 - lr * 0.01)).margin(1e-15));
    REQUIRE(ps.at("w").value[1] == Approx(-2.0 * (1.0 - lr * 0.01)).margin(1e-15));
  }
  SECTION("warm-up step zero has zero lr") {
    diff::LrSchedule sched{0.5, 0.3, 100};
    REQUIRE(sched.at(0) == 0.0);
    REQUIRE(sched.at(100) == 0.0);
    REQUIRE(sched.at(30) == Approx(0.5));
  }
  SECTION("gradient clipping rescales to the clip norm") {
    ParamStore ps;
    ps.add("w", Dense::vec({0.0, 0.0}));
    ps.at("w").grad[0] = 6.0;
    ps.at("w").grad[1] = 8.0;  // norm 10
    diff::OptimizerState st;
    st.schedule = {1.0, 0.0, 2};
    st.schedule.warmup_frac = 0.0;
    st.weight_decay = 0.0;
    st.clip_norm = 1.0;
    diff::optimizer_step(ps, st, 1);
    const double lr = st.schedule.at(1);
    Dense delta = Dense::vec({ps.at("w").value[0], ps.at("w").value[1]});
    REQUIRE(delta.norm() == Approx(lr * 1.0).margin(1e-9));
  }
  SECTION("non-finite gradient names the parameter") {
    ParamStore ps;
    ps.add("bad_param", Dense::vec({1.0}));
    ps.at("bad_param").grad[0] = std::nan("");
    diff::OptimizerState st;
    REQUIRE_THROWS_WITH(diff::optimizer_step(ps, st, 0),
                        Catch::Matchers::ContainsSubstring("bad_param"));
  }
}

TEST_CASE("dropout is seeded and inverted") {
  rng::Xoshiro256pp g1(99), g2(99);
  Tape t1, t2;
  Dense big(1000, 1);
  big.fill(1.0);
  Var a1 = t1.constant(big);
  Var a2 = t2.constant(big);
  const Dense& d1 = t1.value(t1.dropout(a1, 0.2, g1));
  const Dense& d2 = t2.value(t2.dropout(a2, 0.2, g2));
  REQUIRE(d1.data == d2.data);
  double mean = 0.0;
  for (double x : d1.data) {
    REQUIRE((x == 0.0 || x == Approx(1.25)));
    mean += x;
  }
  mean /= d1.size();
  REQUIRE(mean == Approx(1.0).margin(0.08));
}

TEST_CASE("ParamStore contracts") {
  ParamStore ps;
  ps.add("a", Dense::vec({1.0}));
  REQUIRE_THROWS(ps.add("a", Dense::vec({2.0})));
  REQUIRE_THROWS(ps.at("missing"));
  ps.at("a").grad[0] = 3.0;
  ps.zero_grads();
  REQUIRE(ps.at("a").grad[0] == 0.0);
}
