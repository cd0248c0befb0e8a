#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <random>

#include "support.hpp"

using namespace kge;
using V = std::vector<double>;

namespace {

double pnorm(const V& x, NormOrder p) {
  double s = 0;
  for (double v : x) s += p == NormOrder::l1 ? std::abs(v) : v * v;
  return p == NormOrder::l1 ? s : std::sqrt(s);
}

// Straightforward recomputation of each model's raw value.
double recompute(ModelKind k, const V& h, const V& t, const V& ha, const V& ta, const V& r, const V& rh, const V& rt,
                 double u, NormOrder p) {
  const std::size_t d = h.size();
  V res(d);
  switch (k) {
    case ModelKind::transe:
      for (std::size_t i = 0; i < d; ++i) res[i] = h[i] + r[i] - t[i];
      return pnorm(res, p);
    case ModelKind::rotate: {
      const std::size_t m = d / 2;
      double s = 0;
      for (std::size_t i = 0; i < m; ++i) {
        const std::complex<double> hc(h[i], h[m + i]), tc(t[i], t[m + i]);
        const auto diff = hc * std::polar(1.0, r[i]) - tc;
        s += p == NormOrder::l1 ? std::abs(diff) : std::norm(diff);
      }
      return p == NormOrder::l1 ? s : std::sqrt(s);
    }
    case ModelKind::pairre:
      for (std::size_t i = 0; i < d; ++i) res[i] = h[i] * rh[i] - t[i] * rt[i];
      return pnorm(res, p);
    case ModelKind::triplere_v1:
      for (std::size_t i = 0; i < d; ++i) res[i] = h[i] * rh[i] - t[i] * rt[i] + r[i];
      return pnorm(res, p);
    case ModelKind::triplere_v2:
      for (std::size_t i = 0; i < d; ++i) res[i] = h[i] * (rh[i] + u) - t[i] * (rt[i] + u) + r[i];
      return pnorm(res, p);
    case ModelKind::distmult: {
      double s = 0;
      for (std::size_t i = 0; i < d; ++i) s += h[i] * r[i] * t[i];
      return s;
    }
    case ModelKind::complex: {
      const std::size_t m = d / 2;
      std::complex<double> s = 0;
      for (std::size_t i = 0; i < m; ++i) {
        s += std::complex<double>(h[i], h[m + i]) * std::complex<double>(r[i], r[m + i]) *
             std::conj(std::complex<double>(t[i], t[m + i]));
      }
      return s.real();
    }
    case ModelKind::interht:
      for (std::size_t i = 0; i < d; ++i) res[i] = h[i] * (ta[i] + 1) - t[i] * (ha[i] + 1) + r[i];
      return pnorm(res, p);
    case ModelKind::interht_plus:
      for (std::size_t i = 0; i < d; ++i) {
        res[i] = u * h[i] * t[i] + h[i] * (u * rh[i] + 1) - t[i] * (u * rt[i] + 1) + r[i];
      }
      return pnorm(res, p);
  }
  return 0;
}

struct Draw {
  V h, t, ha, ta, r, rh, rt;
  double u;
};

Draw draw(std::mt19937_64& rng, std::size_t d, std::size_t rd) {
  std::uniform_real_distribution<double> uni(-1, 1);
  auto vec = [&](std::size_t n) {
    V v(n);
    for (auto& x : v) x = uni(rng);
    return v;
  };
  return {vec(d), vec(d), vec(d), vec(d), vec(rd), vec(d), vec(d), std::abs(uni(rng))};
}

ScoreInputs<double> inputs(const Draw& x, NormOrder p) { return {x.h, x.t, x.ha, x.ta, x.r, x.rh, x.rt, x.u, p}; }

}  // namespace

TEST(Scoring, InterHTWorkedExample) {
  const V h{1, 2}, t{0.5, 1}, r{1, 1}, ta{1, 0}, ha{0, 1};
  const auto g = interht_distance<double>({.h = h, .t = t, .h_a = ha, .t_a = ta, .r = r});
  EXPECT_DOUBLE_EQ(g.value, 3.5);
  EXPECT_DOUBLE_EQ(score_for_loss<double>(ModelKind::interht, {.h = h, .t = t, .h_a = ha, .t_a = ta, .r = r}), 3.5);
}

TEST(Scoring, InterHTPlusWorkedExample) {
  const V h{1, 1}, t{1, 1}, r{0, 0}, one{1, 1};
  EXPECT_DOUBLE_EQ(interht_plus_distance<double>({.h = h, .t = t, .r = r, .r_h = one, .r_t = one, .u = 1.0}).value, 2.0);
}

TEST(Scoring, SmallExamples) {
  EXPECT_DOUBLE_EQ(transe_distance<double>(V{1, 0}, V{0, 1}, V{1, 1}).value, 0.0);
  EXPECT_DOUBLE_EQ(transe_distance<double>(V{0, 0}, V{3, 4}, V{0, 0}, NormOrder::l2).value, 5.0);
  EXPECT_NEAR(rotate_distance<double>(V{1, 0}, V{std::numbers::pi / 2}, V{0, 1}).value, 0.0, 1e-15);
  EXPECT_DOUBLE_EQ(pairre_distance<double>(V{2}, V{0.5}, V{1}, V{1}).value, 0.0);
  EXPECT_DOUBLE_EQ(distmult_score<double>(V{1, 1, 1}, V{1, 1, 1}, V{1, 1, 1}).value, 3.0);
  EXPECT_DOUBLE_EQ(score_for_loss<double>(ModelKind::distmult, {.h = V{1, 1, 1}, .t = V{1, 1, 1}, .r = V{1, 1, 1}}),
                   -3.0);
  const V h{1, 2}, z{0, 0};
  EXPECT_DOUBLE_EQ(interht_distance<double>({.h = h, .t = h, .h_a = z, .t_a = z, .r = z}).value, 0.0);
}

TEST(Scoring, DimensionMismatchThrows) {
  EXPECT_THROW(transe_distance<double>(V{1, 0}, V{0}, V{1, 1}), DimensionError);
  EXPECT_THROW(rotate_distance<double>(V{1, 0, 1}, V{0}, V{1, 1, 0}), DimensionError);
}

TEST(Scoring, MatchesRecomputation) {
  std::mt19937_64 rng(1);
  for (auto kind : kAllModelKinds) {
    const std::size_t rd = traits(kind).r_dim(8, kind);
    for (int i = 0; i < 50; ++i) {
      const auto x = draw(rng, 8, rd);
      const auto p = i % 2 ? NormOrder::l2 : NormOrder::l1;
      const double want = recompute(kind, x.h, x.t, x.ha, x.ta, x.r, x.rh, x.rt, x.u, p);
      EXPECT_NEAR(evaluate(kind, inputs(x, p)).value, want, 1e-12) << to_string(kind);
    }
  }
}

TEST(Scoring, ReductionIdentities) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 200; ++i) {
    const auto x = draw(rng, 8, 8);
    const auto p = i % 2 ? NormOrder::l2 : NormOrder::l1;
    const V zero(8, 0.0);
    const double te = transe_distance<double>(x.h, x.r, x.t, p).value;
    EXPECT_NEAR(interht_distance<double>({x.h, x.t, zero, zero, x.r, {}, {}, 0, p}).value, te, 1e-12);
    EXPECT_NEAR(interht_plus_distance<double>({x.h, x.t, {}, {}, x.r, x.rh, x.rt, 0.0, p}).value, te, 1e-12);
    EXPECT_NEAR(triplere_distance<double>(x.h, x.rh, x.r, x.rt, x.t, 0.0, 2, p).value,
                triplere_distance<double>(x.h, x.rh, x.r, x.rt, x.t, 0.7, 1, p).value, 1e-12);
    const V ones(8, 1.0);
    EXPECT_NEAR(triplere_distance<double>(x.h, ones, x.r, ones, x.t, 0.0, 1, p).value, te, 1e-12);
    V diff(8);
    for (int j = 0; j < 8; ++j) diff[j] = x.h[j] - x.t[j];
    EXPECT_NEAR(pairre_distance<double>(x.h, ones, ones, x.t, p).value, pnorm(diff, p), 1e-12);
    // RotatE at theta=0: complex magnitudes of h - t aggregated per p.
    const V theta(4, 0.0);
    double want = 0;
    for (int j = 0; j < 4; ++j) {
      const double m = std::hypot(diff[j], diff[4 + j]);
      want += p == NormOrder::l1 ? m : m * m;
    }
    if (p == NormOrder::l2) want = std::sqrt(want);
    EXPECT_NEAR(rotate_distance<double>(x.h, theta, x.t, p).value, want, 1e-12);
  }
}

TEST(Scoring, ComplexProperties) {
  std::mt19937_64 rng(3);
  const auto x = draw(rng, 8, 8);
  V hr = x.h, tr = x.t, rr = x.r;
  for (int j = 4; j < 8; ++j) hr[j] = tr[j] = rr[j] = 0;
  V h4(hr.begin(), hr.begin() + 4), t4(tr.begin(), tr.begin() + 4), r4(rr.begin(), rr.begin() + 4);
  EXPECT_NEAR(complex_score<double>(hr, rr, tr).value, distmult_score<double>(h4, r4, t4).value, 1e-12);
  EXPECT_GT(std::abs(complex_score<double>(x.h, x.r, x.t).value - complex_score<double>(x.t, x.r, x.h).value), 1e-6);
  V one(8, 0.0);
  for (int j = 0; j < 4; ++j) one[j] = 1;
  EXPECT_NEAR(complex_score<double>(x.h, one, x.t).value, complex_score<double>(x.t, one, x.h).value, 1e-12);
  EXPECT_NEAR(distmult_score<double>(x.h, x.r, x.t).value, distmult_score<double>(x.t, x.r, x.h).value, 1e-12);
}

TEST(Scoring, RotationPreservesModulus) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 20; ++i) {
    const auto x = draw(rng, 8, 4);
    const V zero(8, 0.0);
    // With t = 0 the L2 distance is |h o r| = |h|.
    EXPECT_NEAR(rotate_distance<double>(x.h, x.r, zero, NormOrder::l2).value, pnorm(x.h, NormOrder::l2), 1e-12);
  }
}

TEST(Scoring, UnusedInputsGetZeroGradient) {
  std::mt19937_64 rng(5);
  const auto x = draw(rng, 8, 8);
  const auto g = evaluate(ModelKind::transe, inputs(x, NormOrder::l1));
  for (double v : g.h_a) EXPECT_EQ(v, 0.0);
  for (double v : g.r_h) EXPECT_EQ(v, 0.0);
}

TEST(Scoring, L1SubgradientAtZeroIsZero) {
  const V h{1, 2}, r{0, 1}, t{1, 1};  // residual [0, 2]
  const auto g = transe_distance<double>(h, r, t);
  EXPECT_EQ(g.h[0], 0.0);
  EXPECT_EQ(g.h[1], 1.0);
}

TEST(Scoring, FiniteDifferenceOracle) {
  std::mt19937_64 rng(6);
  for (auto kind : kAllModelKinds) {
    const std::size_t rd = traits(kind).r_dim(8, kind);
    int checked = 0;
    for (int attempt = 0; checked < 100 && attempt < 1000; ++attempt) {
      auto x = draw(rng, 8, rd);
      const auto p = attempt % 2 ? NormOrder::l2 : NormOrder::l1;
      const auto g = evaluate(kind, inputs(x, p));
      auto f = [&] { return recompute(kind, x.h, x.t, x.ha, x.ta, x.r, x.rh, x.rt, x.u, p); };
      // Skip draws within reach of an L1 kink.
      bool near_kink = false;
      if (p == NormOrder::l1) {
        for (auto* v : {&x.h, &x.t, &x.ha, &x.ta, &x.r, &x.rh, &x.rt}) {
          for (auto& c : *v) {
            const double s = c, f0 = f();
            c = s + 1e-5;
            const double fp = f();
            c = s - 1e-5;
            const double fm = f();
            c = s;
            near_kink |= std::abs((fp - f0) - (f0 - fm)) > 1e-8;
          }
        }
      }
      if (near_kink) continue;
      ++checked;
      const std::vector<std::pair<V*, const V*>> pairs = {{&x.h, &g.h},   {&x.t, &g.t},   {&x.ha, &g.h_a},
                                                          {&x.ta, &g.t_a}, {&x.r, &g.r},   {&x.rh, &g.r_h},
                                                          {&x.rt, &g.r_t}};
      for (const auto& [vec, grad] : pairs) {
        const auto num = testkit::finite_diff(f, *vec, 1e-5);
        EXPECT_LE(testkit::rel_err(*grad, num), 1e-4) << to_string(kind);
      }
    }
    EXPECT_EQ(checked, 100) << to_string(kind);
  }
}

TEST(Scoring, FloatMatchesDouble) {
  std::mt19937_64 rng(7);
  const auto x = draw(rng, 8, 8);
  std::vector<float> h(x.h.begin(), x.h.end()), t(x.t.begin(), x.t.end()), ha(x.ha.begin(), x.ha.end()),
      ta(x.ta.begin(), x.ta.end()), r(x.r.begin(), x.r.end());
  const float vf = interht_distance<float>({h, t, ha, ta, r, {}, {}, 0.f, NormOrder::l1}).value;
  const double vd = interht_distance<double>({x.h, x.t, x.ha, x.ta, x.r, {}, {}, 0.0, NormOrder::l1}).value;
  EXPECT_NEAR(vf, vd, 1e-5);
}
