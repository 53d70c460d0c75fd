#include "bilevel/errors.hpp"
#include "bilevel/hypergrad.hpp"
#include "bilevel/worst_case.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace bilevel {
namespace {

SmoothnessConstants benchmark_constants() {
  SmoothnessConstants c = mild_preset();
  c.mu_y = 0.25;
  return c;
}

RealVector random_vec(Index d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  RealVector v(d);
  for (Index i = 0; i < d; ++i) v[i] = normal(rng);
  return v;
}

/// Least-squares slope of ys against their indices.
double index_slope(const std::vector<double>& ys) {
  const double n = static_cast<double>(ys.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    const double x = static_cast<double>(i);
    sx += x;
    sy += ys[i];
    sxx += x * x;
    sxy += x * ys[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

TEST(AgdConfig, CoefficientsForKappaFour) {
  const AgdConfig cfg{10, 4.0, 1.0};
  EXPECT_DOUBLE_EQ(cfg.step(), 0.25);
  EXPECT_DOUBLE_EQ(cfg.lead_coef(), 4.0 / 3.0);
  EXPECT_DOUBLE_EQ(cfg.momentum(), 1.0 / 3.0);
  EXPECT_THROW((AgdConfig{0, 4.0, 1.0}.validate()), ContractError);
  EXPECT_THROW((AgdConfig{1, 0.5, 1.0}.validate()), ContractError);
}

TEST(AgdInner, ErrorStaysUnderEnvelope) {
  SmoothnessConstants c = mild_preset();
  c.mu_y = 0.25;
  c.Ltil_y = 1.0;
  const auto inst = build_scsc_benchmark(16, c);
  std::mt19937_64 rng(1);
  const RealVector x = random_vec(16, rng);
  const RealVector y0 = random_vec(16, rng);
  const RealVector ys = inst.oracle->y_star(x);
  for (int N = 1; N <= 20; ++N) {
    const AgdConfig cfg = AgdConfig::from(c, N);
    const double err = (agd_inner(*inst.oracle, x, y0, cfg) - ys).norm();
    const double envelope = std::sqrt((c.Ltil_y + c.mu_y) / c.mu_y) * (y0 - ys).norm() *
                            std::exp(-N / (2.0 * std::sqrt(4.0)));
    EXPECT_LE(err, envelope) << "N=" << N;
    EXPECT_DOUBLE_EQ(agd_envelope(cfg, (y0 - ys).norm()), envelope);
  }
}

TEST(HeavyBall, ParametersForKappaFour) {
  const auto cfg = HeavyBallConfig::from(4.0, 1.0, 3);
  EXPECT_DOUBLE_EQ(cfg.hb_step, 4.0 / 9.0);
  EXPECT_NEAR(cfg.hb_momentum, 1.0 / 9.0, 1e-15);
}

TEST(HeavyBall, IdentityHessianRecoversRhs) {
  const auto cfg = HeavyBallConfig::from(1.0, 1.0, 1);
  const RealVector rhs = RealVector::LinSpaced(5, -2.0, 3.0);
  const RealVector v = heavy_ball_solve([](const RealVector& u) { return u; }, rhs, cfg);
  EXPECT_LT((v - rhs).norm(), 1e-15);
}

TEST(HeavyBall, TailSlopeMatchesAsymptoticRate) {
  const Index d = 50;
  const RealVector eig = RealVector::LinSpaced(d, 1.0, 100.0);
  const auto cfg = HeavyBallConfig::from(100.0, 1.0, 1);
  const RealVector e0 = RealVector::Ones(d);
  HeavyBallStepper stepper(cfg, e0, e0);
  const auto hess = [&](const RealVector& u) { return RealVector(eig.cwiseProduct(u)); };
  const RealVector zero = RealVector::Zero(d);
  std::vector<double> tail;
  for (int k = 1; k <= 300; ++k) {
    stepper.step(hess, zero);
    if (k > 150) tail.push_back(std::log(stepper.current().norm()));
  }
  const double expected = std::log(9.0 / 11.0);
  EXPECT_NEAR(index_slope(tail), expected, 0.1 * std::abs(expected));
}

TEST(Aid, ConvergesToExactHypergradient) {
  const auto c = benchmark_constants();
  const auto inst = build_scsc_benchmark(16, c);
  const RealVector x = RealVector::LinSpaced(16, -1.0, 1.0);
  const auto est = aid_estimate(*inst.oracle, x, RealVector::Zero(16), AgdConfig::from(c, 200),
                                HeavyBallConfig::from(c, 200));
  const RealVector g = inst.oracle->grad_phi(x);
  EXPECT_LT((est.G - g).norm(), 1e-10 * g.norm());
  ASSERT_TRUE(est.inner_residual.has_value());
  EXPECT_LT(*est.inner_residual, 1e-10);
}

TEST(Aid, ErrorWithinBoundOnGrid) {
  const auto c = benchmark_constants();
  const auto inst = build_scsc_benchmark(16, c);
  std::mt19937_64 rng(17);
  for (int N : {5, 20}) {
    for (int M : {5, 20}) {
      const RealVector x = random_vec(16, rng);
      const auto est = aid_estimate(*inst.oracle, x, RealVector::Zero(16), AgdConfig::from(c, N),
                                    HeavyBallConfig::from(c, M));
      ASSERT_TRUE(est.error_bound.has_value());
      EXPECT_LE((est.G - inst.oracle->grad_phi(x)).norm(), *est.error_bound);
    }
  }
}

TEST(Aid, DecoupledInstanceReturnsOuterGradient) {
  const auto c = mild_preset();
  const auto o = build_decoupled(6, c);
  const RealVector x = RealVector::LinSpaced(6, 0.0, 1.0);
  const auto est = aid_estimate(*o, x, RealVector::Zero(6), AgdConfig::from(c, 3),
                                HeavyBallConfig::from(c, 2));
  EXPECT_LT((est.G - o->grad_x_f(x, est.y_N)).norm(), 1e-15);
}

TEST(Itd, EqualsDerivativeOfUnrolledMap) {
  const auto c = benchmark_constants();
  const auto inst = build_scsc_benchmark(10, c);
  const auto& o = *inst.oracle;
  const int N = 7;
  const double eta = 0.5 / c.Ltil_y;
  std::mt19937_64 rng(3);
  const RealVector x = random_vec(10, rng);
  const RealVector y0 = random_vec(10, rng);
  const auto unrolled = [&](const RealVector& xx) {
    RealVector y = y0;
    for (int t = 0; t < N; ++t) y -= eta * o.grad_y_g(xx, y);
    return o.f_value(xx, y);
  };
  RealVector fd(10);
  const double h = 1e-4;
  for (Index i = 0; i < 10; ++i) {
    const RealVector e = RealVector::Unit(10, i) * h;
    fd[i] = (unrolled(x + e) - unrolled(x - e)) / (2.0 * h);
  }
  const auto est = itd_estimate(o, x, y0, N, eta);
  EXPECT_LT((est.G - fd).norm(), 1e-7 * (1.0 + fd.norm()));
}

TEST(Itd, AgreesWithAidAtLargeBudgets) {
  const auto c = benchmark_constants();
  const auto inst = build_scsc_benchmark(16, c);
  const RealVector x = RealVector::Ones(16);
  const auto aid = aid_estimate(*inst.oracle, x, RealVector::Zero(16), AgdConfig::from(c, 200),
                                HeavyBallConfig::from(c, 200));
  const auto itd = itd_estimate(*inst.oracle, x, RealVector::Zero(16), 400, 1.0 / c.Ltil_y);
  EXPECT_LT((aid.G - itd.G).norm(), 1e-6 * aid.G.norm());
}

TEST(Itd, RejectsOversizedStep) {
  const auto c = benchmark_constants();
  const auto inst = build_scsc_benchmark(4, c);
  EXPECT_THROW(itd_estimate(*inst.oracle, RealVector::Zero(4), RealVector::Zero(4), 3, 1.5),
               ContractError);
}

TEST(Footprint, AidAndItdQueryCounts) {
  const auto c = benchmark_constants();
  const auto inst = build_scsc_benchmark(8, c);
  const RealVector x = RealVector::Ones(8);
  for (int N : {1, 5, 12}) {
    for (int M : {1, 4}) {
      auto [o, n] = counted(inst.oracle);
      aid_estimate(*o, x, RealVector::Zero(8), AgdConfig::from(c, N), HeavyBallConfig::from(c, M));
      EXPECT_EQ(n->n_G, N + 2);
      EXPECT_EQ(n->n_H, M);
      EXPECT_EQ(n->n_J, 1);
    }
    auto [o, n] = counted(inst.oracle);
    itd_estimate(*o, x, RealVector::Zero(8), N, 1.0 / c.Ltil_y);
    EXPECT_EQ(n->n_G, N + 2);
    EXPECT_EQ(n->n_H, N - 1);
    EXPECT_EQ(n->n_J, N);
  }
}

}  // namespace
}  // namespace bilevel
