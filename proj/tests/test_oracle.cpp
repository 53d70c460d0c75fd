#include "bilevel/errors.hpp"
#include "bilevel/oracle.hpp"
#include "reference.hpp"

#include <gtest/gtest.h>

#include <random>

namespace bilevel {
namespace {

using reference::DenseBilevel;

DenseMatrix random_spd(Index d, double lo, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  DenseMatrix m(d, d);
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < d; ++j) m(i, j) = normal(rng);
  return m * m.transpose() / static_cast<double>(d) + lo * DenseMatrix::Identity(d, d);
}

DenseMatrix random_sym(Index d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  DenseMatrix m(d, d);
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < d; ++j) m(i, j) = normal(rng);
  return 0.5 * (m + m.transpose());
}

RealVector random_vec(Index d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  RealVector v(d);
  for (Index i = 0; i < d; ++i) v[i] = normal(rng);
  return v;
}

SmoothnessConstants loose_constants() {
  SmoothnessConstants c;
  c.mu_x = 0.1;
  c.mu_y = 0.5;
  c.L_x = c.L_y = c.L_xy = c.Ltil_xy = 100.0;
  c.Ltil_y = 100.0;
  return c;
}

struct Fixture {
  DenseBilevel ref;
  OraclePtr oracle;
};

Fixture make_fixture(Index d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Fixture fx;
  auto& r = fx.ref;
  r.A = random_spd(d, 1.0, rng);
  r.C = random_sym(d, rng);
  r.D = random_spd(d, 0.5, rng);
  r.H = random_spd(d, 1.0, rng);
  r.J = random_sym(d, rng);
  r.a = random_vec(d, rng);
  r.c = random_vec(d, rng);
  r.b = random_vec(d, rng);
  QuadraticOuterSpec outer{StructuredOperator::dense(r.A), StructuredOperator::dense(r.C),
                           StructuredOperator::dense(r.D), r.a, r.c};
  fx.oracle = make_quadratic_bilevel(StructuredOperator::dense(r.H), StructuredOperator::dense(r.J),
                                     r.b, outer, loose_constants());
  return fx;
}

TEST(QuadraticBilevel, ExactSurfaceMatchesDenseReference) {
  const Index d = 7;
  auto fx = make_fixture(d, 3);
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const RealVector x = random_vec(d, rng);
    EXPECT_LT((fx.oracle->y_star(x) - fx.ref.y_star(x)).norm(), 1e-10);
    EXPECT_NEAR(fx.oracle->phi(x), fx.ref.phi(x), 1e-9 * (1.0 + std::abs(fx.ref.phi(x))));
    EXPECT_LT((fx.oracle->grad_phi(x) - fx.ref.grad_phi(x)).norm(), 1e-9);
    EXPECT_LT((exact_hypergradient(*fx.oracle, x) - fx.ref.grad_phi(x)).norm(), 1e-9);
  }
}

TEST(QuadraticBilevel, QuerySurfaceMatchesDenseDerivatives) {
  const Index d = 6;
  auto fx = make_fixture(d, 8);
  const auto& r = fx.ref;
  std::mt19937_64 rng(9);
  const RealVector x = random_vec(d, rng), y = random_vec(d, rng), v = random_vec(d, rng);
  const auto& o = *fx.oracle;
  EXPECT_LT((o.grad_x_f(x, y) - (r.A * x + r.C * y + r.a)).norm(), 1e-12);
  EXPECT_LT((o.grad_y_f(x, y) - (r.C.transpose() * x + r.D * y + r.c)).norm(), 1e-12);
  EXPECT_LT((o.grad_y_g(x, y) - (r.H * y + r.J.transpose() * x + r.b)).norm(), 1e-12);
  EXPECT_LT((o.hess_y_g_vec(x, y, v) - r.H * v).norm(), 1e-12);
  EXPECT_LT((o.jac_xy_g_vec(x, y, v) - r.J * v).norm(), 1e-12);
}

TEST(QuadraticBilevel, MinimizerIsStationary) {
  auto fx = make_fixture(5, 21);
  const RealVector xs = fx.oracle->x_star();
  EXPECT_LT(fx.ref.grad_phi(xs).norm(), 1e-9);
  EXPECT_NEAR(fx.oracle->phi_star(), fx.ref.phi(xs), 1e-9);
  std::mt19937_64 rng(2);
  const RealVector x = random_vec(5, rng);
  EXPECT_NEAR(fx.oracle->phi_gap(x), fx.ref.phi(x) - fx.ref.phi(xs), 1e-8);
  EXPECT_GE(fx.oracle->phi_gap(x), 0.0);
}

TEST(QuadraticBilevel, FiniteDifferenceAgreesWithHypergradient) {
  auto fx = make_fixture(6, 30);
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 3; ++trial) {
    EXPECT_LT(finite_difference_check(*fx.oracle, random_vec(6, rng), 1e-5), 1e-6);
  }
}

TEST(QuadraticBilevel, DimensionMismatchIsContractError) {
  auto fx = make_fixture(4, 1);
  EXPECT_THROW(fx.oracle->grad_x_f(RealVector::Zero(3), RealVector::Zero(4)), ContractError);
  EXPECT_THROW(fx.oracle->y_star(RealVector::Zero(5)), ContractError);
}

TEST(QuadraticBilevel, IndefiniteInnerHessianRejected) {
  const Index d = 3;
  QuadraticOuterSpec outer{StructuredOperator::identity(d), std::nullopt,
                           StructuredOperator::identity(d), RealVector(), RealVector()};
  RealVector diag(d);
  diag << 1.0, -1.0, 2.0;
  EXPECT_THROW(make_quadratic_bilevel(StructuredOperator::diagonal(diag),
                                      StructuredOperator::identity(d), RealVector::Ones(d), outer,
                                      loose_constants()),
               InvariantError);
}

TEST(SmoothnessConstants, ValidateRejectsBadEntries) {
  SmoothnessConstants c;
  c.mu_y = 0.0;
  EXPECT_THROW(c.validate(), ContractError);
  c = SmoothnessConstants{};
  c.Ltil_y = 0.5;
  EXPECT_THROW(c.validate(), ContractError);
  c = SmoothnessConstants{};
  c.L_x = -1.0;
  EXPECT_THROW(c.validate(), ContractError);
}

TEST(Counters, EveryQueryKindIsTallied) {
  auto fx = make_fixture(4, 5);
  auto [wrapped, counters] = counted(fx.oracle, 3.0);
  const RealVector z = RealVector::Ones(4);
  wrapped->grad_x_f(z, z);
  wrapped->grad_y_f(z, z);
  wrapped->grad_y_g(z, z);
  wrapped->grad_y_g(z, z);
  wrapped->hess_y_g_vec(z, z, z);
  wrapped->hess_y_g_vec(z, z, z);
  wrapped->hess_y_g_vec(z, z, z);
  wrapped->jac_xy_g_vec(z, z, z);
  EXPECT_EQ(counters->n_G, 4);
  EXPECT_EQ(counters->n_H, 3);
  EXPECT_EQ(counters->n_J, 1);
  EXPECT_DOUBLE_EQ(counters->complexity(), 4.0 + 3.0 * 4.0);
}

TEST(Counters, ExactSurfaceIsNotCounted) {
  auto fx = make_fixture(4, 6);
  auto [wrapped, counters] = counted(fx.oracle);
  const RealVector z = RealVector::Ones(4);
  wrapped->phi(z);
  wrapped->grad_phi(z);
  wrapped->y_star(z);
  exact_hypergradient(*wrapped, z);
  EXPECT_EQ(counters->n_G + counters->n_H + counters->n_J, 0);
  EXPECT_EQ(&wrapped->exact(), &fx.oracle->exact());
}

TEST(Counters, NonPositiveTauCostRejected) {
  auto fx = make_fixture(3, 7);
  EXPECT_THROW(counted(fx.oracle, 0.0), ContractError);
}

}  // namespace
}  // namespace bilevel
