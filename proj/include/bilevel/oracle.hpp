#pragma once

#include "bilevel/linalg.hpp"

#include <memory>
#include <mutex>
#include <optional>
#include <utility>

namespace bilevel {

/// Curvature constants of an (f, g) pair. mu_y > 0 is the inner strong
/// convexity; rho_* are Lipschitz constants of the second derivatives of g.
struct SmoothnessConstants {
  double mu_x = 0.0;
  double mu_y = 1.0;
  double L_x = 0.0;
  double L_y = 0.0;
  double L_xy = 0.0;
  double Ltil_xy = 0.0;
  double Ltil_y = 1.0;
  double rho_xy = 0.0;
  double rho_yy = 0.0;

  /// Throws ContractError unless mu_y > 0, Ltil_y >= mu_y and all entries are finite and >= 0.
  void validate() const;
  double kappa_y() const { return Ltil_y / mu_y; }
};

/// Which optional members of the exact surface an oracle provides.
struct Capabilities {
  bool y_star = false;
  bool phi = false;
  bool grad_phi = false;
  bool phi_star = false;
};

/// Query interface of a bilevel problem min_x f(x, y*(x)), y*(x) = argmin_y g(x, y).
///
/// The query surface is what algorithms may call. The exact surface is for
/// verification only and is never counted.
class BilevelOracle {
 public:
  virtual ~BilevelOracle() = default;

  virtual Index p() const = 0;
  virtual Index q() const = 0;
  virtual const SmoothnessConstants& constants() const = 0;
  virtual Capabilities capabilities() const { return {}; }

  virtual RealVector grad_x_f(const RealVector& x, const RealVector& y) const = 0;
  virtual RealVector grad_y_f(const RealVector& x, const RealVector& y) const = 0;
  virtual RealVector grad_y_g(const RealVector& x, const RealVector& y) const = 0;
  /// ∇²_y g(x, y) v.
  virtual RealVector hess_y_g_vec(const RealVector& x, const RealVector& y,
                                  const RealVector& v) const = 0;
  /// ∇_x∇_y g(x, y) v, a p-vector for a q-vector v.
  virtual RealVector jac_xy_g_vec(const RealVector& x, const RealVector& y,
                                  const RealVector& v) const = 0;

  virtual RealVector y_star(const RealVector& x) const;
  virtual double f_value(const RealVector& x, const RealVector& y) const;
  virtual double phi(const RealVector& x) const;
  virtual RealVector grad_phi(const RealVector& x) const;
  virtual double phi_star() const;
  virtual RealVector x_star() const;
  /// Φ(x) − Φ*; quadratic oracles evaluate it without cancellation.
  virtual double phi_gap(const RealVector& x) const;

  /// Solves ∇²_y g(x, y) v = rhs exactly. The default densifies the Hessian
  /// through hess_y_g_vec on the exact oracle.
  virtual RealVector solve_inner_hessian(const RealVector& x, const RealVector& y,
                                         const RealVector& rhs) const;

  /// The same problem with any counting or tracing layer removed.
  virtual const BilevelOracle& exact() const { return *this; }
};

using OraclePtr = std::shared_ptr<const BilevelOracle>;

/// Dense model of a quadratic Φ: Φ(x) = Φ* + ½(x−x*)ᵀP(x−x*).
struct QuadraticPhiModel {
  DenseMatrix P;
  RealVector grad_at_zero;
  RealVector x_star;
  double phi_star = 0.0;
};

/// Densifies ∇Φ(x) = P x + ∇Φ(0) through grad_phi; valid when Φ is quadratic.
QuadraticPhiModel build_quadratic_phi_model(const BilevelOracle& oracle);

/// Builds a QuadraticPhiModel once, on first use, from grad_phi and phi.
class LazyQuadraticPhi {
 public:
  const QuadraticPhiModel& get(const BilevelOracle& oracle) const;

 private:
  mutable std::once_flag once_;
  mutable std::unique_ptr<QuadraticPhiModel> model_;
};

/// Outer objective f(x,y) = ½xᵀAx + xᵀCy + ½yᵀDy + aᵀx + cᵀy.
/// C is a symmetric p×p operator (p = q); empty vectors mean zero.
struct QuadraticOuterSpec {
  StructuredOperator A;
  std::optional<StructuredOperator> C;
  StructuredOperator D;
  RealVector a;
  RealVector c;
};

/// Inner objective g(x,y) = ½yᵀHy + xᵀJy + bᵀy with symmetric H, J (p = q).
OraclePtr make_quadratic_bilevel(const StructuredOperator& H, const StructuredOperator& J,
                                 const RealVector& b, const QuadraticOuterSpec& outer,
                                 const SmoothnessConstants& constants,
                                 const LinalgTolerances& tol = {});

/// ∇_x f(x,y*) − ∇_x∇_y g(x,y*)·[∇²_y g(x,y*)]⁻¹·∇_y f(x,y*).
RealVector exact_hypergradient(const BilevelOracle& oracle, const RealVector& x);

struct OracleCounters {
  long long n_G = 0;
  long long n_J = 0;
  long long n_H = 0;
  double tau_cost = 2.0;

  double complexity() const {
    return tau_cost * static_cast<double>(n_J + n_H) + static_cast<double>(n_G);
  }
};

using CounterHandle = std::shared_ptr<OracleCounters>;

/// Wraps `oracle` so that every query-surface call is tallied.
std::pair<OraclePtr, CounterHandle> counted(OraclePtr oracle, double tau_cost = 2.0);

/// Max over coordinates of |central difference of Φ − exact hypergradient|,
/// relative to max(1, ‖∇Φ(x)‖_∞).
double finite_difference_check(const BilevelOracle& oracle, const RealVector& x, double h);

/// Throws ContractError when x or y has the wrong dimension for `oracle`.
void check_dims(const BilevelOracle& oracle, const RealVector& x, const RealVector& y);

}  // namespace bilevel
