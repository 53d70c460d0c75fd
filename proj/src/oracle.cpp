#include "bilevel/oracle.hpp"

#include "bilevel/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace bilevel {

void SmoothnessConstants::validate() const {
  const double all[] = {mu_x, mu_y, L_x, L_y, L_xy, Ltil_xy, Ltil_y, rho_xy, rho_yy};
  for (double v : all) {
    if (!std::isfinite(v) || v < 0.0) {
      throw ContractError("SmoothnessConstants: entries must be finite and nonnegative");
    }
  }
  if (!(mu_y > 0.0)) throw ContractError("SmoothnessConstants: mu_y must be positive");
  if (Ltil_y < mu_y) throw ContractError("SmoothnessConstants: Ltil_y must be >= mu_y");
}

void check_dims(const BilevelOracle& oracle, const RealVector& x, const RealVector& y) {
  if (x.size() != oracle.p() || y.size() != oracle.q()) {
    std::ostringstream msg;
    msg << "oracle expects (p, q) = (" << oracle.p() << ", " << oracle.q() << "), got ("
        << x.size() << ", " << y.size() << ")";
    throw ContractError(msg.str());
  }
}

RealVector BilevelOracle::y_star(const RealVector&) const {
  throw CapabilityError("oracle has no exact inner minimizer");
}

double BilevelOracle::f_value(const RealVector&, const RealVector&) const {
  throw CapabilityError("oracle has no outer objective value");
}

double BilevelOracle::phi(const RealVector& x) const { return f_value(x, y_star(x)); }

RealVector BilevelOracle::grad_phi(const RealVector& x) const {
  return exact_hypergradient(*this, x);
}

double BilevelOracle::phi_star() const { throw CapabilityError("oracle has no Φ*"); }

RealVector BilevelOracle::x_star() const { throw CapabilityError("oracle has no x*"); }

double BilevelOracle::phi_gap(const RealVector& x) const { return phi(x) - phi_star(); }

RealVector BilevelOracle::solve_inner_hessian(const RealVector& x, const RealVector& y,
                                              const RealVector& rhs) const {
  const BilevelOracle& base = exact();
  const Index n = base.q();
  DenseMatrix h(n, n);
  RealVector e = RealVector::Zero(n);
  for (Index j = 0; j < n; ++j) {
    e[j] = 1.0;
    h.col(j) = base.hess_y_g_vec(x, y, e);
    e[j] = 0.0;
  }
  h = 0.5 * (h + h.transpose()).eval();
  return solve_dense(h, rhs);
}

QuadraticPhiModel build_quadratic_phi_model(const BilevelOracle& oracle) {
  QuadraticPhiModel model;
  const Index n = oracle.p();
  const RealVector zero = RealVector::Zero(n);
  model.grad_at_zero = oracle.grad_phi(zero);
  model.P.resize(n, n);
  RealVector e = zero;
  for (Index j = 0; j < n; ++j) {
    e[j] = 1.0;
    model.P.col(j) = oracle.grad_phi(e) - model.grad_at_zero;
    e[j] = 0.0;
  }
  model.P = 0.5 * (model.P + model.P.transpose()).eval();
  if (model.grad_at_zero.norm() == 0.0) {
    model.x_star = zero;
  } else {
    try {
      model.x_star = solve_dense(model.P, -model.grad_at_zero);
    } catch (const SingularityError&) {
      // Convex Φ with a flat direction: take the minimum-norm minimizer.
      const Eigen::CompleteOrthogonalDecomposition<DenseMatrix> cod(model.P);
      model.x_star = cod.solve(-model.grad_at_zero);
      const double residual = (model.P * model.x_star + model.grad_at_zero).norm();
      if (!(residual <= 1e-8 * model.grad_at_zero.norm())) {
        throw SingularityError("quadratic Φ has no minimizer", 0.0);
      }
    }
  }
  model.phi_star = oracle.phi(model.x_star);
  return model;
}

const QuadraticPhiModel& LazyQuadraticPhi::get(const BilevelOracle& oracle) const {
  std::call_once(once_, [&] {
    model_ = std::make_unique<QuadraticPhiModel>(build_quadratic_phi_model(oracle));
  });
  return *model_;
}

namespace {

class QuadraticBilevel final : public BilevelOracle {
 public:
  QuadraticBilevel(StructuredOperator H, StructuredOperator J, RealVector b,
                   QuadraticOuterSpec outer, SmoothnessConstants constants,
                   LinalgTolerances tol)
      : H_(std::move(H)),
        J_(std::move(J)),
        b_(std::move(b)),
        outer_(std::move(outer)),
        constants_(constants),
        tol_(tol),
        h_dense_(H_.to_dense()),
        h_llt_(h_dense_) {
    if (h_llt_.info() != Eigen::Success) {
      throw InvariantError("make_quadratic_bilevel: H is not positive definite");
    }
  }

  Index p() const override { return J_.dim(); }
  Index q() const override { return H_.dim(); }
  const SmoothnessConstants& constants() const override { return constants_; }
  Capabilities capabilities() const override { return {true, true, true, true}; }

  RealVector grad_x_f(const RealVector& x, const RealVector& y) const override {
    check_dims(*this, x, y);
    RealVector out = outer_.A.apply(x);
    if (outer_.C) out += outer_.C->apply(y);
    if (outer_.a.size() > 0) out += outer_.a;
    return out;
  }

  RealVector grad_y_f(const RealVector& x, const RealVector& y) const override {
    check_dims(*this, x, y);
    RealVector out = outer_.D.apply(y);
    if (outer_.C) out += outer_.C->apply(x);
    if (outer_.c.size() > 0) out += outer_.c;
    return out;
  }

  RealVector grad_y_g(const RealVector& x, const RealVector& y) const override {
    check_dims(*this, x, y);
    return H_.apply(y) + J_.apply(x) + b_;
  }

  RealVector hess_y_g_vec(const RealVector& x, const RealVector& y,
                          const RealVector& v) const override {
    check_dims(*this, x, y);
    return H_.apply(v);
  }

  RealVector jac_xy_g_vec(const RealVector& x, const RealVector& y,
                          const RealVector& v) const override {
    check_dims(*this, x, y);
    return J_.apply(v);
  }

  RealVector y_star(const RealVector& x) const override {
    if (x.size() != p()) throw ContractError("y_star: dimension mismatch");
    return solve_h(-(J_.apply(x) + b_));
  }

  double f_value(const RealVector& x, const RealVector& y) const override {
    check_dims(*this, x, y);
    double value = 0.5 * x.dot(outer_.A.apply(x)) + 0.5 * y.dot(outer_.D.apply(y));
    if (outer_.C) value += x.dot(outer_.C->apply(y));
    if (outer_.a.size() > 0) value += outer_.a.dot(x);
    if (outer_.c.size() > 0) value += outer_.c.dot(y);
    return value;
  }

  double phi_star() const override { return model_.get(*this).phi_star; }
  RealVector x_star() const override { return model_.get(*this).x_star; }

  double phi_gap(const RealVector& x) const override {
    const QuadraticPhiModel& m = model_.get(*this);
    const RealVector e = x - m.x_star;
    return 0.5 * e.dot(m.P * e);
  }

  RealVector solve_inner_hessian(const RealVector&, const RealVector&,
                                 const RealVector& rhs) const override {
    return solve_h(rhs);
  }

 private:
  RealVector solve_h(const RealVector& rhs) const {
    RealVector v = h_llt_.solve(rhs);
    const double rhs_norm = rhs.norm();
    if ((h_dense_ * v - rhs).norm() > tol_.solve_residual * rhs_norm) {
      v += h_llt_.solve(rhs - h_dense_ * v);
      if ((h_dense_ * v - rhs).norm() > tol_.solve_residual * rhs_norm) {
        throw SingularityError("inner Hessian solve missed its residual tolerance", 0.0);
      }
    }
    return v;
  }

  StructuredOperator H_;
  StructuredOperator J_;
  RealVector b_;
  QuadraticOuterSpec outer_;
  SmoothnessConstants constants_;
  LinalgTolerances tol_;
  DenseMatrix h_dense_;
  Eigen::LLT<DenseMatrix> h_llt_;
  LazyQuadraticPhi model_;
};

class CountedOracle final : public BilevelOracle {
 public:
  CountedOracle(OraclePtr base, CounterHandle counters)
      : base_(std::move(base)), counters_(std::move(counters)) {}

  Index p() const override { return base_->p(); }
  Index q() const override { return base_->q(); }
  const SmoothnessConstants& constants() const override { return base_->constants(); }
  Capabilities capabilities() const override { return base_->capabilities(); }

  RealVector grad_x_f(const RealVector& x, const RealVector& y) const override {
    ++counters_->n_G;
    return base_->grad_x_f(x, y);
  }
  RealVector grad_y_f(const RealVector& x, const RealVector& y) const override {
    ++counters_->n_G;
    return base_->grad_y_f(x, y);
  }
  RealVector grad_y_g(const RealVector& x, const RealVector& y) const override {
    ++counters_->n_G;
    return base_->grad_y_g(x, y);
  }
  RealVector hess_y_g_vec(const RealVector& x, const RealVector& y,
                          const RealVector& v) const override {
    ++counters_->n_H;
    return base_->hess_y_g_vec(x, y, v);
  }
  RealVector jac_xy_g_vec(const RealVector& x, const RealVector& y,
                          const RealVector& v) const override {
    ++counters_->n_J;
    return base_->jac_xy_g_vec(x, y, v);
  }

  RealVector y_star(const RealVector& x) const override { return base_->y_star(x); }
  double f_value(const RealVector& x, const RealVector& y) const override {
    return base_->f_value(x, y);
  }
  double phi(const RealVector& x) const override { return base_->phi(x); }
  RealVector grad_phi(const RealVector& x) const override { return base_->grad_phi(x); }
  double phi_star() const override { return base_->phi_star(); }
  RealVector x_star() const override { return base_->x_star(); }
  double phi_gap(const RealVector& x) const override { return base_->phi_gap(x); }
  RealVector solve_inner_hessian(const RealVector& x, const RealVector& y,
                                 const RealVector& rhs) const override {
    return base_->solve_inner_hessian(x, y, rhs);
  }
  const BilevelOracle& exact() const override { return base_->exact(); }

 private:
  OraclePtr base_;
  CounterHandle counters_;
};

}  // namespace

OraclePtr make_quadratic_bilevel(const StructuredOperator& H, const StructuredOperator& J,
                                 const RealVector& b, const QuadraticOuterSpec& outer,
                                 const SmoothnessConstants& constants,
                                 const LinalgTolerances& tol) {
  constants.validate();
  const Index d = H.dim();
  if (J.dim() != d || b.size() != d || outer.A.dim() != d || outer.D.dim() != d ||
      (outer.C && outer.C->dim() != d) || (outer.a.size() != 0 && outer.a.size() != d) ||
      (outer.c.size() != 0 && outer.c.size() != d)) {
    throw ContractError("make_quadratic_bilevel: operand dimensions disagree");
  }
  require_finite(b, "make_quadratic_bilevel b");
  const EigExtremes spec = symmetric_eig_extremes(H, tol);
  const double slack = 1e-10 * std::max(1.0, constants.Ltil_y);
  if (spec.min_eig < constants.mu_y - slack || spec.max_eig > constants.Ltil_y + slack) {
    std::ostringstream msg;
    msg << "make_quadratic_bilevel: spectrum of H [" << spec.min_eig << ", " << spec.max_eig
        << "] outside [mu_y, Ltil_y] = [" << constants.mu_y << ", " << constants.Ltil_y << "]";
    throw InvariantError(msg.str());
  }
  return std::make_shared<QuadraticBilevel>(H, J, b, outer, constants, tol);
}

RealVector exact_hypergradient(const BilevelOracle& oracle, const RealVector& x) {
  const BilevelOracle& base = oracle.exact();
  const Capabilities caps = base.capabilities();
  if (!caps.y_star) throw CapabilityError("exact_hypergradient: oracle has no y_star");
  const RealVector y = base.y_star(x);
  const RealVector v = base.solve_inner_hessian(x, y, base.grad_y_f(x, y));
  return base.grad_x_f(x, y) - base.jac_xy_g_vec(x, y, v);
}

std::pair<OraclePtr, CounterHandle> counted(OraclePtr oracle, double tau_cost) {
  if (!(tau_cost > 0.0)) throw ContractError("counted: tau_cost must be positive");
  auto counters = std::make_shared<OracleCounters>();
  counters->tau_cost = tau_cost;
  return {std::make_shared<CountedOracle>(std::move(oracle), counters), counters};
}

double finite_difference_check(const BilevelOracle& oracle, const RealVector& x, double h) {
  if (!(h > 0.0)) throw ContractError("finite_difference_check: h must be positive");
  const BilevelOracle& base = oracle.exact();
  const RealVector g = exact_hypergradient(base, x);
  const double scale = std::max(1.0, g.cwiseAbs().maxCoeff());
  double worst = 0.0;
  RealVector xp = x;
  for (Index i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + h;
    const double up = base.phi(xp);
    xp[i] = x[i] - h;
    const double down = base.phi(xp);
    xp[i] = x[i];
    worst = std::max(worst, std::abs((up - down) / (2.0 * h) - g[i]) / scale);
  }
  return worst;
}

}  // namespace bilevel
