#include "bilevel/lower_bound.hpp"

#include "bilevel/errors.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace bilevel {

namespace {

/// 1-based index of the last active coordinate; 0 for the zero vector.
Index support_index(const RealVector& v, double tol) { return active_index(v, tol) + 1; }

class TracingOracle final : public BilevelOracle {
 public:
  TracingOracle(OraclePtr base, SupportProfile& profile)
      : base_(std::move(base)), profile_(profile) {}

  Index p() const override { return base_->p(); }
  Index q() const override { return base_->q(); }
  const SmoothnessConstants& constants() const override { return base_->constants(); }
  Capabilities capabilities() const override { return base_->capabilities(); }

  RealVector grad_x_f(const RealVector& x, const RealVector& y) const override {
    return log(QueryKind::GradXF, x, y, base_->grad_x_f(x, y));
  }
  RealVector grad_y_f(const RealVector& x, const RealVector& y) const override {
    return log(QueryKind::GradYF, x, y, base_->grad_y_f(x, y));
  }
  RealVector grad_y_g(const RealVector& x, const RealVector& y) const override {
    return log(QueryKind::GradYG, x, y, base_->grad_y_g(x, y));
  }
  RealVector hess_y_g_vec(const RealVector& x, const RealVector& y,
                          const RealVector& v) const override {
    return log(QueryKind::HessYG, x, y, base_->hess_y_g_vec(x, y, v));
  }
  RealVector jac_xy_g_vec(const RealVector& x, const RealVector& y,
                          const RealVector& v) const override {
    return log(QueryKind::JacXYG, x, y, base_->jac_xy_g_vec(x, y, v));
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

  void note_x(const RealVector& x) const {
    if (profile_.x_iterates.empty() || profile_.x_iterates.back() != x) {
      profile_.x_iterates.push_back(x);
    }
  }

 private:
  RealVector log(QueryKind kind, const RealVector& x, const RealVector& y,
                 RealVector response) const {
    const double tol = profile_.tol_active;
    profile_.events.push_back(
        {kind, support_index(x, tol), support_index(y, tol), support_index(response, tol)});
    note_x(x);
    return response;
  }

  OraclePtr base_;
  SupportProfile& profile_;
};

long long inner_steps_for(const Budgets& b) {
  if (b.K < 0 || b.Q < 0 || b.T < 0) throw ContractError("budgets must be nonnegative");
  if (b.Q == 0) return 0;
  if (b.T < 1) throw ContractError("budgets: T must be at least 1 when Q > 0");
  if (b.K % b.Q != 0 || b.K / b.Q < 1) {
    std::ostringstream msg;
    msg << "budgets: K = " << b.K << " must be a positive multiple of Q = " << b.Q;
    throw ContractError(msg.str());
  }
  return b.K / b.Q;
}

SimulationResult simulate(const OraclePtr& base, bool convex, SimAlgorithm algorithm,
                          const Budgets& budgets, const SimulationOptions& opt) {
  SimulationResult result;
  SupportProfile& profile = result.profile;
  profile.tol_active = opt.tol_active;
  profile.budgets = budgets;
  const Index p = base->p();

  if (algorithm == SimAlgorithm::Custom) {
    if (!opt.script) throw ContractError("simulate_on_instance: custom algorithm needs a script");
    auto traced = std::make_shared<TracingOracle>(base, profile);
    const SpanQueries queries(*traced);
    result.x_final = opt.script(queries);
    if (result.x_final.size() != p) throw ContractError("script returned x of wrong dimension");
    profile.schedule = "custom script; budgets as declared by the caller";
  } else {
    const long long N = inner_steps_for(budgets);
    profile.inner_steps = N;
    if (budgets.Q == 0) {
      result.x_final = RealVector::Zero(p);
      profile.schedule = "no x-updates";
    } else {
      OraclePtr run_oracle = base;
      if (convex && algorithm != SimAlgorithm::BaselineAidGd) {
        run_oracle = regularize_convex(base, opt.regularization_eps, 1.0);
      }
      auto traced = std::make_shared<TracingOracle>(run_oracle, profile);
      const SmoothnessConstants& c = run_oracle->constants();
      const double L_phi = l_phi_estimate(c, LPhiRegime::QuadraticG);
      const AgdConfig agd = AgdConfig::from(c, static_cast<int>(N));
      const HeavyBallConfig hb = HeavyBallConfig::from(c, static_cast<int>(budgets.T));
      const int Q = static_cast<int>(budgets.Q);
      RunTrace trace;
      switch (algorithm) {
        case SimAlgorithm::BaselineAidGd:
          trace = baseline_aid_gd(traced, 1.0 / L_phi, Q, agd, hb);
          break;
        case SimAlgorithm::AccBiO: {
          AccBiOConfig cfg{Q, L_phi, c.mu_x, agd, hb, opt.regularization_eps};
          trace = accbio(traced, cfg);
          break;
        }
        case SimAlgorithm::AccBiOBG:
          trace = accbio_bg(traced, AccBiOBGConfig::from(Q, L_phi, c.mu_x, agd, hb, 0.0));
          break;
        case SimAlgorithm::Custom:
          break;
      }
      result.x_final = trace.x_final;
      result.trace = std::move(trace);
      std::ostringstream sched;
      sched << sim_algorithm_name(algorithm) << ": Q = " << budgets.Q
            << " x-updates, one after every " << N << " inner steps (s_m = " << N << "(m+1)), T = "
            << budgets.T << " heavy-ball steps per hypergradient";
      profile.schedule = sched.str();
    }
  }

  if (profile.x_iterates.empty() || profile.x_iterates.back() != result.x_final) {
    profile.x_iterates.push_back(result.x_final);
  }
  Index running = 0;
  for (const RealVector& x : profile.x_iterates) {
    running = std::max(running, support_index(x, profile.tol_active));
    profile.x_index.push_back(running);
  }
  return result;
}

LowerBoundReport support_report(const SupportProfile& profile, const char* kind, long long cap,
                                const StructuredOperator& Z, const RealVector& b,
                                long long depth, const SupportTolerances& tol) {
  LowerBoundReport rep;
  rep.instance_kind = kind;
  rep.check = "support_cap";
  rep.budgets = profile.budgets;
  rep.predicted_support_cap = cap;
  rep.tol_support = tol.support;
  rep.tol_span = tol.span;
  rep.floor_pass = true;

  const DenseMatrix basis =
      depth >= 0 ? krylov_basis(StructuredOperator::power(Z, 2), Z.apply(b), depth)
                 : DenseMatrix(Z.dim(), 0);
  Index observed = 0;
  double worst = 0.0;
  for (const RealVector& x : profile.x_iterates) {
    observed = std::max(observed, support_index(x, tol.support));
    worst = std::max(worst, span_residual(basis, x));
  }
  rep.observed_max_index = observed;
  rep.span_residual = worst;
  rep.support_pass = observed <= cap;
  rep.span_pass = worst <= tol.span;
  rep.pass = rep.support_pass && rep.span_pass;
  std::ostringstream msg;
  msg << profile.x_iterates.size() << " x-iterates; span depth " << depth;
  rep.detail = msg.str();
  return rep;
}

}  // namespace

const char* query_kind_name(QueryKind kind) {
  switch (kind) {
    case QueryKind::GradXF:
      return "grad_x_f";
    case QueryKind::GradYF:
      return "grad_y_f";
    case QueryKind::GradYG:
      return "grad_y_g";
    case QueryKind::HessYG:
      return "hess_y_g_vec";
    case QueryKind::JacXYG:
      return "jac_xy_g_vec";
  }
  return "unknown";
}

const char* sim_algorithm_name(SimAlgorithm algorithm) {
  switch (algorithm) {
    case SimAlgorithm::BaselineAidGd:
      return "baseline_aid_gd";
    case SimAlgorithm::AccBiO:
      return "accbio";
    case SimAlgorithm::AccBiOBG:
      return "accbio_bg";
    case SimAlgorithm::Custom:
      return "custom";
  }
  return "unknown";
}

Index SupportProfile::max_x_index() const { return x_index.empty() ? 0 : x_index.back(); }

RealVector SpanQueries::grad_x_f(const RealVector& x, const RealVector& y) const {
  return oracle_.grad_x_f(x, y);
}
RealVector SpanQueries::grad_y_f(const RealVector& x, const RealVector& y) const {
  return oracle_.grad_y_f(x, y);
}
RealVector SpanQueries::grad_y_g(const RealVector& x, const RealVector& y) const {
  return oracle_.grad_y_g(x, y);
}
RealVector SpanQueries::hess_y_g_vec(const RealVector& x, const RealVector& y,
                                     const RealVector& v) const {
  return oracle_.hess_y_g_vec(x, y, v);
}
RealVector SpanQueries::jac_xy_g_vec(const RealVector& x, const RealVector& y,
                                     const RealVector& v) const {
  return oracle_.jac_xy_g_vec(x, y, v);
}

SimulationResult simulate_on_instance(const ScscInstance& inst, SimAlgorithm algorithm,
                                      const Budgets& budgets, const SimulationOptions& opt) {
  const long long M = scsc_support_cap(budgets.K, budgets.Q, budgets.T);
  const Index need = scsc_feasible_dimension(inst.r, inst.lam_coef, inst.tau_coef, M,
                                             std::numeric_limits<Index>::max());
  if (inst.d < need) {
    std::ostringstream msg;
    msg << "simulate_on_instance: d = " << inst.d << " is infeasible for M = " << M
        << "; required d = " << need;
    throw ContractError(msg.str());
  }
  return simulate(inst.oracle, false, algorithm, budgets, opt);
}

SimulationResult simulate_on_instance(const CscInstance& inst, SimAlgorithm algorithm,
                                      const Budgets& budgets, const SimulationOptions& opt) {
  const long long M = csc_support_cap(budgets.K, budgets.Q, budgets.T);
  if (M > inst.d - 3) {
    std::ostringstream msg;
    msg << "simulate_on_instance: d = " << inst.d << " is infeasible for M = " << M
        << "; required d = " << M + 3;
    throw ContractError(msg.str());
  }
  return simulate(inst.oracle, true, algorithm, budgets, opt);
}

nlohmann::json to_json(const Budgets& b) { return {{"K", b.K}, {"Q", b.Q}, {"T", b.T}}; }

nlohmann::json to_json(const LowerBoundReport& r) {
  const auto opt = [](const std::optional<double>& v) -> nlohmann::json {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  return {{"instance_kind", r.instance_kind},
          {"check", r.check},
          {"budgets", to_json(r.budgets)},
          {"predicted_support_cap", r.predicted_support_cap},
          {"observed_max_index", r.observed_max_index},
          {"span_residual", opt(r.span_residual)},
          {"gap_floor", opt(r.gap_floor)},
          {"observed_gap", opt(r.observed_gap)},
          {"grad_floor", opt(r.grad_floor)},
          {"observed_grad_norm", opt(r.observed_grad_norm)},
          {"tolerances", {{"support", r.tol_support}, {"span", r.tol_span}}},
          {"support_pass", r.support_pass},
          {"span_pass", r.span_pass},
          {"floor_pass", r.floor_pass},
          {"pass", r.pass},
          {"detail", r.detail}};
}

DenseMatrix krylov_basis(const StructuredOperator& Z2, const RealVector& u, long long depth) {
  const Index d = Z2.dim();
  if (u.size() != d) throw ContractError("krylov_basis: dimension mismatch");
  const Index max_cols = std::min<Index>(d, static_cast<Index>(std::max(0LL, depth) + 1));
  DenseMatrix basis(d, max_cols);
  const double un = u.norm();
  if (depth < 0 || un == 0.0) return DenseMatrix(d, 0);
  RealVector v = u / un;
  Index cols = 0;
  for (;;) {
    basis.col(cols++) = v;
    if (cols == max_cols) break;
    RealVector w = Z2.apply(v);
    const double scale = w.norm();
    for (int pass = 0; pass < 2; ++pass) {
      w -= basis.leftCols(cols) * (basis.leftCols(cols).transpose() * w);
    }
    const double wn = w.norm();
    if (!(wn > 1e-12 * scale)) break;
    v = w / wn;
  }
  return basis.leftCols(cols);
}

double span_residual(const DenseMatrix& basis, const RealVector& x) {
  const double xn = x.norm();
  if (xn == 0.0) return 0.0;
  if (basis.cols() == 0) return 1.0;
  return (x - basis * (basis.transpose() * x)).norm() / xn;
}

LowerBoundReport verify_support_cap(const SupportProfile& profile, const ScscInstance& inst,
                                    const SupportTolerances& tol) {
  const Budgets& b = profile.budgets;
  const long long M = scsc_support_cap(b.K, b.Q, b.T);
  return support_report(profile, "scsc", M, inst.Z, inst.b, M - 2, tol);
}

LowerBoundReport verify_support_cap(const SupportProfile& profile, const CscInstance& inst,
                                    const SupportTolerances& tol) {
  const Budgets& b = profile.budgets;
  const long long M = csc_support_cap(b.K, b.Q, b.T);
  return support_report(profile, "csc", M, inst.Z, inst.b, M - 3, tol);
}

LowerBoundReport verify_gap_floor(const ScscInstance& inst, const RealVector& x_final,
                                  long long M) {
  LowerBoundReport rep;
  rep.instance_kind = "scsc";
  rep.check = "gap_floor";
  rep.predicted_support_cap = M;
  rep.gap_floor = scsc_gap_floor(inst, M, RealVector::Zero(inst.d));
  rep.observed_gap = inst.oracle->phi_gap(x_final);
  rep.observed_max_index = support_index(x_final, rep.tol_support);
  rep.floor_pass = *rep.observed_gap >= *rep.gap_floor;
  rep.pass = rep.floor_pass;
  return rep;
}

LowerBoundReport verify_grad_floor(const CscInstance& inst, const RealVector& x_final,
                                   long long M) {
  if (M > inst.d - 3) {
    std::ostringstream msg;
    msg << "verify_grad_floor: M = " << M << " exceeds d - 3 = " << inst.d - 3;
    throw ContractError(msg.str());
  }
  LowerBoundReport rep;
  rep.instance_kind = "csc";
  rep.check = "grad_floor";
  rep.predicted_support_cap = M;
  rep.grad_floor = inst.grad_floor;
  rep.observed_grad_norm = inst.oracle->grad_phi(x_final).norm();
  rep.observed_max_index = support_index(x_final, rep.tol_support);
  rep.floor_pass = *rep.observed_grad_norm >= *rep.grad_floor;
  rep.pass = rep.floor_pass;
  return rep;
}

}  // namespace bilevel
