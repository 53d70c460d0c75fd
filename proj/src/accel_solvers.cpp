#include "bilevel/accel_solvers.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

namespace bilevel {

int auto_inner_steps(double kappa_y, double eps, double c) {
  if (!(kappa_y >= 1.0) || !(eps > 0.0) || !(c > 0.0)) {
    throw ContractError("auto_inner_steps: need kappa_y >= 1, eps > 0, c > 0");
  }
  const double raw = std::ceil(c * std::sqrt(kappa_y) * std::log(1.0 / eps));
  return std::max(1, static_cast<int>(raw));
}

double AccBiOConfig::momentum() const {
  const double s = std::sqrt(kappa_x());
  return (s - 1.0) / (s + 1.0);
}

void AccBiOConfig::validate() const {
  if (K < 1) throw ContractError("AccBiOConfig: K must be at least 1");
  if (!(mu_x > 0.0) || !(L_phi >= mu_x) || !std::isfinite(L_phi)) {
    throw ContractError("AccBiOConfig: need L_phi >= mu_x > 0");
  }
  agd.validate();
  hb.validate();
}

AccBiOBGConfig AccBiOBGConfig::from(int K, double L_phi, double mu_x, const AgdConfig& agd,
                                    const HeavyBallConfig& hb, double U) {
  AccBiOBGConfig cfg;
  cfg.K = K;
  cfg.alpha = 1.0 / (2.0 * L_phi);
  cfg.mu_x = mu_x;
  cfg.agd = agd;
  cfg.hb = hb;
  cfg.U = U;
  cfg.validate();
  return cfg;
}

double AccBiOBGConfig::eta() const {
  const double s = std::sqrt(alpha * mu_x);
  return s / (s + 2.0);
}

double AccBiOBGConfig::tau() const { return std::sqrt(alpha * mu_x) / 2.0; }

double AccBiOBGConfig::beta() const { return std::sqrt(alpha / mu_x); }

void AccBiOBGConfig::validate() const {
  if (K < 1) throw ContractError("AccBiOBGConfig: K must be at least 1");
  if (!(mu_x > 0.0) || !(alpha > 0.0) || !(alpha * mu_x <= 1.0)) {
    throw ContractError("AccBiOBGConfig: need alpha > 0, mu_x > 0, alpha*mu_x <= 1");
  }
  if (!(U >= 0.0)) throw ContractError("AccBiOBGConfig: U must be nonnegative");
  agd.validate();
  hb.validate();
}

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

void write_trace_csv(const RunTrace& trace, std::ostream& out) {
  out << "k,phi_gap,grad_norm,hypergrad_error,n_G,n_J,n_H,complexity\n";
  const auto opt = [](const std::optional<double>& v) {
    return v ? format_double(*v) : std::string();
  };
  for (const TraceRecord& r : trace.records) {
    out << r.k << ',' << opt(r.phi_gap) << ',' << opt(r.grad_norm) << ','
        << opt(r.hypergrad_error) << ',' << r.counters.n_G << ',' << r.counters.n_J << ','
        << r.counters.n_H << ',' << format_double(r.counters.complexity()) << '\n';
  }
}

std::string trace_csv(const RunTrace& trace) {
  std::ostringstream out;
  write_trace_csv(trace, out);
  return out.str();
}

namespace {

constexpr double kGapGrowthLimit = 1e6;

class Recorder {
 public:
  Recorder(std::string algorithm, const OraclePtr& base, double tau_cost)
      : exact_(base->exact()), caps_(exact_.capabilities()) {
    auto [wrapped, counters] = counted(base, tau_cost);
    oracle_ = std::move(wrapped);
    counters_ = std::move(counters);
    trace_.algorithm = std::move(algorithm);
    trace_.grad_norm_exact = caps_.grad_phi;
  }

  const BilevelOracle& oracle() const { return *oracle_; }

  /// Records iterate `out`; `est` and `query` describe the hypergradient that produced it.
  void record(int k, const RealVector& out, const HypergradientEstimate* est,
              const RealVector* query) {
    if (!out.allFinite()) fail(k, "non-finite iterate");
    TraceRecord r;
    r.k = k;
    if (caps_.phi_star) {
      r.phi_gap = exact_.phi_gap(out);
      if (!initial_gap_) initial_gap_ = *r.phi_gap;
      if (*initial_gap_ > 0.0 && *r.phi_gap > kGapGrowthLimit * *initial_gap_) {
        fail(k, "optimality gap grew beyond 1e6 times its initial value");
      }
    }
    if (caps_.grad_phi) {
      r.grad_norm = exact_.grad_phi(out).norm();
      if (est != nullptr) r.hypergrad_error = (est->G - exact_.grad_phi(*query)).norm();
    } else if (est != nullptr) {
      r.grad_norm = est->G.norm();
    }
    r.counters = *counters_;
    trace_.records.push_back(r);
    trace_.x_final = out;
  }

  void add_inner_steps(long long n) { trace_.inner_steps += n; }

  [[noreturn]] void fail(int k, const std::string& why) {
    trace_.status = RunStatus::Diverged;
    trace_.message = trace_.algorithm + ": " + why + " at iteration " + std::to_string(k);
    throw RunDivergedError(trace_.message, static_cast<std::size_t>(k), trace_);
  }

  /// Runs `fn`, converting numeric divergence inside it into a RunDivergedError.
  template <class Fn>
  auto guarded(int k, Fn&& fn) {
    try {
      return fn();
    } catch (const DivergenceError& e) {
      fail(k, e.what());
    }
  }

  RunTrace finish() {
    trace_.status = RunStatus::Completed;
    return std::move(trace_);
  }

 private:
  const BilevelOracle& exact_;
  Capabilities caps_;
  OraclePtr oracle_;
  CounterHandle counters_;
  RunTrace trace_;
  std::optional<double> initial_gap_;
};

}  // namespace

RunTrace accbio(const OraclePtr& oracle, const AccBiOConfig& cfg, double tau_cost) {
  cfg.validate();
  Recorder rec("accbio", oracle, tau_cost);
  const double m = cfg.momentum();
  const RealVector y0 = RealVector::Zero(oracle->q());
  RealVector x = RealVector::Zero(oracle->p());
  RealVector z = x;
  rec.record(0, z, nullptr, nullptr);
  for (int k = 0; k < cfg.K; ++k) {
    const HypergradientEstimate est =
        rec.guarded(k + 1, [&] { return aid_estimate(rec.oracle(), x, y0, cfg.agd, cfg.hb); });
    rec.add_inner_steps(cfg.agd.N);
    RealVector z_next = x - est.G / cfg.L_phi;
    RealVector x_next = (1.0 + m) * z_next - m * z;
    rec.record(k + 1, z_next, &est, &x);
    if (!x_next.allFinite()) rec.fail(k + 1, "non-finite iterate");
    z = std::move(z_next);
    x = std::move(x_next);
  }
  return rec.finish();
}

RunTrace accbio_bg(const OraclePtr& oracle, const AccBiOBGConfig& cfg, double tau_cost) {
  cfg.validate();
  Recorder rec(cfg.warm_start ? "accbio_bg" : "accbio_bg_cold", oracle, tau_cost);
  const double eta = cfg.eta();
  const double tau = cfg.tau();
  const double beta = cfg.beta();
  RealVector y = RealVector::Zero(oracle->q());
  RealVector x = RealVector::Zero(oracle->p());
  RealVector z = x;
  rec.record(0, z, nullptr, nullptr);
  for (int k = 0; k < cfg.K; ++k) {
    const RealVector xt = eta * x + (1.0 - eta) * z;
    const HypergradientEstimate est =
        rec.guarded(k + 1, [&] { return aid_estimate(rec.oracle(), xt, y, cfg.agd, cfg.hb); });
    rec.add_inner_steps(cfg.agd.N);
    if (cfg.warm_start) y = est.y_N;
    RealVector x_next = tau * xt + (1.0 - tau) * x - beta * est.G;
    z = xt - cfg.alpha * est.G;
    rec.record(k + 1, z, &est, &xt);
    if (!x_next.allFinite()) rec.fail(k + 1, "non-finite iterate");
    x = std::move(x_next);
  }
  return rec.finish();
}

RunTrace baseline_aid_gd(const OraclePtr& oracle, double stepsize, int K, const AgdConfig& agd,
                         const HeavyBallConfig& hb, double tau_cost, bool warm_start) {
  if (!(stepsize > 0.0)) throw ContractError("baseline_aid_gd: stepsize must be positive");
  if (K < 0) throw ContractError("baseline_aid_gd: K must be nonnegative");
  agd.validate();
  hb.validate();
  Recorder rec("baseline_aid_gd", oracle, tau_cost);
  RealVector y = RealVector::Zero(oracle->q());
  RealVector x = RealVector::Zero(oracle->p());
  rec.record(0, x, nullptr, nullptr);
  for (int k = 0; k < K; ++k) {
    const HypergradientEstimate est =
        rec.guarded(k + 1, [&] { return aid_estimate(rec.oracle(), x, y, agd, hb); });
    rec.add_inner_steps(agd.N);
    if (warm_start) y = est.y_N;
    RealVector x_next = x - stepsize * est.G;
    rec.record(k + 1, x_next, &est, &x);
    x = std::move(x_next);
  }
  return rec.finish();
}

double l_phi_estimate(const SmoothnessConstants& c, LPhiRegime regime,
                      const LPhiInputs& inputs) {
  c.validate();
  const double mu = c.mu_y;
  const double Lt = c.Ltil_xy;
  const double base = c.L_x + 2.0 * c.L_xy * Lt / mu + c.L_y * Lt * Lt / (mu * mu);
  const double curvature = (Lt * c.rho_yy / (mu * mu) + c.rho_xy / mu) * (1.0 + Lt / mu);
  switch (regime) {
    case LPhiRegime::QuadraticG:
      return base;
    case LPhiRegime::BoundedGradient:
      if (!inputs.U) throw CapabilityError("l_phi_estimate: bounded-gradient regime needs U");
      return base + *inputs.U * curvature;
    case LPhiRegime::GeneralScsc: {
      if (!inputs.grad_y_f_opt || !inputs.x_star_norm || !inputs.initial_gap) {
        throw CapabilityError(
            "l_phi_estimate: general regime needs ‖∇_y f(x*,y*)‖, ‖x*‖ and Φ(0)−Φ*");
      }
      if (curvature == 0.0) return base;
      if (!(c.mu_x > 0.0)) throw ContractError("l_phi_estimate: general regime needs mu_x > 0");
      const double radius = std::sqrt(2.0 / c.mu_x * *inputs.initial_gap +
                                      *inputs.x_star_norm * *inputs.x_star_norm +
                                      inputs.eps / c.mu_x);
      return base + curvature * *inputs.grad_y_f_opt +
             3.0 * curvature * (c.L_xy + c.L_y * Lt / mu) * radius;
    }
  }
  throw ContractError("l_phi_estimate: unknown regime");
}

LPhiInputs l_phi_inputs_from_exact(const BilevelOracle& oracle, double eps) {
  const BilevelOracle& exact = oracle.exact();
  const Capabilities caps = exact.capabilities();
  if (!caps.phi_star || !caps.y_star) {
    throw CapabilityError("l_phi_inputs_from_exact: oracle lacks x*, Φ* or y*");
  }
  LPhiInputs in;
  const RealVector xs = exact.x_star();
  in.grad_y_f_opt = exact.grad_y_f(xs, exact.y_star(xs)).norm();
  in.x_star_norm = xs.norm();
  in.initial_gap = exact.phi_gap(RealVector::Zero(exact.p()));
  in.eps = eps;
  return in;
}

namespace {

class RegularizedOracle final : public BilevelOracle {
 public:
  RegularizedOracle(OraclePtr base, double weight)
      : base_(std::move(base)), weight_(weight), constants_(base_->constants()) {
    constants_.mu_x += weight_;
    constants_.L_x += weight_;
  }

  Index p() const override { return base_->p(); }
  Index q() const override { return base_->q(); }
  const SmoothnessConstants& constants() const override { return constants_; }
  Capabilities capabilities() const override { return base_->capabilities(); }

  RealVector grad_x_f(const RealVector& x, const RealVector& y) const override {
    return base_->grad_x_f(x, y) + weight_ * x;
  }
  RealVector grad_y_f(const RealVector& x, const RealVector& y) const override {
    return base_->grad_y_f(x, y);
  }
  RealVector grad_y_g(const RealVector& x, const RealVector& y) const override {
    return base_->grad_y_g(x, y);
  }
  RealVector hess_y_g_vec(const RealVector& x, const RealVector& y,
                          const RealVector& v) const override {
    return base_->hess_y_g_vec(x, y, v);
  }
  RealVector jac_xy_g_vec(const RealVector& x, const RealVector& y,
                          const RealVector& v) const override {
    return base_->jac_xy_g_vec(x, y, v);
  }

  RealVector y_star(const RealVector& x) const override { return exact_base().y_star(x); }
  double f_value(const RealVector& x, const RealVector& y) const override {
    return exact_base().f_value(x, y) + 0.5 * weight_ * x.squaredNorm();
  }
  double phi(const RealVector& x) const override {
    return exact_base().phi(x) + 0.5 * weight_ * x.squaredNorm();
  }
  RealVector grad_phi(const RealVector& x) const override {
    return exact_base().grad_phi(x) + weight_ * x;
  }
  /// Φ̃* comes from a dense quadratic model, offered only when the wrapped Φ* is.
  double phi_star() const override { return model().phi_star; }
  RealVector x_star() const override { return model().x_star; }
  double phi_gap(const RealVector& x) const override {
    const QuadraticPhiModel& m = model();
    const RealVector e = x - m.x_star;
    return 0.5 * e.dot(m.P * e);
  }
  RealVector solve_inner_hessian(const RealVector& x, const RealVector& y,
                                 const RealVector& rhs) const override {
    return exact_base().solve_inner_hessian(x, y, rhs);
  }

 private:
  const BilevelOracle& exact_base() const { return base_->exact(); }
  const QuadraticPhiModel& model() const {
    if (!base_->capabilities().phi_star) {
      throw CapabilityError("regularized oracle: wrapped oracle has no Φ*");
    }
    return model_.get(*this);
  }

  OraclePtr base_;
  double weight_;
  SmoothnessConstants constants_;
  LazyQuadraticPhi model_;
};

}  // namespace

OraclePtr regularize_convex(const OraclePtr& oracle, double eps, double R) {
  if (!(eps >= 0.0) || !(R > 0.0)) {
    throw ContractError("regularize_convex: need eps >= 0 and R > 0");
  }
  return std::make_shared<RegularizedOracle>(oracle, eps / R);
}

}  // namespace bilevel
