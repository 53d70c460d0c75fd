#include "bilevel/hypergrad.hpp"

#include "bilevel/errors.hpp"

#include <cmath>
#include <sstream>
#include <vector>

namespace bilevel {

namespace {

void require_finite_iterate(const RealVector& v, const char* who, std::size_t step) {
  if (!v.allFinite()) {
    std::ostringstream msg;
    msg << who << ": non-finite iterate at step " << step;
    throw DivergenceError(msg.str(), step);
  }
}

}  // namespace

AgdConfig AgdConfig::from(const SmoothnessConstants& c, int N) {
  AgdConfig cfg{N, c.Ltil_y, c.mu_y};
  cfg.validate();
  return cfg;
}

void AgdConfig::validate() const {
  if (N < 1) throw ContractError("AgdConfig: N must be at least 1");
  if (!(mu_y > 0.0) || !(Ltil_y >= mu_y) || !std::isfinite(Ltil_y)) {
    throw ContractError("AgdConfig: need 0 < mu_y <= Ltil_y");
  }
}

double AgdConfig::lead_coef() const {
  const double s = std::sqrt(kappa_y());
  return 2.0 * s / (s + 1.0);
}

double AgdConfig::momentum() const {
  const double s = std::sqrt(kappa_y());
  return (s - 1.0) / (s + 1.0);
}

HeavyBallConfig HeavyBallConfig::from(double Ltil_y, double mu_y, int M) {
  if (!(mu_y > 0.0) || !(Ltil_y >= mu_y)) {
    throw ContractError("HeavyBallConfig: need 0 < mu_y <= Ltil_y");
  }
  HeavyBallConfig cfg;
  cfg.M = M;
  const double root = std::sqrt(Ltil_y) + std::sqrt(mu_y);
  cfg.hb_step = 4.0 / (root * root);
  const double a = 1.0 - std::sqrt(cfg.hb_step * mu_y);
  const double b = 1.0 - std::sqrt(cfg.hb_step * Ltil_y);
  cfg.hb_momentum = std::max(a * a, b * b);
  cfg.validate();
  return cfg;
}

HeavyBallConfig HeavyBallConfig::from(const SmoothnessConstants& c, int M) {
  return from(c.Ltil_y, c.mu_y, M);
}

void HeavyBallConfig::validate() const {
  if (M < 1) throw ContractError("HeavyBallConfig: M must be at least 1");
  if (!(hb_step > 0.0)) throw ContractError("HeavyBallConfig: hb_step must be positive");
  if (!(hb_momentum >= 0.0 && hb_momentum < 1.0)) {
    throw ContractError("HeavyBallConfig: hb_momentum must lie in [0, 1)");
  }
}

RealVector agd_inner(const BilevelOracle& oracle, const RealVector& x, const RealVector& y0,
                     const AgdConfig& cfg) {
  cfg.validate();
  if (y0.size() != oracle.q()) throw ContractError("agd_inner: y0 has the wrong dimension");
  const double step = cfg.step();
  const double lead = cfg.lead_coef();
  const double mom = cfg.momentum();
  RealVector y_prev = y0;
  RealVector s = y0;
  for (int t = 1; t <= cfg.N; ++t) {
    RealVector y = s - step * oracle.grad_y_g(x, s);
    s = lead * y - mom * y_prev;
    require_finite_iterate(s, "agd_inner", static_cast<std::size_t>(t));
    y_prev = std::move(y);
  }
  return y_prev;
}

double agd_envelope(const AgdConfig& cfg, double initial_distance) {
  return std::sqrt((cfg.Ltil_y + cfg.mu_y) / cfg.mu_y) * initial_distance *
         std::exp(-cfg.N / (2.0 * std::sqrt(cfg.kappa_y())));
}

HeavyBallStepper::HeavyBallStepper(const HeavyBallConfig& cfg, RealVector previous,
                                   RealVector current)
    : hb_step_(cfg.hb_step),
      hb_momentum_(cfg.hb_momentum),
      previous_(std::move(previous)),
      current_(std::move(current)) {
  if (previous_.size() != current_.size()) {
    throw ContractError("HeavyBallStepper: state vectors differ in dimension");
  }
}

void HeavyBallStepper::step(const HessianApply& hess_apply, const RealVector& rhs) {
  RealVector next = current_ - hb_step_ * (hess_apply(current_) - rhs) +
                    hb_momentum_ * (current_ - previous_);
  ++steps_;
  require_finite_iterate(next, "heavy_ball", static_cast<std::size_t>(steps_));
  previous_ = std::move(current_);
  current_ = std::move(next);
}

RealVector heavy_ball_solve(const HessianApply& hess_apply, const RealVector& rhs,
                            const HeavyBallConfig& cfg) {
  cfg.validate();
  HeavyBallStepper stepper(cfg, RealVector::Zero(rhs.size()), RealVector::Zero(rhs.size()));
  for (int t = 0; t < cfg.M; ++t) stepper.step(hess_apply, rhs);
  return stepper.current();
}

double aid_error_bound(const SmoothnessConstants& c, int N, int M, double M_k, double N_k) {
  const double mu = c.mu_y;
  const double kappa = c.kappa_y();
  const double root = std::sqrt(kappa);
  const double inner = std::sqrt((c.Ltil_y + mu) / mu) *
                       (c.L_y + 2.0 * c.Ltil_xy * c.L_y / mu +
                        (c.rho_xy / mu + c.Ltil_xy * c.rho_yy / (mu * mu)) * N_k) *
                       M_k * std::exp(-N / (2.0 * root));
  const double linear = c.Ltil_xy / mu * std::pow((root - 1.0) / (root + 1.0), M) * N_k;
  return inner + linear;
}

HypergradientEstimate aid_estimate(const BilevelOracle& oracle, const RealVector& x,
                                   const RealVector& y0, const AgdConfig& agd,
                                   const HeavyBallConfig& hb) {
  hb.validate();
  HypergradientEstimate est;
  est.y_N = agd_inner(oracle, x, y0, agd);
  const RealVector& y = est.y_N;
  const RealVector rhs = oracle.grad_y_f(x, y);
  const RealVector v = heavy_ball_solve(
      [&](const RealVector& u) { return oracle.hess_y_g_vec(x, y, u); }, rhs, hb);
  est.hb_iterations = hb.M;
  est.G = oracle.grad_x_f(x, y) - oracle.jac_xy_g_vec(x, y, v);

  const BilevelOracle& exact = oracle.exact();
  const Capabilities caps = exact.capabilities();
  if (caps.y_star) {
    est.inner_residual = (y - exact.y_star(x)).norm();
  }
  if (caps.y_star && caps.phi_star) {
    const SmoothnessConstants& c = exact.constants();
    const RealVector xs = exact.x_star();
    const RealVector ys = exact.y_star(xs);
    const double dist = (x - xs).norm();
    const double M_k = (y0 - ys).norm() + c.Ltil_xy / c.mu_y * dist;
    const double N_k =
        exact.grad_y_f(xs, ys).norm() + (c.L_xy + c.L_y * c.Ltil_xy / c.mu_y) * dist;
    est.error_bound = aid_error_bound(c, agd.N, hb.M, M_k, N_k);
  }
  return est;
}

HypergradientEstimate itd_estimate(const BilevelOracle& oracle, const RealVector& x,
                                   const RealVector& y0, int N, double eta) {
  if (N < 1) throw ContractError("itd_estimate: N must be at least 1");
  const double Ltil_y = oracle.constants().Ltil_y;
  if (!(eta > 0.0) || eta > 1.0 / Ltil_y) {
    throw ContractError("itd_estimate: eta must lie in (0, 1/Ltil_y]");
  }
  if (y0.size() != oracle.q()) throw ContractError("itd_estimate: y0 has the wrong dimension");

  std::vector<RealVector> ys;
  ys.reserve(static_cast<std::size_t>(N) + 1);
  ys.push_back(y0);
  for (int t = 1; t <= N; ++t) {
    ys.push_back(ys.back() - eta * oracle.grad_y_g(x, ys.back()));
    require_finite_iterate(ys.back(), "itd_estimate", static_cast<std::size_t>(t));
  }

  HypergradientEstimate est;
  est.y_N = ys.back();
  est.G = oracle.grad_x_f(x, est.y_N);
  // w holds Π_{j=t+1}^{N−1}(I − η∇²_y g(x, y^j)) ∇_y f(x, y^N) while term t is added.
  RealVector w = oracle.grad_y_f(x, est.y_N);
  for (int t = N - 1; t >= 0; --t) {
    const RealVector& yt = ys[static_cast<std::size_t>(t)];
    est.G -= eta * oracle.jac_xy_g_vec(x, yt, w);
    if (t >= 1) w -= eta * oracle.hess_y_g_vec(x, yt, w);
  }

  const BilevelOracle& exact = oracle.exact();
  if (exact.capabilities().y_star) est.inner_residual = (est.y_N - exact.y_star(x)).norm();
  return est;
}

}  // namespace bilevel
