#pragma once

#include "bilevel/linalg.hpp"
#include "bilevel/oracle.hpp"

#include <functional>
#include <optional>

namespace bilevel {

/// Nesterov's constant-momentum method for the inner problem, step 1/Ltil_y.
struct AgdConfig {
  int N = 1;
  double Ltil_y = 1.0;
  double mu_y = 1.0;

  static AgdConfig from(const SmoothnessConstants& c, int N);
  void validate() const;
  double step() const { return 1.0 / Ltil_y; }
  double kappa_y() const { return Ltil_y / mu_y; }
  /// 2√κ/(√κ+1), the weight on the newest iterate.
  double lead_coef() const;
  /// (√κ−1)/(√κ+1).
  double momentum() const;
};

struct HeavyBallConfig {
  int M = 1;
  double hb_step = 1.0;
  double hb_momentum = 0.0;

  /// hb_step = 4/(√Ltil_y+√mu_y)², hb_momentum = max{(1−√(hb_step·mu_y))², (1−√(hb_step·Ltil_y))²}.
  static HeavyBallConfig from(double Ltil_y, double mu_y, int M);
  static HeavyBallConfig from(const SmoothnessConstants& c, int M);
  void validate() const;
};

struct HypergradientEstimate {
  RealVector G;
  /// Inner iterate the estimate was built at; the next warm start.
  RealVector y_N;
  /// ‖y_N − y*(x)‖ when the exact surface is present.
  std::optional<double> inner_residual;
  int hb_iterations = 0;
  /// Right-hand side of the AID error bound when x* is known.
  std::optional<double> error_bound;
};

using HessianApply = std::function<RealVector(const RealVector&)>;

/// Runs N accelerated steps from y0 on g(x, ·).
RealVector agd_inner(const BilevelOracle& oracle, const RealVector& x, const RealVector& y0,
                     const AgdConfig& cfg);

/// √((Ltil_y+mu_y)/mu_y)·‖y0−y*‖·exp(−N/(2√κ_y)).
double agd_envelope(const AgdConfig& cfg, double initial_distance);

/// One heavy-ball iteration v⁺ = v − hb_step·(Hv − rhs) + hb_momentum·(v − v⁻).
class HeavyBallStepper {
 public:
  HeavyBallStepper(const HeavyBallConfig& cfg, RealVector previous, RealVector current);
  void step(const HessianApply& hess_apply, const RealVector& rhs);
  const RealVector& current() const { return current_; }
  int steps() const { return steps_; }

 private:
  double hb_step_;
  double hb_momentum_;
  RealVector previous_;
  RealVector current_;
  int steps_ = 0;
};

/// M heavy-ball iterations for H v = rhs from v⁰ = v¹ = 0, one product with H each.
RealVector heavy_ball_solve(const HessianApply& hess_apply, const RealVector& rhs,
                            const HeavyBallConfig& cfg);

/// Right-hand side of the AID error bound, given M_k and N_k.
double aid_error_bound(const SmoothnessConstants& c, int N, int M, double M_k, double N_k);

/// AGD for y_N, heavy-ball for v ≈ [∇²_y g]⁻¹∇_y f, then
/// G = ∇_x f(x, y_N) − ∇_x∇_y g(x, y_N) v.
HypergradientEstimate aid_estimate(const BilevelOracle& oracle, const RealVector& x,
                                   const RealVector& y0, const AgdConfig& agd,
                                   const HeavyBallConfig& hb);

/// Reverse-mode differentiation through N plain gradient steps of size eta.
HypergradientEstimate itd_estimate(const BilevelOracle& oracle, const RealVector& x,
                                   const RealVector& y0, int N, double eta);

}  // namespace bilevel
