#pragma once

#include "bilevel/errors.hpp"
#include "bilevel/hypergrad.hpp"
#include "bilevel/linalg.hpp"
#include "bilevel/oracle.hpp"

#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace bilevel {

/// ⌈c·√κ_y·ln(1/eps)⌉, at least 1.
int auto_inner_steps(double kappa_y, double eps, double c = 2.0);

struct AccBiOConfig {
  int K = 1;
  double L_phi = 1.0;
  double mu_x = 1.0;
  AgdConfig agd;
  HeavyBallConfig hb;
  double eps = 1e-6;

  double kappa_x() const { return L_phi / mu_x; }
  /// (√κ_x−1)/(√κ_x+1).
  double momentum() const;
  void validate() const;
};

struct AccBiOBGConfig {
  int K = 1;
  double alpha = 0.0;
  double mu_x = 1.0;
  AgdConfig agd;
  HeavyBallConfig hb;
  /// Bound on ‖∇_y f‖ assumed by the step-size analysis.
  double U = 0.0;
  /// Start each inner solve at the previous y_N instead of 0.
  bool warm_start = true;

  /// Fills the step sizes from alpha = 1/(2 L_phi).
  static AccBiOBGConfig from(int K, double L_phi, double mu_x, const AgdConfig& agd,
                             const HeavyBallConfig& hb, double U);
  double eta() const;
  double tau() const;
  double beta() const;
  void validate() const;
};

struct TraceRecord {
  int k = 0;
  std::optional<double> phi_gap;
  std::optional<double> grad_norm;
  /// ‖G − ∇Φ‖ of the hypergradient that produced this iterate.
  std::optional<double> hypergrad_error;
  OracleCounters counters;
};

enum class RunStatus { Completed, Diverged };

struct RunTrace {
  std::string algorithm;
  std::vector<TraceRecord> records;
  RunStatus status = RunStatus::Completed;
  /// True when grad_norm is ‖∇Φ‖, false when it is the estimate ‖G‖.
  bool grad_norm_exact = true;
  RealVector x_final;
  /// Total inner gradient steps over the run.
  long long inner_steps = 0;
  std::string message;

  const TraceRecord& last() const { return records.back(); }
};

/// Raised when a run produces a non-finite iterate or its gap explodes.
/// Carries the trace up to the last good iterate.
class RunDivergedError : public DivergenceError {
 public:
  RunDivergedError(const std::string& what, std::size_t step, RunTrace partial)
      : DivergenceError(what, step), partial_(std::move(partial)) {}
  const RunTrace& partial() const { return partial_; }

 private:
  RunTrace partial_;
};

/// Header `k,phi_gap,grad_norm,hypergrad_error,n_G,n_J,n_H,complexity`.
void write_trace_csv(const RunTrace& trace, std::ostream& out);
std::string trace_csv(const RunTrace& trace);
/// Shortest decimal that round-trips to `value`.
std::string format_double(double value);

/// Accelerated outer loop; iterate k of the trace is z_k. y restarts at 0 every iteration.
RunTrace accbio(const OraclePtr& oracle, const AccBiOConfig& cfg, double tau_cost = 2.0);

/// Accelerated outer loop with the inner solve warm-started; iterate k is z_k.
RunTrace accbio_bg(const OraclePtr& oracle, const AccBiOBGConfig& cfg, double tau_cost = 2.0);

/// x_{k+1} = x_k − stepsize·G_k with AID hypergradients; iterate k is x_k.
RunTrace baseline_aid_gd(const OraclePtr& oracle, double stepsize, int K, const AgdConfig& agd,
                         const HeavyBallConfig& hb, double tau_cost = 2.0,
                         bool warm_start = false);

enum class LPhiRegime { QuadraticG, BoundedGradient, GeneralScsc };

struct LPhiInputs {
  /// U of the bounded-gradient regime.
  std::optional<double> U;
  /// ‖∇_y f(x*, y*(x*))‖.
  std::optional<double> grad_y_f_opt;
  std::optional<double> x_star_norm;
  /// Φ(0) − Φ*.
  std::optional<double> initial_gap;
  double eps = 0.0;
};

double l_phi_estimate(const SmoothnessConstants& c, LPhiRegime regime,
                      const LPhiInputs& inputs = {});

/// Reads the optimum-dependent inputs from the exact surface.
LPhiInputs l_phi_inputs_from_exact(const BilevelOracle& oracle, double eps);

/// f̃ = f + (eps/2R)‖x‖²; mu_x and L_x each grow by eps/R.
OraclePtr regularize_convex(const OraclePtr& oracle, double eps, double R);

}  // namespace bilevel
