#pragma once

#include "bilevel/accel_solvers.hpp"
#include "bilevel/linalg.hpp"
#include "bilevel/oracle.hpp"
#include "bilevel/worst_case.hpp"

#include <json.hpp>

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace bilevel {

/// K total iterations, Q x-updates, T Hessian-vector products per hypergradient.
struct Budgets {
  long long K = 0;
  long long Q = 0;
  long long T = 0;
};

enum class QueryKind { GradXF, GradYF, GradYG, HessYG, JacXYG };

const char* query_kind_name(QueryKind kind);

struct SupportEvent {
  QueryKind kind = QueryKind::GradXF;
  /// Support indices: 1-based position of the last coordinate with
  /// |v_t| > tol·‖v‖_∞, or 0 for a zero vector.
  Index x_index = 0;
  Index y_index = 0;
  Index response_index = 0;
};

struct SupportProfile {
  double tol_active = 1e-10;
  Budgets budgets;
  /// Inner steps per x-update used to realize the budgets (0 for scripts).
  long long inner_steps = 0;
  /// Every oracle response, in order.
  std::vector<SupportEvent> events;
  /// Distinct x query points in order, followed by the final x.
  std::vector<RealVector> x_iterates;
  /// Running max of the active index over x_iterates.
  std::vector<Index> x_index;
  std::string schedule;

  Index max_x_index() const;
};

/// Query surface handed to scripted algorithms; no access to the exact surface.
class SpanQueries {
 public:
  explicit SpanQueries(const BilevelOracle& oracle) : oracle_(oracle) {}
  Index p() const { return oracle_.p(); }
  Index q() const { return oracle_.q(); }
  RealVector grad_x_f(const RealVector& x, const RealVector& y) const;
  RealVector grad_y_f(const RealVector& x, const RealVector& y) const;
  RealVector grad_y_g(const RealVector& x, const RealVector& y) const;
  RealVector hess_y_g_vec(const RealVector& x, const RealVector& y, const RealVector& v) const;
  RealVector jac_xy_g_vec(const RealVector& x, const RealVector& y, const RealVector& v) const;

 private:
  const BilevelOracle& oracle_;
};

/// A scripted algorithm returns its final x.
using SpanScript = std::function<RealVector(const SpanQueries&)>;

enum class SimAlgorithm { BaselineAidGd, AccBiO, AccBiOBG, Custom };

const char* sim_algorithm_name(SimAlgorithm algorithm);

struct SimulationOptions {
  double tol_active = 1e-10;
  /// Used for the convex instance, where the solvers run on a regularized oracle.
  double regularization_eps = 1e-3;
  SpanScript script;
};

struct SimulationResult {
  RealVector x_final;
  SupportProfile profile;
  std::optional<RunTrace> trace;
};

/// Runs `algorithm` with N = K/Q inner steps and M = T heavy-ball steps per x-update.
SimulationResult simulate_on_instance(const ScscInstance& inst, SimAlgorithm algorithm,
                                      const Budgets& budgets, const SimulationOptions& opt = {});
SimulationResult simulate_on_instance(const CscInstance& inst, SimAlgorithm algorithm,
                                      const Budgets& budgets, const SimulationOptions& opt = {});

struct LowerBoundReport {
  std::string instance_kind;
  std::string check;
  Budgets budgets;
  long long predicted_support_cap = 0;
  Index observed_max_index = 0;
  std::optional<double> span_residual;
  std::optional<double> gap_floor;
  std::optional<double> observed_gap;
  std::optional<double> grad_floor;
  std::optional<double> observed_grad_norm;
  double tol_support = 1e-10;
  double tol_span = 1e-8;
  bool support_pass = true;
  bool span_pass = true;
  bool floor_pass = true;
  bool pass = true;
  std::string detail;
};

nlohmann::json to_json(const LowerBoundReport& report);
nlohmann::json to_json(const Budgets& budgets);

/// Orthonormal basis of span{Z^{2j} u : 0 ≤ j ≤ depth} by Lanczos with full reorthogonalization.
DenseMatrix krylov_basis(const StructuredOperator& Z2, const RealVector& u, long long depth);

/// ‖x − QQᵀx‖ / ‖x‖ for an orthonormal Q; 0 for x = 0.
double span_residual(const DenseMatrix& basis, const RealVector& x);

struct SupportTolerances {
  double support = 1e-10;
  double span = 1e-8;
};

/// Every x-iterate vanishes beyond the predicted cap and lies in span{Z^{2j}(Zb)}.
LowerBoundReport verify_support_cap(const SupportProfile& profile, const ScscInstance& inst,
                                    const SupportTolerances& tol = {});
LowerBoundReport verify_support_cap(const SupportProfile& profile, const CscInstance& inst,
                                    const SupportTolerances& tol = {});

/// Pass iff Φ(x_final) − Φ* ≥ scsc_gap_floor(inst, M, 0).
LowerBoundReport verify_gap_floor(const ScscInstance& inst, const RealVector& x_final,
                                  long long M);

/// Pass iff ‖∇Φ(x_final)‖ ≥ inst.grad_floor; needs M ≤ d − 3.
LowerBoundReport verify_grad_floor(const CscInstance& inst, const RealVector& x_final,
                                   long long M);

}  // namespace bilevel
