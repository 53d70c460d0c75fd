#pragma once

#include "bilevel/linalg.hpp"
#include "bilevel/oracle.hpp"

#include <json.hpp>

#include <optional>
#include <string>

namespace bilevel {

struct WorstCaseOptions {
  double quartic_tol = 1e-14;
  Index dimension_cap = 4096;
  LinalgTolerances linalg{};
};

/// mu_x = mu_y = 0.5 and every smoothness constant 1.
SmoothnessConstants mild_preset();

/// max(L_xy, (L_x−mu_x)(Ltil_y−mu_y)/(2 Ltil_xy)).
double default_lbar_xy(const SmoothnessConstants& c);

/// Dimension-free coefficients of the strongly-convex instance.
struct ScscCoefficients {
  double alpha = 0.0;
  double beta = 0.0;
  double Lbar_xy = 0.0;
  double lam_coef = 0.0;
  double tau_coef = 0.0;
  /// Scalar with b̃ = gamma · Z b.
  double gamma = 0.0;
  double xi = 0.0;
  double bracket_lo = 0.0;
  double r = 0.0;
};

/// 1 − (4+λ)r + (6+2λ+τ)r² − (4+λ)r³ + r⁴.
double scsc_quartic(double r, double lam_coef, double tau_coef);

ScscCoefficients scsc_coefficients(const SmoothnessConstants& c,
                                   std::optional<double> Lbar_xy = std::nullopt,
                                   const WorstCaseOptions& opt = {});

struct ScscInstance {
  Index d = 0;
  SmoothnessConstants constants;
  double Lbar_xy = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  double lam_coef = 0.0;
  double tau_coef = 0.0;
  double gamma = 0.0;
  double xi = 0.0;
  double r = 0.0;
  RealVector b_tilde;
  RealVector b;
  RealVector x_hat;
  StructuredOperator Z = StructuredOperator::identity(1);
  OraclePtr oracle;

  double bracket_lo() const;
  /// ((7+λ)/τ) r^d.
  double candidate_error_bound() const;
};

ScscInstance build_scsc(Index d, const SmoothnessConstants& constants,
                        std::optional<double> Lbar_xy = std::nullopt,
                        const WorstCaseOptions& opt = {});

/// Same operators with b = 𝟙 (so Zb = e₁); Ltil_y = mu_y is allowed.
struct ScscBenchmark {
  Index d = 0;
  SmoothnessConstants constants;
  double Lbar_xy = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  RealVector b;
  StructuredOperator Z = StructuredOperator::identity(1);
  OraclePtr oracle;
};

ScscBenchmark build_scsc_benchmark(Index d, const SmoothnessConstants& constants,
                                   std::optional<double> Lbar_xy = std::nullopt,
                                   const WorstCaseOptions& opt = {});

/// Uncoupled quadratic pair: g = ½yᵀHy + 𝟙ᵀy and f = ½xᵀAx + (L_y/2)‖y‖² + 𝟙ᵀx with
/// diagonal A, H spread evenly over [mu_x, L_x] and [mu_y, Ltil_y].
OraclePtr build_decoupled(Index d, const SmoothnessConstants& constants,
                          const WorstCaseOptions& opt = {});

/// Solution of (Z⁴ + λZ² + τI) x = b̃ by dense solve.
RealVector scsc_minimizer_dense(const ScscInstance& inst, const LinalgTolerances& tol = {});

/// K + QT + Q + 2.
long long scsc_support_cap(long long K, long long Q, long long T);
/// K + QT − Q + 3.
long long csc_support_cap(long long K, long long Q, long long T);

/// Smallest integer d with d > max{2M, M+1+log_r(τ/(4(7+λ)))}.
Index scsc_feasible_dimension(double r, double lam_coef, double tau_coef, long long M,
                              Index cap = 4096);
Index scsc_feasible_dimension(const ScscCoefficients& coef, long long M, Index cap = 4096);

/// (mu_x/2)(‖x*−x0‖/(3√2))² r^{2M}.
double scsc_gap_floor(const ScscInstance& inst, long long M, const RealVector& x0);

struct CscInstance {
  Index d = 0;
  SmoothnessConstants constants;
  double B = 0.0;
  double beta = 0.0;
  RealVector b_tilde;
  RealVector b;
  RealVector x_star;
  double grad_floor = 0.0;
  StructuredOperator Z = StructuredOperator::identity(1);
  OraclePtr oracle;
};

/// mu_x = 0, mu_y = 0.5, every smoothness constant 1.
SmoothnessConstants csc_mild_preset();

double csc_grad_floor(const SmoothnessConstants& c, Index d, double B);

CscInstance build_csc(Index d, const SmoothnessConstants& constants, double B,
                      const WorstCaseOptions& opt = {});

struct GradFloorCheck {
  double measured_min = 0.0;
  double floor = 0.0;
};

GradFloorCheck csc_grad_floor_verify(const CscInstance& inst, const WorstCaseOptions& opt = {});

struct RStar {
  double r_star = 0.0;
  double linear_coef = 0.0;
  double rhs = 0.0;
  /// √B·√(L̃_xy²L_y + L_xμ_y²)/(μ_y√eps).
  double order_explicit = 0.0;
  /// min(1/μ_y, eps^{-3/2})/√eps.
  double order_simplified = 0.0;
};

RStar csc_rstar(const SmoothnessConstants& c, double B, double eps);

/// Base64 of the little-endian float64 bytes of v.
std::string encode_vector(const RealVector& v);
RealVector decode_vector(const std::string& text);

nlohmann::json to_json(const SmoothnessConstants& c);
SmoothnessConstants constants_from_json(const nlohmann::json& j);

nlohmann::json to_json(const ScscInstance& inst);
nlohmann::json to_json(const CscInstance& inst);
/// Rebuilds the instance and checks the stored vectors and scalars bit for bit.
ScscInstance scsc_from_json(const nlohmann::json& j, const WorstCaseOptions& opt = {});
CscInstance csc_from_json(const nlohmann::json& j, const WorstCaseOptions& opt = {});

}  // namespace bilevel
