#pragma once

#include <Eigen/Dense>

#include <functional>
#include <initializer_list>
#include <memory>
#include <utility>
#include <vector>

namespace bilevel {

using RealVector = Eigen::VectorXd;
using DenseMatrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Returns `v` unchanged, or throws DomainError naming `what` if any entry is NaN/Inf.
RealVector require_finite(RealVector v, const char* what = "vector");

/// Builds a finite vector from a literal list.
RealVector make_vector(std::initializer_list<double> entries);

/// Largest index i (0-based) with |v_i| > tol * max|v|, or -1 for the zero vector.
Index active_index(const RealVector& v, double tol);

struct LinalgTolerances {
  double symmetry_rtol = 1e-12;
  double solve_residual = 1e-10;
  double singular_rcond = 1e-14;
  Index dense_eig_cap = 2048;
};

/// Symmetric linear operator applied matrix-free.
///
/// Values are cheap to copy and immutable; composite kinds share their
/// operands.
class StructuredOperator {
 public:
  enum class Kind {
    ZScsc,
    ZCsc,
    Tridiagonal,
    Banded,
    ShiftedScaled,
    Dense,
    Power,
    Sum,
  };

  /// Anti-banded Z with ones on the anti-diagonal and -1 just below it.
  static StructuredOperator z_scsc(Index d);
  /// Anti-banded Z with ones above the anti-diagonal and -1 on it.
  static StructuredOperator z_csc(Index d);
  static StructuredOperator identity(Index d);
  static StructuredOperator diagonal(RealVector diag);
  static StructuredOperator tridiagonal(RealVector diag, RealVector off);
  /// `bands[0]` is the main diagonal, `bands[k]` the k-th off-diagonal
  /// (length dim-k), mirrored below the diagonal.
  static StructuredOperator banded(std::vector<RealVector> bands);
  /// scale * base + shift * I.
  static StructuredOperator shifted_scaled(const StructuredOperator& base, double scale,
                                           double shift);
  static StructuredOperator dense(DenseMatrix m, double symmetry_rtol = 1e-12);
  /// base^k by repeated application; k = 0 gives the identity.
  static StructuredOperator power(const StructuredOperator& base, int k);
  /// sum_i c_i * A_i over operators of equal dimension.
  static StructuredOperator sum(std::vector<std::pair<double, StructuredOperator>> terms);

  Kind kind() const;
  Index dim() const;
  /// Half-bandwidth of the banded kinds; -1 for kinds without a stored band.
  Index bandwidth() const;

  RealVector apply(const RealVector& v) const;
  DenseMatrix to_dense() const;

  struct Node;

 private:
  explicit StructuredOperator(std::shared_ptr<const Node> node);
  std::shared_ptr<const Node> node_;
};

/// op * v; throws ContractError on dimension mismatch.
RealVector apply(const StructuredOperator& op, const RealVector& v);

/// Solves op * x = rhs after densification.
RealVector solve_dense(const StructuredOperator& op, const RealVector& rhs,
                       const LinalgTolerances& tol = {});
RealVector solve_dense(const DenseMatrix& a, const RealVector& rhs,
                       const LinalgTolerances& tol = {});

using ScalarFunction1D = std::function<double(double)>;

/// Bisection on a sign-changing bracket until its width is at most `tol`.
double bisect_root(const ScalarFunction1D& f, double lo, double hi, double tol);

struct EigExtremes {
  double min_eig;
  double max_eig;
};

EigExtremes symmetric_eig_extremes(const StructuredOperator& op,
                                   const LinalgTolerances& tol = {});
EigExtremes symmetric_eig_extremes(const DenseMatrix& m, const LinalgTolerances& tol = {});

}  // namespace bilevel
