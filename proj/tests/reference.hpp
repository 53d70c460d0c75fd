#pragma once

#include "bilevel/linalg.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <functional>

/// Dense reference constructions used as independent oracles by the tests.
namespace bilevel::reference {

using Rule = std::function<double(Index, Index)>;

/// Symmetric banded integer matrix; `entry(i, k)` gives A(i, i+k) for k ≥ 0.
inline DenseMatrix banded_table(Index d, Index half_bandwidth, const Rule& entry) {
  DenseMatrix a = DenseMatrix::Zero(d, d);
  for (Index i = 0; i < d; ++i) {
    for (Index k = 0; k <= half_bandwidth && i + k < d; ++k) {
      a(i, i + k) = entry(i, k);
      a(i + k, i) = entry(i, k);
    }
  }
  return a;
}

/// Ones on the anti-diagonal, -1 just below it.
inline DenseMatrix scsc_z_table(Index d) {
  DenseMatrix z = DenseMatrix::Zero(d, d);
  for (Index i = 0; i < d; ++i) {
    z(i, d - 1 - i) = 1.0;
    if (i >= 1) z(i, d - i) = -1.0;
  }
  return z;
}

/// Ones just above the anti-diagonal, -1 on it.
inline DenseMatrix csc_z_table(Index d) {
  DenseMatrix z = DenseMatrix::Zero(d, d);
  for (Index i = 0; i < d; ++i) {
    z(i, d - 1 - i) = -1.0;
    if (i + 1 <= d - 1 && d - 2 - i >= 0) z(i, d - 2 - i) = 1.0;
  }
  return z;
}

inline DenseMatrix scsc_z2_table(Index d) {
  return banded_table(d, 1, [](Index i, Index k) { return k == 0 ? (i == 0 ? 1.0 : 2.0) : -1.0; });
}

inline DenseMatrix scsc_z4_table(Index d) {
  return banded_table(d, 2, [d](Index i, Index k) {
    if (k == 0) return i == 0 ? 2.0 : (i == d - 1 ? 5.0 : 6.0);
    if (k == 1) return i == 0 ? -3.0 : -4.0;
    return 1.0;
  });
}

inline DenseMatrix csc_z2_table(Index d) {
  return banded_table(d, 1,
                      [d](Index i, Index k) { return k == 0 ? (i == d - 1 ? 1.0 : 2.0) : -1.0; });
}

inline DenseMatrix csc_z4_table(Index d) {
  return banded_table(d, 2, [d](Index i, Index k) {
    if (k == 0) return i == 0 ? 5.0 : (i == d - 1 ? 2.0 : 6.0);
    if (k == 1) return i == d - 2 ? -3.0 : -4.0;
    return 1.0;
  });
}

inline DenseMatrix csc_z6_table(Index d) {
  return banded_table(d, 3, [d](Index i, Index k) {
    switch (k) {
      case 0:
        return i == 0 ? 14.0 : (i == d - 1 ? 5.0 : (i == d - 2 ? 19.0 : 20.0));
      case 1:
        return i == 0 ? -14.0 : (i == d - 2 ? -9.0 : -15.0);
      case 2:
        return i == d - 3 ? 5.0 : 6.0;
      default:
        return -1.0;
    }
  });
}

/// Dense quadratic pair g = ½yᵀHy + xᵀJy + bᵀy, f = ½xᵀAx + xᵀCy + ½yᵀDy + aᵀx + cᵀy.
struct DenseBilevel {
  DenseMatrix A, C, D, H, J;
  RealVector a, c, b;

  RealVector y_star(const RealVector& x) const { return -H.ldlt().solve(J.transpose() * x + b); }
  double phi(const RealVector& x) const {
    const RealVector y = y_star(x);
    return 0.5 * x.dot(A * x) + x.dot(C * y) + 0.5 * y.dot(D * y) + a.dot(x) + c.dot(y);
  }
  RealVector grad_phi(const RealVector& x) const {
    const RealVector y = y_star(x);
    const RealVector dyf = C.transpose() * x + D * y + c;
    return A * x + C * y + a - J * H.ldlt().solve(dyf);
  }
  /// ∇Φ is affine: ∇Φ(x) = P x + ∇Φ(0).
  DenseMatrix hessian_phi() const {
    const Index p = A.rows();
    DenseMatrix P(p, p);
    const RealVector g0 = grad_phi(RealVector::Zero(p));
    for (Index i = 0; i < p; ++i) P.col(i) = grad_phi(RealVector::Unit(p, i)) - g0;
    return P;
  }
};

/// Strongly convex worst-case pair written out from its defining operators.
inline DenseBilevel scsc_dense(Index d, double mu_x, double mu_y, double L_y, double Ltil_xy,
                               double alpha, double beta, double Lbar_xy, const RealVector& b) {
  const DenseMatrix Z = scsc_z_table(d);
  const DenseMatrix Z2 = Z * Z;
  const DenseMatrix I = DenseMatrix::Identity(d, d);
  DenseBilevel p;
  p.A = alpha * Z2 + mu_x * I;
  p.C = -alpha * beta / Ltil_xy * Z2 * Z + Lbar_xy / 2.0 * Z;
  p.D = L_y * I;
  p.a = RealVector::Zero(d);
  p.c = (Lbar_xy / Ltil_xy) * b - (2.0 * alpha * beta / (Ltil_xy * Ltil_xy)) * (Z2 * b);
  p.H = beta * Z2 + mu_y * I;
  p.J = -Ltil_xy / 2.0 * Z;
  p.b = b;
  return p;
}

/// Convex worst-case pair written out from its defining operators.
inline DenseBilevel csc_dense(Index d, double L_x, double mu_y, double L_y, double Ltil_xy,
                              double beta, const RealVector& b) {
  const DenseMatrix Z = csc_z_table(d);
  const DenseMatrix I = DenseMatrix::Identity(d, d);
  DenseBilevel p;
  p.A = L_x / 4.0 * Z * Z;
  p.C = DenseMatrix::Zero(d, d);
  p.D = L_y * I;
  p.a = RealVector::Zero(d);
  p.c = RealVector::Zero(d);
  p.H = beta * Z * Z + mu_y * I;
  p.J = -Ltil_xy / 2.0 * Z;
  p.b = b;
  return p;
}

/// min ‖P x + g0‖ over x whose last `frozen` coordinates vanish.
inline double constrained_min_grad(const DenseMatrix& P, const RealVector& g0, Index frozen) {
  const DenseMatrix a = P.leftCols(P.cols() - frozen);
  const RealVector x = a.colPivHouseholderQr().solve(-g0);
  return (a * x + g0).norm();
}

}  // namespace bilevel::reference
