#include "bilevel/linalg.hpp"

#include "bilevel/errors.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <variant>

namespace bilevel {

RealVector require_finite(RealVector v, const char* what) {
  for (Index i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      std::ostringstream msg;
      msg << what << ": non-finite entry at index " << i;
      throw DomainError(msg.str());
    }
  }
  return v;
}

RealVector make_vector(std::initializer_list<double> entries) {
  RealVector v(static_cast<Index>(entries.size()));
  Index i = 0;
  for (double e : entries) v[i++] = e;
  return require_finite(std::move(v), "make_vector");
}

Index active_index(const RealVector& v, double tol) {
  if (v.size() == 0) return -1;
  const double scale = v.cwiseAbs().maxCoeff();
  if (scale == 0.0) return -1;
  for (Index i = v.size() - 1; i >= 0; --i) {
    if (std::abs(v[i]) > tol * scale) return i;
  }
  return -1;
}

namespace {

struct ZData {
  bool csc;
};
struct BandData {
  std::vector<RealVector> bands;
};
struct ShiftData {
  StructuredOperator base;
  double scale;
  double shift;
};
struct DenseData {
  DenseMatrix m;
};
struct PowerData {
  StructuredOperator base;
  int k;
};
struct SumData {
  std::vector<std::pair<double, StructuredOperator>> terms;
};

void require_dim(Index d, const char* who) {
  if (d < 1) throw ContractError(std::string(who) + ": dimension must be positive");
}

}  // namespace

struct StructuredOperator::Node {
  Kind kind;
  Index dim;
  std::variant<ZData, BandData, ShiftData, DenseData, PowerData, SumData> data;
};

StructuredOperator::StructuredOperator(std::shared_ptr<const Node> node)
    : node_(std::move(node)) {}

StructuredOperator StructuredOperator::z_scsc(Index d) {
  require_dim(d, "z_scsc");
  return StructuredOperator(std::make_shared<Node>(Node{Kind::ZScsc, d, ZData{false}}));
}

StructuredOperator StructuredOperator::z_csc(Index d) {
  require_dim(d, "z_csc");
  return StructuredOperator(std::make_shared<Node>(Node{Kind::ZCsc, d, ZData{true}}));
}

StructuredOperator StructuredOperator::identity(Index d) {
  require_dim(d, "identity");
  return diagonal(RealVector::Ones(d));
}

StructuredOperator StructuredOperator::diagonal(RealVector diag) {
  std::vector<RealVector> bands;
  bands.push_back(std::move(diag));
  return banded(std::move(bands));
}

StructuredOperator StructuredOperator::tridiagonal(RealVector diag, RealVector off) {
  const Index d = diag.size();
  require_dim(d, "tridiagonal");
  if (off.size() != d - 1) throw ContractError("tridiagonal: off-diagonal must have dim-1 entries");
  std::vector<RealVector> bands{require_finite(std::move(diag), "tridiagonal"),
                                require_finite(std::move(off), "tridiagonal")};
  return StructuredOperator(
      std::make_shared<Node>(Node{Kind::Tridiagonal, d, BandData{std::move(bands)}}));
}

StructuredOperator StructuredOperator::banded(std::vector<RealVector> bands) {
  if (bands.empty()) throw ContractError("banded: at least the main diagonal is required");
  const Index d = bands[0].size();
  require_dim(d, "banded");
  for (std::size_t k = 0; k < bands.size(); ++k) {
    if (bands[k].size() != d - static_cast<Index>(k)) {
      throw ContractError("banded: band k must have dim-k entries");
    }
    require_finite(bands[k], "banded");
  }
  return StructuredOperator(
      std::make_shared<Node>(Node{Kind::Banded, d, BandData{std::move(bands)}}));
}

StructuredOperator StructuredOperator::shifted_scaled(const StructuredOperator& base,
                                                      double scale, double shift) {
  if (!std::isfinite(scale) || !std::isfinite(shift)) {
    throw DomainError("shifted_scaled: non-finite coefficient");
  }
  return StructuredOperator(std::make_shared<Node>(
      Node{Kind::ShiftedScaled, base.dim(), ShiftData{base, scale, shift}}));
}

StructuredOperator StructuredOperator::dense(DenseMatrix m, double symmetry_rtol) {
  if (m.rows() != m.cols()) throw ContractError("dense: matrix must be square");
  require_dim(m.rows(), "dense");
  if (!m.allFinite()) throw DomainError("dense: non-finite entry");
  const double scale = std::max(m.cwiseAbs().maxCoeff(), 1e-300);
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > symmetry_rtol * scale) {
    throw ContractError("dense: matrix is not symmetric");
  }
  const Index d = m.rows();
  return StructuredOperator(
      std::make_shared<Node>(Node{Kind::Dense, d, DenseData{std::move(m)}}));
}

StructuredOperator StructuredOperator::power(const StructuredOperator& base, int k) {
  if (k < 0) throw ContractError("power: exponent must be nonnegative");
  return StructuredOperator(
      std::make_shared<Node>(Node{Kind::Power, base.dim(), PowerData{base, k}}));
}

StructuredOperator StructuredOperator::sum(
    std::vector<std::pair<double, StructuredOperator>> terms) {
  if (terms.empty()) throw ContractError("sum: no terms");
  const Index d = terms.front().second.dim();
  for (const auto& [c, op] : terms) {
    if (op.dim() != d) throw ContractError("sum: operand dimensions differ");
    if (!std::isfinite(c)) throw DomainError("sum: non-finite coefficient");
  }
  return StructuredOperator(
      std::make_shared<Node>(Node{Kind::Sum, d, SumData{std::move(terms)}}));
}

StructuredOperator::Kind StructuredOperator::kind() const { return node_->kind; }

Index StructuredOperator::dim() const { return node_->dim; }

Index StructuredOperator::bandwidth() const {
  if (const auto* b = std::get_if<BandData>(&node_->data)) {
    return static_cast<Index>(b->bands.size()) - 1;
  }
  return -1;
}

RealVector StructuredOperator::apply(const RealVector& v) const {
  const Index d = node_->dim;
  if (v.size() != d) {
    std::ostringstream msg;
    msg << "apply: operator dim " << d << " vs vector dim " << v.size();
    throw ContractError(msg.str());
  }
  return std::visit(
      [&](const auto& data) -> RealVector {
        using T = std::decay_t<decltype(data)>;
        if constexpr (std::is_same_v<T, ZData>) {
          RealVector out(d);
          if (!data.csc) {
            for (Index i = 0; i < d; ++i) {
              out[i] = v[d - 1 - i] - (i >= 1 ? v[d - i] : 0.0);
            }
          } else {
            for (Index i = 0; i < d; ++i) {
              out[i] = (i <= d - 2 ? v[d - 2 - i] : 0.0) - v[d - 1 - i];
            }
          }
          return out;
        } else if constexpr (std::is_same_v<T, BandData>) {
          RealVector out = data.bands[0].cwiseProduct(v);
          for (std::size_t k = 1; k < data.bands.size(); ++k) {
            const Index kk = static_cast<Index>(k);
            const Index n = d - kk;
            out.head(n) += data.bands[k].cwiseProduct(v.tail(n));
            out.tail(n) += data.bands[k].cwiseProduct(v.head(n));
          }
          return out;
        } else if constexpr (std::is_same_v<T, ShiftData>) {
          RealVector out = data.base.apply(v);
          out *= data.scale;
          out += data.shift * v;
          return out;
        } else if constexpr (std::is_same_v<T, DenseData>) {
          return data.m * v;
        } else if constexpr (std::is_same_v<T, PowerData>) {
          RealVector out = v;
          for (int i = 0; i < data.k; ++i) out = data.base.apply(out);
          return out;
        } else {
          RealVector out = RealVector::Zero(d);
          for (const auto& [c, op] : data.terms) out += c * op.apply(v);
          return out;
        }
      },
      node_->data);
}

DenseMatrix StructuredOperator::to_dense() const {
  if (const auto* dense = std::get_if<DenseData>(&node_->data)) return dense->m;
  const Index d = node_->dim;
  DenseMatrix m(d, d);
  RealVector e = RealVector::Zero(d);
  for (Index j = 0; j < d; ++j) {
    e[j] = 1.0;
    m.col(j) = apply(e);
    e[j] = 0.0;
  }
  return m;
}

RealVector apply(const StructuredOperator& op, const RealVector& v) { return op.apply(v); }

RealVector solve_dense(const StructuredOperator& op, const RealVector& rhs,
                       const LinalgTolerances& tol) {
  if (op.dim() != rhs.size()) throw ContractError("solve_dense: dimension mismatch");
  return solve_dense(op.to_dense(), rhs, tol);
}

RealVector solve_dense(const DenseMatrix& a, const RealVector& rhs, const LinalgTolerances& tol) {
  if (a.rows() != a.cols() || a.rows() != rhs.size()) {
    throw ContractError("solve_dense: dimension mismatch");
  }
  require_finite(rhs, "solve_dense rhs");
  const Eigen::PartialPivLU<DenseMatrix> lu(a);
  const double rcond = lu.rcond();
  if (!(rcond > tol.singular_rcond)) {
    std::ostringstream msg;
    msg << "solve_dense: matrix singular to tolerance (rcond " << rcond << ")";
    throw SingularityError(msg.str(), rcond > 0 ? 1.0 / rcond
                                                : std::numeric_limits<double>::infinity());
  }
  RealVector x = lu.solve(rhs);
  const double rhs_norm = rhs.norm();
  double residual = (a * x - rhs).norm();
  // One round of iterative refinement recovers digits lost to pivot growth.
  if (residual > tol.solve_residual * rhs_norm) {
    x += lu.solve(rhs - a * x);
    residual = (a * x - rhs).norm();
  }
  if (residual > tol.solve_residual * rhs_norm || !x.allFinite()) {
    std::ostringstream msg;
    msg << "solve_dense: relative residual " << residual / rhs_norm << " above tolerance";
    throw SingularityError(msg.str(), 1.0 / rcond);
  }
  return x;
}

double bisect_root(const ScalarFunction1D& f, double lo, double hi, double tol) {
  if (!(lo < hi) || !(tol > 0.0)) throw ContractError("bisect_root: need lo < hi and tol > 0");
  auto eval = [&](double r) {
    const double value = f(r);
    if (!std::isfinite(value)) {
      std::ostringstream msg;
      msg << "bisect_root: non-finite value at " << r;
      throw DomainError(msg.str());
    }
    return value;
  };
  double f_lo = eval(lo);
  const double f_hi = eval(hi);
  if (f_lo == 0.0) return lo;
  if (f_hi == 0.0) return hi;
  if ((f_lo < 0.0) == (f_hi < 0.0)) {
    std::ostringstream msg;
    msg << "bisect_root: no sign change on [" << lo << ", " << hi << "] (f = " << f_lo << ", "
        << f_hi << ")";
    throw BracketError(msg.str());
  }
  while (hi - lo > tol) {
    const double mid = lo + 0.5 * (hi - lo);
    if (mid <= lo || mid >= hi) break;
    const double f_mid = eval(mid);
    if (f_mid == 0.0) return mid;
    if ((f_mid < 0.0) == (f_lo < 0.0)) {
      lo = mid;
      f_lo = f_mid;
    } else {
      hi = mid;
    }
  }
  return lo + 0.5 * (hi - lo);
}

EigExtremes symmetric_eig_extremes(const StructuredOperator& op, const LinalgTolerances& tol) {
  if (op.dim() > tol.dense_eig_cap) {
    std::ostringstream msg;
    msg << "symmetric_eig_extremes: dim " << op.dim() << " above cap " << tol.dense_eig_cap;
    throw CapacityError(msg.str());
  }
  return symmetric_eig_extremes(op.to_dense(), tol);
}

EigExtremes symmetric_eig_extremes(const DenseMatrix& m, const LinalgTolerances& tol) {
  if (m.rows() != m.cols()) throw ContractError("symmetric_eig_extremes: matrix not square");
  if (m.rows() > tol.dense_eig_cap) throw CapacityError("symmetric_eig_extremes: dim above cap");
  const Eigen::SelfAdjointEigenSolver<DenseMatrix> es(m, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericError("symmetric_eig_extremes: no convergence");
  return {es.eigenvalues().minCoeff(), es.eigenvalues().maxCoeff()};
}

}  // namespace bilevel
