#include "bilevel/worst_case.hpp"

#include "bilevel/errors.hpp"

#include <sodium.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <sstream>

namespace bilevel {

namespace {

void require_positive(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw ConstraintError(std::string(name) + " must be positive and finite");
  }
}

RealVector leading_vector(Index d, std::initializer_list<double> head) {
  RealVector v = RealVector::Zero(d);
  Index i = 0;
  for (double h : head) v[i++] = h;
  return v;
}

OraclePtr assemble_scsc_oracle(const StructuredOperator& Z, const SmoothnessConstants& c,
                               double alpha, double beta, double Lbar_xy, const RealVector& b,
                               const LinalgTolerances& tol) {
  const Index d = Z.dim();
  const auto Z2 = StructuredOperator::power(Z, 2);
  const auto Z3 = StructuredOperator::power(Z, 3);
  const auto I = StructuredOperator::identity(d);
  QuadraticOuterSpec outer{
      StructuredOperator::shifted_scaled(Z2, alpha, c.mu_x),
      StructuredOperator::sum({{-alpha * beta / c.Ltil_xy, Z3}, {Lbar_xy / 2.0, Z}}),
      StructuredOperator::shifted_scaled(I, c.L_y, 0.0),
      RealVector(),
      // The Z²b term keeps the minimizer of Φ equal to the solution of
      // Z⁴x + λZ²x + τx = b̃.
      (Lbar_xy / c.Ltil_xy) * b - (2.0 * alpha * beta / (c.Ltil_xy * c.Ltil_xy)) * Z2.apply(b),
  };
  return make_quadratic_bilevel(StructuredOperator::shifted_scaled(Z2, beta, c.mu_y),
                                StructuredOperator::shifted_scaled(Z, -c.Ltil_xy / 2.0, 0.0), b,
                                outer, c, tol);
}

}  // namespace

SmoothnessConstants mild_preset() {
  SmoothnessConstants c;
  c.mu_x = 0.5;
  c.mu_y = 0.5;
  c.L_x = 1.0;
  c.L_y = 1.0;
  c.L_xy = 1.0;
  c.Ltil_xy = 1.0;
  c.Ltil_y = 1.0;
  return c;
}

SmoothnessConstants csc_mild_preset() {
  SmoothnessConstants c = mild_preset();
  c.mu_x = 0.0;
  return c;
}

double default_lbar_xy(const SmoothnessConstants& c) {
  return std::max(c.L_xy, (c.L_x - c.mu_x) * (c.Ltil_y - c.mu_y) / (2.0 * c.Ltil_xy));
}

double scsc_quartic(double r, double lam, double tau) {
  const double r2 = r * r;
  return 1.0 - (4.0 + lam) * r + (6.0 + 2.0 * lam + tau) * r2 - (4.0 + lam) * r2 * r + r2 * r2;
}

ScscCoefficients scsc_coefficients(const SmoothnessConstants& c, std::optional<double> Lbar_xy,
                                   const WorstCaseOptions& opt) {
  c.validate();
  require_positive(c.mu_x, "mu_x");
  require_positive(c.Ltil_xy, "Ltil_xy");
  require_positive(c.L_y, "L_y");
  if (c.L_x < c.mu_x) throw ConstraintError("L_x must be >= mu_x");
  const double cross = (c.L_x - c.mu_x) * (c.Ltil_y - c.mu_y) / (2.0 * c.Ltil_xy);
  if (c.L_xy < cross) {
    std::ostringstream msg;
    msg << "L_xy = " << c.L_xy << " below the cross-term requirement " << cross;
    throw ConstraintError(msg.str());
  }

  ScscCoefficients k;
  k.alpha = (c.L_x - c.mu_x) / 4.0;
  k.beta = (c.Ltil_y - c.mu_y) / 4.0;
  if (!(k.beta > 0.0)) throw ConstraintError("Ltil_y must exceed mu_y (beta > 0)");
  k.Lbar_xy = Lbar_xy.value_or(default_lbar_xy(c));
  if (!(k.Lbar_xy >= 0.0) || !std::isfinite(k.Lbar_xy)) {
    throw ConstraintError("Lbar_xy must be finite and nonnegative");
  }

  const double a = k.alpha;
  const double b = k.beta;
  const double lxy = k.Lbar_xy * c.Ltil_xy;
  const double denom = b * b * c.mu_x + a * b * c.mu_y + b * lxy / 2.0;
  k.lam_coef = (2.0 * b * c.mu_x * c.mu_y + a * c.mu_y * c.mu_y + c.mu_y * lxy / 2.0 +
                c.L_y * c.Ltil_xy * c.Ltil_xy / 4.0) /
               denom;
  k.tau_coef = c.mu_x * c.mu_y * c.mu_y / denom;
  k.gamma = c.L_y * c.Ltil_xy / (2.0 * denom);
  k.xi = k.lam_coef / (2.0 * k.tau_coef);
  k.bracket_lo = 1.0 - 1.0 / (0.5 + std::sqrt(k.xi + 0.25));

  const double lam = k.lam_coef;
  const double tau = k.tau_coef;
  try {
    k.r = bisect_root([&](double r) { return scsc_quartic(r, lam, tau); }, k.bracket_lo, 1.0,
                      opt.quartic_tol);
  } catch (const BracketError& e) {
    std::ostringstream msg;
    msg << "SCSC quartic has no sign change on (" << k.bracket_lo << ", 1): lam_coef = " << lam
        << ", tau_coef = " << tau << " (" << e.what() << ")";
    throw NumericError(msg.str());
  }
  if (!(k.r > k.bracket_lo && k.r < 1.0)) {
    throw NumericError("SCSC quartic root landed on the bracket boundary");
  }
  return k;
}

double ScscInstance::bracket_lo() const { return 1.0 - 1.0 / (0.5 + std::sqrt(xi + 0.25)); }

double ScscInstance::candidate_error_bound() const {
  return (7.0 + lam_coef) / tau_coef * std::pow(r, static_cast<double>(d));
}

ScscInstance build_scsc(Index d, const SmoothnessConstants& constants,
                        std::optional<double> Lbar_xy, const WorstCaseOptions& opt) {
  if (d < 4) throw ContractError("build_scsc: d must be at least 4");
  const ScscCoefficients k = scsc_coefficients(constants, Lbar_xy, opt);

  ScscInstance inst;
  inst.d = d;
  inst.constants = constants;
  inst.Lbar_xy = k.Lbar_xy;
  inst.alpha = k.alpha;
  inst.beta = k.beta;
  inst.lam_coef = k.lam_coef;
  inst.tau_coef = k.tau_coef;
  inst.gamma = k.gamma;
  inst.xi = k.xi;
  inst.r = k.r;

  const double r = k.r;
  inst.b_tilde = leading_vector(
      d, {(2.0 + k.lam_coef + k.tau_coef) * r - (3.0 + k.lam_coef) * r * r + r * r * r, r - 1.0});
  inst.Z = StructuredOperator::z_scsc(d);
  inst.b = solve_dense(inst.Z, inst.b_tilde / k.gamma, opt.linalg);
  inst.x_hat.resize(d);
  double power = 1.0;
  for (Index i = 0; i < d; ++i) {
    power *= r;
    inst.x_hat[i] = power;
  }

  inst.oracle = assemble_scsc_oracle(inst.Z, constants, k.alpha, k.beta, k.Lbar_xy, inst.b,
                                     opt.linalg);
  return inst;
}

ScscBenchmark build_scsc_benchmark(Index d, const SmoothnessConstants& c,
                                   std::optional<double> Lbar_xy, const WorstCaseOptions& opt) {
  if (d < 2) throw ContractError("build_scsc_benchmark: d must be at least 2");
  c.validate();
  require_positive(c.mu_x, "mu_x");
  require_positive(c.Ltil_xy, "Ltil_xy");
  if (c.L_x < c.mu_x) throw ConstraintError("L_x must be >= mu_x");
  const double cross = (c.L_x - c.mu_x) * (c.Ltil_y - c.mu_y) / (2.0 * c.Ltil_xy);
  if (c.L_xy < cross) throw ConstraintError("L_xy below the cross-term requirement");
  ScscBenchmark bench;
  bench.d = d;
  bench.constants = c;
  bench.alpha = (c.L_x - c.mu_x) / 4.0;
  bench.beta = (c.Ltil_y - c.mu_y) / 4.0;
  bench.Lbar_xy = Lbar_xy.value_or(default_lbar_xy(c));
  bench.Z = StructuredOperator::z_scsc(d);
  bench.b = RealVector::Ones(d);
  bench.oracle = assemble_scsc_oracle(bench.Z, c, bench.alpha, bench.beta, bench.Lbar_xy,
                                      bench.b, opt.linalg);
  return bench;
}

OraclePtr build_decoupled(Index d, const SmoothnessConstants& c, const WorstCaseOptions& opt) {
  if (d < 1) throw ContractError("build_decoupled: d must be positive");
  c.validate();
  if (c.L_x < c.mu_x) throw ConstraintError("L_x must be >= mu_x");
  const auto spread = [d](double lo, double hi) {
    return d == 1 ? RealVector::Constant(1, lo) : RealVector::LinSpaced(d, lo, hi).eval();
  };
  const auto I = StructuredOperator::identity(d);
  QuadraticOuterSpec outer{StructuredOperator::diagonal(spread(c.mu_x, c.L_x)), std::nullopt,
                           StructuredOperator::shifted_scaled(I, c.L_y, 0.0),
                           RealVector::Ones(d), RealVector()};
  return make_quadratic_bilevel(StructuredOperator::diagonal(spread(c.mu_y, c.Ltil_y)),
                                StructuredOperator::diagonal(RealVector::Zero(d)),
                                RealVector::Ones(d), outer, c, opt.linalg);
}

RealVector scsc_minimizer_dense(const ScscInstance& inst, const LinalgTolerances& tol) {
  const auto Z2 = StructuredOperator::power(inst.Z, 2);
  const auto Z4 = StructuredOperator::power(inst.Z, 4);
  const auto op = StructuredOperator::sum({{1.0, Z4},
                                           {inst.lam_coef, Z2},
                                           {inst.tau_coef, StructuredOperator::identity(inst.d)}});
  return solve_dense(op, inst.b_tilde, tol);
}

long long scsc_support_cap(long long K, long long Q, long long T) { return K + Q * T + Q + 2; }

long long csc_support_cap(long long K, long long Q, long long T) { return K + Q * T - Q + 3; }

Index scsc_feasible_dimension(double r, double lam, double tau, long long M, Index cap) {
  if (M < 0) throw ContractError("scsc_feasible_dimension: M must be nonnegative");
  if (!(r > 0.0 && r < 1.0)) throw ContractError("scsc_feasible_dimension: r must lie in (0, 1)");
  const double log_term = std::log(tau / (4.0 * (7.0 + lam))) / std::log(r);
  const double bound = std::max(2.0 * static_cast<double>(M), static_cast<double>(M) + 1.0 + log_term);
  const double required = std::floor(bound) + 1.0;
  if (required > static_cast<double>(cap)) {
    std::ostringstream msg;
    msg << "feasible dimension " << required << " exceeds cap " << cap;
    throw InfeasibleDimensionError(msg.str(), static_cast<long long>(required));
  }
  return static_cast<Index>(required);
}

Index scsc_feasible_dimension(const ScscCoefficients& k, long long M, Index cap) {
  return scsc_feasible_dimension(k.r, k.lam_coef, k.tau_coef, M, cap);
}

double scsc_gap_floor(const ScscInstance& inst, long long M, const RealVector& x0) {
  if (x0.size() != inst.d || x0.cwiseAbs().maxCoeff() != 0.0) {
    throw ContractError("scsc_gap_floor: the construction starts from x0 = 0");
  }
  const Index need = scsc_feasible_dimension(inst.r, inst.lam_coef, inst.tau_coef, M,
                                             std::numeric_limits<Index>::max());
  if (inst.d < need) {
    std::ostringstream msg;
    msg << "scsc_gap_floor: d = " << inst.d << " infeasible for M = " << M << ", need d >= " << need;
    throw ContractError(msg.str());
  }
  const RealVector x_star = scsc_minimizer_dense(inst);
  const double dist = (x_star - x0).norm() / (3.0 * std::sqrt(2.0));
  return inst.constants.mu_x / 2.0 * dist * dist * std::pow(inst.r, 2.0 * static_cast<double>(M));
}

double csc_grad_floor(const SmoothnessConstants& c, Index d, double B) {
  const double beta = (c.Ltil_y - c.mu_y) / 4.0;
  const double mu = c.mu_y;
  const double dd = static_cast<double>(d);
  const double k1 = c.Ltil_xy * c.Ltil_xy * c.L_y / 4.0 + c.L_x * mu * mu / 4.0;
  const double den = 8.0 * std::pow(mu, 4) * std::pow(dd, 4) + 16.0 * dd * std::pow(beta, 4) +
                     32.0 * dd * std::pow(beta, 3) * mu + 32.0 * dd * beta * beta * mu * mu;
  return std::sqrt(B * B * k1 * k1 / den);
}

CscInstance build_csc(Index d, const SmoothnessConstants& constants, double B,
                      const WorstCaseOptions& opt) {
  if (d < 4) throw ContractError("build_csc: d must be at least 4");
  if (!(B > 0.0) || !std::isfinite(B)) throw ContractError("build_csc: B must be positive");
  constants.validate();
  require_positive(constants.Ltil_xy, "Ltil_xy");
  require_positive(constants.L_y, "L_y");
  const SmoothnessConstants& c = constants;

  CscInstance inst;
  inst.d = d;
  inst.constants = c;
  inst.B = B;
  inst.beta = (c.Ltil_y - c.mu_y) / 4.0;
  const double beta = inst.beta;
  const double s = B / std::sqrt(static_cast<double>(d));
  inst.b_tilde = leading_vector(
      d, {s * (1.25 * c.L_x * beta * beta + c.L_x * beta * c.mu_y +
               c.Ltil_xy * c.Ltil_xy * c.L_y / 4.0 + c.L_x * c.mu_y * c.mu_y / 4.0),
          s * (-c.L_x * beta * beta - c.L_x * beta * c.mu_y / 2.0), s * c.L_x * beta * beta / 4.0});
  inst.Z = StructuredOperator::z_csc(d);
  inst.b = solve_dense(inst.Z, (2.0 / (c.L_y * c.Ltil_xy)) * inst.b_tilde, opt.linalg);
  inst.x_star = RealVector::Constant(d, s);
  inst.grad_floor = csc_grad_floor(c, d, B);

  const auto Z2 = StructuredOperator::power(inst.Z, 2);
  const auto I = StructuredOperator::identity(d);
  QuadraticOuterSpec outer{StructuredOperator::shifted_scaled(Z2, c.L_x / 4.0, 0.0), std::nullopt,
                           StructuredOperator::shifted_scaled(I, c.L_y, 0.0), RealVector(),
                           RealVector()};
  inst.oracle = make_quadratic_bilevel(StructuredOperator::shifted_scaled(Z2, beta, c.mu_y),
                                       StructuredOperator::shifted_scaled(inst.Z, -c.Ltil_xy / 2.0, 0.0),
                                       inst.b, outer, c, opt.linalg);
  return inst;
}

GradFloorCheck csc_grad_floor_verify(const CscInstance& inst, const WorstCaseOptions& opt) {
  if (inst.d > opt.linalg.dense_eig_cap) throw CapacityError("csc_grad_floor_verify: d above cap");
  // ∇Φ(x) = P x + ∇Φ(0); only the first d−3 columns of P act on feasible x.
  const QuadraticPhiModel model = build_quadratic_phi_model(*inst.oracle);
  const Index m = inst.d - 3;
  const DenseMatrix a = model.P.leftCols(m);
  const DenseMatrix normal = a.transpose() * a;
  const RealVector rhs = -(a.transpose() * model.grad_at_zero);
  RealVector x_red;
  try {
    x_red = solve_dense(normal, rhs, opt.linalg);
  } catch (const SingularityError& e) {
    throw NumericError(std::string("csc_grad_floor_verify: reduced system singular: ") + e.what());
  }
  return {(a * x_red + model.grad_at_zero).norm(), inst.grad_floor};
}

RStar csc_rstar(const SmoothnessConstants& c, double B, double eps) {
  if (!(eps > 0.0)) throw ContractError("csc_rstar: eps must be positive");
  const double mu = c.mu_y;
  const double beta = (c.Ltil_y - c.mu_y) / 4.0;
  const double t = beta / mu;
  RStar out;
  out.linear_coef = 2.0 * std::pow(t, 4) + 4.0 * std::pow(t, 3) + 4.0 * t * t;
  const double k = c.Ltil_xy * c.Ltil_xy * c.L_y + c.L_x * mu * mu;
  out.rhs = B * B * k * k / (128.0 * std::pow(mu, 4) * eps * eps);
  const double lin = out.linear_coef;
  const double rhs = out.rhs;
  if (rhs == 0.0) {
    out.r_star = 0.0;
  } else {
    const double hi = std::pow(rhs, 0.25);
    out.r_star = bisect_root([&](double r) { return r * r * r * r + lin * r - rhs; }, 0.0, hi,
                             1e-14 * std::max(1.0, hi));
  }
  out.order_explicit = std::sqrt(B) * std::sqrt(k) / (mu * std::sqrt(eps));
  out.order_simplified = std::min(1.0 / mu, std::pow(eps, -1.5)) / std::sqrt(eps);
  return out;
}

std::string encode_vector(const RealVector& v) {
  static_assert(sizeof(double) == 8);
  std::vector<unsigned char> bytes(static_cast<std::size_t>(v.size()) * 8);
  for (Index i = 0; i < v.size(); ++i) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v[i]);
    for (int k = 0; k < 8; ++k) {
      bytes[static_cast<std::size_t>(i) * 8 + k] = static_cast<unsigned char>(bits >> (8 * k));
    }
  }
  const std::size_t cap =
      sodium_base64_ENCODED_LEN(bytes.size(), sodium_base64_VARIANT_ORIGINAL);
  std::string out(cap, '\0');
  sodium_bin2base64(out.data(), cap, bytes.data(), bytes.size(), sodium_base64_VARIANT_ORIGINAL);
  out.resize(std::strlen(out.c_str()));
  return out;
}

RealVector decode_vector(const std::string& text) {
  std::vector<unsigned char> bytes(text.size());
  std::size_t len = 0;
  if (sodium_base642bin(bytes.data(), bytes.size(), text.data(), text.size(), nullptr, &len,
                        nullptr, sodium_base64_VARIANT_ORIGINAL) != 0 ||
      len % 8 != 0) {
    throw ContractError("decode_vector: malformed base64 float64 payload");
  }
  RealVector v(static_cast<Index>(len / 8));
  for (Index i = 0; i < v.size(); ++i) {
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) {
      bits |= static_cast<std::uint64_t>(bytes[static_cast<std::size_t>(i) * 8 + k]) << (8 * k);
    }
    v[i] = std::bit_cast<double>(bits);
  }
  return v;
}

nlohmann::json to_json(const SmoothnessConstants& c) {
  return {{"mu_x", c.mu_x},       {"mu_y", c.mu_y},       {"L_x", c.L_x},
          {"L_y", c.L_y},         {"L_xy", c.L_xy},       {"Ltil_xy", c.Ltil_xy},
          {"Ltil_y", c.Ltil_y},   {"rho_xy", c.rho_xy},   {"rho_yy", c.rho_yy}};
}

SmoothnessConstants constants_from_json(const nlohmann::json& j) {
  SmoothnessConstants c;
  auto read = [&](const char* key, double& field) {
    if (j.contains(key)) field = j.at(key).get<double>();
  };
  read("mu_x", c.mu_x);
  read("mu_y", c.mu_y);
  read("L_x", c.L_x);
  read("L_y", c.L_y);
  read("L_xy", c.L_xy);
  read("Ltil_xy", c.Ltil_xy);
  read("Ltil_y", c.Ltil_y);
  read("rho_xy", c.rho_xy);
  read("rho_yy", c.rho_yy);
  return c;
}

nlohmann::json to_json(const ScscInstance& inst) {
  return {{"kind", "scsc"},
          {"d", inst.d},
          {"constants", to_json(inst.constants)},
          {"Lbar_xy", inst.Lbar_xy},
          {"derived",
           {{"alpha", inst.alpha},
            {"beta", inst.beta},
            {"lam_coef", inst.lam_coef},
            {"tau_coef", inst.tau_coef},
            {"gamma", inst.gamma},
            {"xi", inst.xi},
            {"r", inst.r}}},
          {"vectors",
           {{"b_tilde", encode_vector(inst.b_tilde)},
            {"b", encode_vector(inst.b)},
            {"x_hat", encode_vector(inst.x_hat)}}}};
}

nlohmann::json to_json(const CscInstance& inst) {
  return {{"kind", "csc"},
          {"d", inst.d},
          {"constants", to_json(inst.constants)},
          {"B", inst.B},
          {"derived",
           {{"beta", inst.beta},
            {"grad_floor", inst.grad_floor},
            {"r_star", csc_rstar(inst.constants, inst.B, inst.grad_floor).r_star}}},
          {"vectors",
           {{"b_tilde", encode_vector(inst.b_tilde)},
            {"b", encode_vector(inst.b)},
            {"x_star", encode_vector(inst.x_star)}}}};
}

namespace {

bool same_bits(const RealVector& a, const RealVector& b) {
  if (a.size() != b.size()) return false;
  for (Index i = 0; i < a.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  }
  return true;
}

void require_same(bool ok, const char* what) {
  if (!ok) throw InvariantError(std::string("instance document disagrees with rebuild: ") + what);
}

void require_kind(const nlohmann::json& j, const char* kind) {
  if (j.at("kind").get<std::string>() != kind) {
    throw ContractError(std::string("instance document is not of kind ") + kind);
  }
}

}  // namespace

ScscInstance scsc_from_json(const nlohmann::json& j, const WorstCaseOptions& opt) {
  require_kind(j, "scsc");
  ScscInstance inst = build_scsc(j.at("d").get<Index>(), constants_from_json(j.at("constants")),
                                 j.at("Lbar_xy").get<double>(), opt);
  const auto& der = j.at("derived");
  require_same(der.at("r").get<double>() == inst.r, "r");
  require_same(der.at("lam_coef").get<double>() == inst.lam_coef, "lam_coef");
  require_same(der.at("tau_coef").get<double>() == inst.tau_coef, "tau_coef");
  const auto& vec = j.at("vectors");
  require_same(same_bits(decode_vector(vec.at("b_tilde")), inst.b_tilde), "b_tilde");
  require_same(same_bits(decode_vector(vec.at("b")), inst.b), "b");
  require_same(same_bits(decode_vector(vec.at("x_hat")), inst.x_hat), "x_hat");
  return inst;
}

CscInstance csc_from_json(const nlohmann::json& j, const WorstCaseOptions& opt) {
  require_kind(j, "csc");
  CscInstance inst = build_csc(j.at("d").get<Index>(), constants_from_json(j.at("constants")),
                               j.at("B").get<double>(), opt);
  require_same(j.at("derived").at("grad_floor").get<double>() == inst.grad_floor, "grad_floor");
  const auto& vec = j.at("vectors");
  require_same(same_bits(decode_vector(vec.at("b_tilde")), inst.b_tilde), "b_tilde");
  require_same(same_bits(decode_vector(vec.at("b")), inst.b), "b");
  require_same(same_bits(decode_vector(vec.at("x_star")), inst.x_star), "x_star");
  return inst;
}

}  // namespace bilevel
