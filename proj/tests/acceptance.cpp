#include "bilevel/accel_solvers.hpp"
#include "bilevel/bench.hpp"
#include "bilevel/hypergrad.hpp"
#include "bilevel/linalg.hpp"
#include "bilevel/lower_bound.hpp"
#include "bilevel/worst_case.hpp"
#include "reference.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace bilevel;
using namespace bilevel::reference;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;
};

/// Collects failure reasons and measured values for one criterion.
class Check {
 public:
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass_ = false;
      if (!failures_.empty()) failures_ += "; ";
      failures_ += what;
    }
  }
  void note(const std::string& key, double value) {
    std::ostringstream s;
    s << key << '=' << value;
    notes_ += (notes_.empty() ? "" : " ") + s.str();
  }
  Verdict verdict() const {
    return {pass_, failures_.empty() ? notes_ : notes_ + " | failed: " + failures_};
  }

 private:
  bool pass_ = true;
  std::string failures_;
  std::string notes_;
};

double index_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
  return bench::fit_slope(xs, ys);
}

RealVector random_vec(Index d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  RealVector v(d);
  for (Index i = 0; i < d; ++i) v[i] = normal(rng);
  return v;
}

SmoothnessConstants benchmark_constants() {
  SmoothnessConstants c = mild_preset();
  c.mu_y = 0.25;
  return c;
}

Verdict zero_chain() {
  Check chk;
  int checked = 0;
  for (Index d : {8, 64}) {
    for (const auto& z : {StructuredOperator::z_scsc(d), StructuredOperator::z_csc(d)}) {
      const auto z2 = StructuredOperator::power(z, 2);
      for (Index k = 0; k < d; ++k) {
        const RealVector out = z2.apply(RealVector::Unit(d, k));
        for (Index i = k + 2; i < d; ++i) {
          chk.require(out[i] == 0.0, "coordinate beyond k+1 nonzero at d=" + std::to_string(d));
        }
        ++checked;
      }
    }
  }
  chk.note("unit_vectors", checked);
  return chk.verdict();
}

Verdict matrix_tables() {
  Check chk;
  int mismatches = 0;
  for (Index d = 4; d <= 8; ++d) {
    const auto zs = StructuredOperator::z_scsc(d);
    const auto zc = StructuredOperator::z_csc(d);
    const auto pw = [](const StructuredOperator& z, int k) {
      return StructuredOperator::power(z, k).to_dense();
    };
    mismatches += zs.to_dense() != scsc_z_table(d);
    mismatches += pw(zs, 2) != scsc_z2_table(d);
    mismatches += pw(zs, 4) != scsc_z4_table(d);
    mismatches += pw(zc, 2) != csc_z2_table(d);
    mismatches += pw(zc, 4) != csc_z4_table(d);
    mismatches += pw(zc, 6) != csc_z6_table(d);
  }
  chk.require(mismatches == 0, std::to_string(mismatches) + " tables differ");
  chk.note("tables", 30);
  return chk.verdict();
}

Verdict candidate_certificate() {
  Check chk;
  for (Index d : {16, 32}) {
    const auto inst = build_scsc(d, mild_preset());
    const double lam = inst.lam_coef, tau = inst.tau_coef, r = inst.r;
    const double residual = std::abs(std::pow(r, 4) - (4 + lam) * std::pow(r, 3) +
                                     (6 + 2 * lam + tau) * r * r - (4 + lam) * r + 1);
    const double xi = lam / (2 * tau);
    const double lo = 1 - 1 / (0.5 + std::sqrt(xi + 0.25));
    const DenseMatrix system =
        scsc_z4_table(d) + lam * scsc_z2_table(d) + tau * DenseMatrix::Identity(d, d);
    const RealVector x_dense = system.lu().solve(inst.b_tilde);
    const double err = (inst.x_hat - x_dense).norm();
    const double bound = (7 + lam) / tau * std::pow(r, static_cast<double>(d));
    chk.require(residual <= 1e-10, "quartic residual");
    chk.require(r > lo && r < 1, "r outside bracket");
    chk.require(err <= bound, "certificate at d=" + std::to_string(d));
    chk.note("err_d" + std::to_string(d), err);
    chk.note("bound_d" + std::to_string(d), bound);
  }
  return chk.verdict();
}

Verdict csc_minimizer_and_floor() {
  Check chk;
  for (Index d : {8, 20}) {
    const double B = 1.0;
    const auto inst = build_csc(d, csc_mild_preset(), B);
    const auto& c = inst.constants;
    const auto ref = csc_dense(d, c.L_x, c.mu_y, c.L_y, c.Ltil_xy, inst.beta, inst.b);
    const RealVector x = RealVector::Constant(d, B / std::sqrt(static_cast<double>(d)));
    const double g = inst.oracle->grad_phi(x).norm();
    const double g_ref = ref.grad_phi(x).norm();
    chk.require(g <= 1e-9 * inst.b_tilde.norm() && g_ref <= 1e-9 * inst.b_tilde.norm(),
                "stationarity at d=" + std::to_string(d));
    const double measured =
        constrained_min_grad(ref.hessian_phi(), ref.grad_phi(RealVector::Zero(d)), 3);
    chk.require(measured >= inst.grad_floor, "floor at d=" + std::to_string(d));
    chk.note("min_grad_d" + std::to_string(d), measured);
    chk.note("floor_d" + std::to_string(d), inst.grad_floor);
  }
  return chk.verdict();
}

Verdict support_and_gap_floor() {
  Check chk;
  const Budgets b{10, 5, 3};
  const long long M = scsc_support_cap(b.K, b.Q, b.T);
  const Index d = scsc_feasible_dimension(scsc_coefficients(mild_preset()), M);
  chk.require(d <= 256, "feasible d above 256");
  const auto inst = build_scsc(d, mild_preset());
  const auto res = simulate_on_instance(inst, SimAlgorithm::BaselineAidGd, b);
  const auto sup = verify_support_cap(res.profile, inst);
  const auto gap = verify_gap_floor(inst, res.x_final, M);
  chk.require(sup.support_pass, "support beyond M");
  chk.require(sup.span_pass, "span residual");
  chk.require(gap.pass, "gap below floor");
  chk.note("d", static_cast<double>(d));
  chk.note("M", static_cast<double>(M));
  chk.note("max_index", static_cast<double>(sup.observed_max_index));
  chk.note("span_residual", *sup.span_residual);
  chk.note("gap", *gap.observed_gap);
  chk.note("floor", *gap.gap_floor);
  return chk.verdict();
}

Verdict grad_floor() {
  Check chk;
  const auto inst = build_csc(20, csc_mild_preset(), 1.0);
  const Budgets b{5, 1, 3};
  const long long M = csc_support_cap(b.K, b.Q, b.T);
  chk.require(M == 10, "budget mapping");
  const auto res = simulate_on_instance(inst, SimAlgorithm::BaselineAidGd, b);
  chk.require(verify_support_cap(res.profile, inst).pass, "run left the span");
  const auto rep = verify_grad_floor(inst, res.x_final, M);
  chk.require(rep.pass, "gradient below floor");
  const auto control = verify_grad_floor(inst, inst.x_star, M);
  chk.require(!control.pass, "negative control passed");
  chk.note("grad", *rep.observed_grad_norm);
  chk.note("floor", *rep.grad_floor);
  chk.note("control_grad", *control.observed_grad_norm);
  return chk.verdict();
}

Verdict inner_rates() {
  Check chk;
  SmoothnessConstants c = benchmark_constants();
  const auto inst = build_scsc_benchmark(16, c);
  std::mt19937_64 rng(70);
  const RealVector x = random_vec(16, rng), y0 = random_vec(16, rng);
  const RealVector ys = inst.oracle->y_star(x);
  double worst = 0.0;
  for (int N = 1; N <= 20; ++N) {
    const double err = (agd_inner(*inst.oracle, x, y0, AgdConfig::from(c, N)) - ys).norm();
    const double env = std::sqrt((c.Ltil_y + c.mu_y) / c.mu_y) * (y0 - ys).norm() *
                       std::exp(-N / (2.0 * std::sqrt(c.Ltil_y / c.mu_y)));
    worst = std::max(worst, err / env);
  }
  chk.require(worst <= 1.0, "AGD above envelope");
  chk.note("agd_worst_ratio", worst);

  const Index d = 50;
  const RealVector eig = RealVector::LinSpaced(d, 1.0, 100.0);
  HeavyBallStepper hb(HeavyBallConfig::from(100.0, 1.0, 1), RealVector::Ones(d),
                      RealVector::Ones(d));
  std::vector<double> ks, logs;
  for (int k = 1; k <= 300; ++k) {
    hb.step([&](const RealVector& u) { return RealVector(eig.cwiseProduct(u)); },
            RealVector::Zero(d));
    if (k > 150) {
      ks.push_back(k);
      logs.push_back(std::log(hb.current().norm()));
    }
  }
  const double slope = index_slope(ks, logs);
  const double target = std::log(9.0 / 11.0);
  chk.require(std::abs(slope - target) <= 0.1 * std::abs(target), "heavy-ball slope");
  chk.note("hb_slope", slope);
  chk.note("target", target);
  return chk.verdict();
}

Verdict hypergradient_bound() {
  Check chk;
  const auto c = benchmark_constants();
  const auto inst = build_scsc(32, c);
  const auto& o = *inst.oracle;
  std::mt19937_64 rng(80);
  double worst = 0.0;
  int violations = 0;
  for (int N : {5, 10, 20, 40}) {
    for (int M : {5, 10, 20, 40}) {
      for (int s = 0; s < 5; ++s) {
        const RealVector x = random_vec(32, rng);
        const auto est = aid_estimate(o, x, RealVector::Zero(32), AgdConfig::from(c, N),
                                      HeavyBallConfig::from(c, M));
        const double err = (est.G - o.grad_phi(x)).norm();
        violations += !(est.error_bound && err <= *est.error_bound);
        if (est.error_bound) worst = std::max(worst, err / *est.error_bound);
      }
    }
  }
  chk.require(violations == 0, std::to_string(violations) + " points above bound");
  const RealVector x = RealVector::Ones(32);
  const auto aid = aid_estimate(o, x, RealVector::Zero(32), AgdConfig::from(c, 200),
                                HeavyBallConfig::from(c, 200));
  const auto itd = itd_estimate(o, x, RealVector::Zero(32), 400, 1.0 / c.Ltil_y);
  const double rel = (aid.G - itd.G).norm() / aid.G.norm();
  chk.require(rel <= 1e-6, "AID and ITD disagree");
  chk.note("worst_ratio", worst);
  chk.note("aid_itd_rel", rel);
  return chk.verdict();
}

Verdict accbio_rate() {
  Check chk;
  const auto c = benchmark_constants();
  const auto inst = build_scsc(32, c);
  const double eps = 1e-6;
  const int n = auto_inner_steps(c.kappa_y(), eps);
  const AccBiOConfig cfg{60, l_phi_estimate(c, LPhiRegime::QuadraticG), c.mu_x,
                         AgdConfig::from(c, n), HeavyBallConfig::from(c, n), eps};
  const RunTrace tr = accbio(inst.oracle, cfg);
  const double rate = 1.0 - 1.0 / std::sqrt(cfg.kappa_x());
  const double xs = inst.oracle->x_star().norm();
  const double pot = inst.oracle->phi_gap(RealVector::Zero(32)) + 0.5 * c.mu_x * xs * xs;
  int above = 0;
  std::vector<double> ks, logs;
  for (const auto& r : tr.records) {
    above += *r.phi_gap > std::pow(rate, r.k) * pot + eps / 2;
    const double excess = *r.phi_gap - eps / 2;
    if (r.k >= 15 && excess > 0.0) {
      ks.push_back(r.k);
      logs.push_back(std::log(excess));
    }
  }
  chk.require(above == 0, std::to_string(above) + " iterates above the bound");
  chk.require(ks.size() >= 2, "too few points for a slope");
  const double slope = ks.size() >= 2 ? index_slope(ks, logs) : 0.0;
  const double target = std::log(rate);
  chk.require(slope <= 0.85 * target, "slope shallower than the rate allows");
  chk.note("final_gap", *tr.last().phi_gap);
  chk.note("slope", slope);
  chk.note("log_rate", target);
  chk.note("N", n);
  return chk.verdict();
}

Verdict bg_scaling() {
  Check chk;
  nlohmann::json cfg = nlohmann::json::parse(R"({
    "instance": {"kind": "scsc_benchmark", "d": 32, "preset": "mild",
                 "constants": {"mu_y": 0.25, "L_x": 0.5}},
    "solver": {"algorithm": "accbio_bg", "K": "auto", "N": "auto", "M": "auto", "eps": 1e-4}
  })");
  std::vector<double> xs, ys;
  for (double kappa : {1.0, 4.0, 16.0, 64.0}) {
    cfg["instance"]["constants"]["Ltil_y"] = kappa * 0.25;
    const auto out = bench::execute(bench::resolve_run(cfg, {}));
    const auto to_eps = out.summary.find("complexity_to_eps");
    const bool reached = to_eps != out.summary.end() && to_eps->is_number();
    chk.require(reached, "kappa_y=" + std::to_string(kappa) + " missed eps");
    if (reached) {
      xs.push_back(std::log(kappa));
      ys.push_back(std::log(to_eps->get<double>()));
      chk.note("complexity_k" + std::to_string(static_cast<int>(kappa)), to_eps->get<double>());
    }
  }
  const double slope = xs.size() >= 2 ? index_slope(xs, ys) : 0.0;
  chk.require(slope >= 0.25 && slope <= 1.0, "log-log slope outside [0.25, 1]");
  chk.note("slope", slope);
  return chk.verdict();
}

Verdict convex_wrappers() {
  Check chk;
  const double B = 1.0, eps = 1e-3;
  const auto inst = build_csc(20, csc_mild_preset(), B);
  for (int mode = 0; mode < 2; ++mode) {
    const double R = mode == 0 ? B * B : B;
    const auto reg = regularize_convex(inst.oracle, eps, R);
    const auto& c = reg->constants();
    const double L_phi = l_phi_estimate(c, LPhiRegime::QuadraticG);
    const double xt = reg->x_star().norm();
    const double pot = reg->phi_gap(RealVector::Zero(20)) + 0.5 * c.mu_x * xt * xt;
    const double denom = 4.0 * L_phi + 8.0 * eps / B;
    const double inner_eps = mode == 0 ? eps / 2 : eps * eps / denom;
    const double target = mode == 0 ? eps / 2 : eps * eps / 2 / denom;
    const int K = static_cast<int>(std::ceil(std::sqrt(L_phi / c.mu_x) * std::log(pot / target)));
    const int n = auto_inner_steps(c.kappa_y(), inner_eps);
    const AccBiOConfig cfg{K, L_phi, c.mu_x, AgdConfig::from(c, n), HeavyBallConfig::from(c, n),
                           inner_eps};
    const RunTrace tr = accbio(reg, cfg);
    if (mode == 0) {
      const double gap = inst.oracle->phi_gap(tr.x_final);
      chk.require(gap <= eps, "gap above eps with R=B^2");
      chk.note("gap", gap);
    } else {
      const double g = inst.oracle->grad_phi(tr.x_final).norm();
      chk.require(g <= 5 * eps, "gradient above 5 eps with R=B");
      chk.note("grad", g);
    }
    chk.note(mode == 0 ? "K_gap" : "K_grad", K);
  }
  return chk.verdict();
}

Verdict accounting() {
  Check chk;
  const auto c = benchmark_constants();
  const auto inst = build_scsc(32, c);
  const RealVector x = RealVector::Ones(32);
  int mismatches = 0;
  for (int N : {5, 10, 20, 40}) {
    for (int M : {5, 10, 20, 40}) {
      for (double tau : {1.0, 2.0, 5.0}) {
        auto [o, n] = counted(inst.oracle, tau);
        aid_estimate(*o, x, RealVector::Zero(32), AgdConfig::from(c, N),
                     HeavyBallConfig::from(c, M));
        mismatches += n->n_G != N + 2 || n->n_H != M || n->n_J != 1;
        mismatches += n->complexity() != (N + 2) + tau * (M + 1);
      }
    }
    auto [o, n] = counted(inst.oracle, 2.0);
    itd_estimate(*o, x, RealVector::Zero(32), N, 1.0 / c.Ltil_y);
    mismatches += n->n_G != N + 2 || n->n_H != N - 1 || n->n_J != N;
    mismatches += n->complexity() != (N + 2) + 2.0 * (2 * N - 1);
  }
  chk.require(mismatches == 0, std::to_string(mismatches) + " counter mismatches");
  chk.note("configs", 4 * 4 * 3 + 4);
  return chk.verdict();
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Verdict()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "zero-chain exactness", 1.0, zero_chain},
      {2, "coupling matrix tables", 1.0, matrix_tables},
      {3, "geometric candidate certificate", 5.0, candidate_certificate},
      {4, "convex minimizer and gradient floor", 5.0, csc_minimizer_and_floor},
      {5, "support cap and gap floor", 30.0, support_and_gap_floor},
      {6, "gradient-norm floor", 10.0, grad_floor},
      {7, "inner-solver rates", 10.0, inner_rates},
      {8, "hypergradient error bound", 30.0, hypergradient_bound},
      {9, "accelerated outer rate", 60.0, accbio_rate},
      {10, "warm-started scaling in kappa_y", 300.0, bg_scaling},
      {11, "convex wrappers", 120.0, convex_wrappers},
      {12, "complexity accounting", 1.0, accounting},
  };
  int failed = 0;
  for (const auto& cr : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = cr.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (secs > cr.budget_s) {
      v.pass = false;
      v.detail += " | failed: runtime over budget";
    }
    failed += !v.pass;
    std::printf("criterion %2d %-38s %s (%.2f s) %s\n", cr.id, cr.name, v.pass ? "PASS" : "FAIL",
                secs, v.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed,
              criteria.size());
  return failed == 0 ? 0 : 1;
}
