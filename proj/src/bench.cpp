#include "bilevel/bench.hpp"

#include "bilevel/errors.hpp"
#include "bilevel/lower_bound.hpp"
#include "bilevel/worst_case.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <thread>

namespace bilevel::bench {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

[[noreturn]] void field_error(const std::string& path, const std::string& what) {
  throw ConfigError("config field " + path + ": " + what);
}

const json* find(const json& obj, const char* key) {
  if (!obj.is_object()) return nullptr;
  const auto it = obj.find(key);
  return it == obj.end() || it->is_null() ? nullptr : &*it;
}

const json& require_object(const json& obj, const char* key, const std::string& path) {
  const json* v = find(obj, key);
  if (v == nullptr) field_error(path + "/" + key, "missing");
  if (!v->is_object()) field_error(path + "/" + key, "expected an object");
  return *v;
}

double get_number(const json& obj, const char* key, const std::string& path, double fallback) {
  const json* v = find(obj, key);
  if (v == nullptr) return fallback;
  if (!v->is_number()) field_error(path + "/" + key, "expected a number");
  const double x = v->get<double>();
  if (!std::isfinite(x)) field_error(path + "/" + key, "must be finite");
  return x;
}

std::optional<double> get_optional_number(const json& obj, const char* key,
                                          const std::string& path) {
  if (find(obj, key) == nullptr) return std::nullopt;
  return get_number(obj, key, path, 0.0);
}

std::string get_string(const json& obj, const char* key, const std::string& path,
                       const std::string& fallback) {
  const json* v = find(obj, key);
  if (v == nullptr) return fallback;
  if (!v->is_string()) field_error(path + "/" + key, "expected a string");
  return v->get<std::string>();
}

bool get_bool(const json& obj, const char* key, const std::string& path, bool fallback) {
  const json* v = find(obj, key);
  if (v == nullptr) return fallback;
  if (!v->is_boolean()) field_error(path + "/" + key, "expected true or false");
  return v->get<bool>();
}

long long get_int(const json& obj, const char* key, const std::string& path,
                  long long fallback) {
  const json* v = find(obj, key);
  if (v == nullptr) return fallback;
  if (!v->is_number_integer()) field_error(path + "/" + key, "expected an integer");
  return v->get<long long>();
}

/// An integer, or nullopt for "auto" or absence.
std::optional<long long> get_int_or_auto(const json& obj, const char* key,
                                         const std::string& path) {
  const json* v = find(obj, key);
  if (v == nullptr) return std::nullopt;
  if (v->is_string() && v->get<std::string>() == "auto") return std::nullopt;
  if (!v->is_number_integer()) field_error(path + "/" + key, "expected an integer or \"auto\"");
  const long long n = v->get<long long>();
  if (n < 1) field_error(path + "/" + key, "must be at least 1");
  return n;
}

SmoothnessConstants preset_constants(const std::string& name, const std::string& path) {
  if (name == "mild") return mild_preset();
  if (name == "csc_mild") return csc_mild_preset();
  field_error(path, "unknown preset \"" + name + "\" (expected mild or csc_mild)");
}

SmoothnessConstants read_constants(const json& inst, const std::string& path,
                                   const std::string& default_preset) {
  SmoothnessConstants c = preset_constants(get_string(inst, "preset", path, default_preset),
                                           path + "/preset");
  if (const json* over = find(inst, "constants")) {
    if (!over->is_object()) field_error(path + "/constants", "expected an object");
    const std::string cp = path + "/constants";
    for (const auto& [key, value] : over->items()) {
      if (key != "mu_x" && key != "mu_y" && key != "L_x" && key != "L_y" && key != "L_xy" &&
          key != "Ltil_xy" && key != "Ltil_y" && key != "rho_xy" && key != "rho_yy") {
        field_error(cp + "/" + key, "unknown smoothness constant");
      }
      if (!value.is_number()) field_error(cp + "/" + key, "expected a number");
    }
    json merged = to_json(c);
    merged.update(*over, true);
    c = constants_from_json(merged);
  }
  try {
    c.validate();
  } catch (const ContractError& e) {
    field_error(path + "/constants", e.what());
  }
  return c;
}

struct BuiltInstance {
  OraclePtr oracle;
  json description;
  std::optional<double> B;
};

BuiltInstance build_instance(const json& config) {
  const json& inst = require_object(config, "instance", "");
  const std::string path = "/instance";
  const std::string kind = get_string(inst, "kind", path, "");
  const long long d = get_int(inst, "d", path, 32);
  if (d < 1) field_error(path + "/d", "must be positive");
  BuiltInstance out;
  if (kind == "scsc") {
    const SmoothnessConstants c = read_constants(inst, path, "mild");
    const ScscInstance s = build_scsc(d, c, get_optional_number(inst, "Lbar_xy", path));
    out.oracle = s.oracle;
    out.description = to_json(s);
  } else if (kind == "scsc_benchmark") {
    const SmoothnessConstants c = read_constants(inst, path, "mild");
    const ScscBenchmark s = build_scsc_benchmark(d, c, get_optional_number(inst, "Lbar_xy", path));
    out.oracle = s.oracle;
    out.description = {{"kind", "scsc_benchmark"}, {"d", d}, {"constants", to_json(c)},
                       {"Lbar_xy", s.Lbar_xy}};
  } else if (kind == "csc") {
    const SmoothnessConstants c = read_constants(inst, path, "csc_mild");
    const double B = get_number(inst, "B", path, 1.0);
    const CscInstance s = build_csc(d, c, B);
    out.oracle = s.oracle;
    out.description = to_json(s);
    out.B = B;
  } else if (kind == "decoupled") {
    const SmoothnessConstants c = read_constants(inst, path, "mild");
    out.oracle = build_decoupled(d, c);
    out.description = {{"kind", "decoupled"}, {"d", d}, {"constants", to_json(c)}};
  } else {
    field_error(path + "/kind", "expected scsc, scsc_benchmark, csc or decoupled");
  }
  return out;
}

/// Φ(0) − Φ* + (mu_x/2)‖x*‖², the potential the accelerated bounds contract.
double initial_potential(const BilevelOracle& oracle, double mu_x) {
  const RealVector xs = oracle.x_star();
  return oracle.phi_gap(RealVector::Zero(oracle.p())) + 0.5 * mu_x * xs.squaredNorm();
}

std::optional<double> complexity_to_eps(const RunTrace& trace, double eps) {
  for (const TraceRecord& r : trace.records) {
    if (r.phi_gap && *r.phi_gap <= eps) return r.counters.complexity();
  }
  return std::nullopt;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json field_or_null(const json& obj, const char* key) {
  if (!obj.is_object()) return nullptr;
  const auto it = obj.find(key);
  return it == obj.end() ? json(nullptr) : *it;
}

std::string summary_csv(const ResolvedRun& run, const RunOutcome& outcome) {
  std::ostringstream out;
  out << "algorithm,K,N,M,L_phi,eps,final_gap,final_grad_norm,complexity,complexity_to_eps,"
         "status\n";
  const auto opt = [](const json& v) {
    return v.is_number() ? format_double(v.get<double>()) : std::string();
  };
  const json& s = outcome.summary;
  out << run.algorithm << ',' << run.K << ',' << run.N << ',' << run.M << ','
      << format_double(run.L_phi) << ',' << format_double(run.eps) << ',' << opt(field_or_null(s, "final_gap"))
      << ',' << opt(field_or_null(s, "final_grad_norm")) << ',' << opt(field_or_null(s, "complexity")) << ','
      << opt(field_or_null(s, "complexity_to_eps")) << ','
      << field_or_null(s, "status").get<std::string>() << '\n';
  return out.str();
}

void write_run_artifacts(const fs::path& dir, const ResolvedRun& run, const RunOutcome& outcome) {
  fs::create_directories(dir);
  write_atomic(dir / "trace.csv", trace_csv(outcome.trace));
  write_atomic(dir / "instance.json", run.instance_json.dump(2) + "\n");
  write_atomic(dir / "resolved_config.json", run.resolved_json().dump(2) + "\n");
  write_atomic(dir / "summary.csv", summary_csv(run, outcome));
}

int code_for(const std::exception& e) {
  if (dynamic_cast<const ContractError*>(&e) || dynamic_cast<const ConstraintError*>(&e) ||
      dynamic_cast<const CapabilityError*>(&e) || dynamic_cast<const json::exception*>(&e) ||
      dynamic_cast<const InfeasibleDimensionError*>(&e)) {
    return kConfigError;
  }
  if (dynamic_cast<const InvariantError*>(&e)) return kVerificationFailure;
  return kNumericFailure;
}

/// Applies one sweep axis value to a copy of the run config.
json apply_axis(json config, const std::string& axis, double value) {
  if (axis == "kappa_y") {
    json& inst = config["instance"];
    const SmoothnessConstants c = read_constants(inst, "/instance", "mild");
    inst["constants"]["Ltil_y"] = value * c.mu_y;
  } else if (axis == "eps") {
    config["solver"]["eps"] = value;
  } else if (axis == "d") {
    config["instance"]["d"] = static_cast<long long>(std::llround(value));
  } else {
    field_error("/sweep/axis", "expected kappa_y, eps or d");
  }
  return config;
}

}  // namespace

json ResolvedRun::resolved_json() const {
  return {{"instance", config.at("instance")},
          {"solver",
           {{"algorithm", algorithm},
            {"K", K},
            {"N", N},
            {"M", M},
            {"eps", eps},
            {"L_phi", L_phi},
            {"mu_x", mu_x},
            {"kappa_x", L_phi / mu_x},
            {"tau_cost", tau_cost},
            {"stepsize", stepsize},
            {"alpha", alpha},
            {"U", U},
            {"warm_start", warm_start},
            {"spot_checks", spot_checks},
            {"regularize", config.at("solver").contains("regularize")
                               ? config.at("solver").at("regularize")
                               : json(nullptr)}}},
          {"seed", seed}};
}

json load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
}

fs::path output_dir(const json& config, const Overrides& overrides) {
  if (overrides.out) return *overrides.out;
  if (const char* env = std::getenv("BILEVEL_BENCH_OUT"); env != nullptr && *env != '\0') {
    return env;
  }
  return get_string(config, "out", "", "bench_out");
}

void write_atomic(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + tmp.string());
    out << content;
    if (!out.flush()) throw ConfigError("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

ResolvedRun resolve_run(const json& config, const Overrides& overrides) {
  if (!config.is_object()) throw ConfigError("config must be a JSON object");
  ResolvedRun run;
  run.config = config;
  const BuiltInstance inst = build_instance(config);
  run.instance_json = inst.description;
  run.base_oracle = inst.oracle;
  run.oracle = inst.oracle;

  const json& solver = require_object(config, "solver", "");
  const std::string sp = "/solver";
  run.algorithm = get_string(solver, "algorithm", sp, "accbio");
  if (run.algorithm != "accbio" && run.algorithm != "accbio_bg" &&
      run.algorithm != "baseline_aid_gd") {
    field_error(sp + "/algorithm", "expected accbio, accbio_bg or baseline_aid_gd");
  }
  run.eps = get_number(solver, "eps", sp, 1e-6);
  if (!(run.eps > 0.0)) field_error(sp + "/eps", "must be positive");
  run.tau_cost = overrides.tau_cost.value_or(get_number(solver, "tau_cost", sp, 2.0));
  if (!(run.tau_cost > 0.0)) field_error(sp + "/tau_cost", "must be positive");
  run.seed = overrides.seed.value_or(static_cast<std::uint64_t>(get_int(config, "seed", "", 0)));
  run.spot_checks = static_cast<int>(get_int(solver, "spot_checks", sp, 0));
  run.warm_start = get_bool(solver, "warm_start", sp, run.algorithm == "accbio_bg");

  if (const json* reg = find(solver, "regularize")) {
    if (!reg->is_object()) field_error(sp + "/regularize", "expected an object");
    const json* r = find(*reg, "R");
    double R = 0.0;
    if (r != nullptr && r->is_string()) {
      const std::string which = r->get<std::string>();
      if (!inst.B) field_error(sp + "/regularize/R", "\"B\" and \"B2\" need a csc instance");
      if (which == "B") {
        R = *inst.B;
      } else if (which == "B2") {
        R = *inst.B * *inst.B;
      } else {
        field_error(sp + "/regularize/R", "expected a number, \"B\" or \"B2\"");
      }
    } else {
      R = get_number(*reg, "R", sp + "/regularize", 0.0);
    }
    if (!(R > 0.0)) field_error(sp + "/regularize/R", "must be positive");
    const double reg_eps = get_number(*reg, "eps", sp + "/regularize", run.eps);
    run.oracle = regularize_convex(inst.oracle, reg_eps, R);
  }

  const SmoothnessConstants& c = run.oracle->constants();
  run.mu_x = c.mu_x;
  run.U = get_number(solver, "U", sp, 0.0);
  const std::string regime = get_string(solver, "regime", sp, "quadratic-g");
  if (const auto L = get_optional_number(solver, "L_phi", sp)) {
    run.L_phi = *L;
  } else if (regime == "quadratic-g") {
    run.L_phi = l_phi_estimate(c, LPhiRegime::QuadraticG);
  } else if (regime == "bounded-gradient") {
    LPhiInputs in;
    in.U = run.U;
    run.L_phi = l_phi_estimate(c, LPhiRegime::BoundedGradient, in);
  } else if (regime == "general-scsc") {
    run.L_phi = l_phi_estimate(c, LPhiRegime::GeneralScsc,
                               l_phi_inputs_from_exact(*run.oracle, run.eps));
  } else {
    field_error(sp + "/regime", "expected quadratic-g, bounded-gradient or general-scsc");
  }
  if (!(run.L_phi > 0.0)) field_error(sp + "/L_phi", "must be positive");

  const double inner_eps = get_number(solver, "inner_eps", sp, run.eps);
  if (!(inner_eps > 0.0 && inner_eps < 1.0)) field_error(sp + "/inner_eps", "must lie in (0, 1)");
  const double inner_c = get_number(solver, "inner_c", sp, 2.0);
  const int auto_nm = auto_inner_steps(c.kappa_y(), inner_eps, inner_c);
  run.N = static_cast<int>(get_int_or_auto(solver, "N", sp).value_or(auto_nm));
  run.M = static_cast<int>(get_int_or_auto(solver, "M", sp).value_or(auto_nm));
  run.stepsize = get_number(solver, "stepsize", sp, 1.0 / run.L_phi);
  run.alpha = get_number(solver, "alpha", sp, 1.0 / (2.0 * run.L_phi));

  if (const auto K = get_int_or_auto(solver, "K", sp)) {
    run.K = static_cast<int>(*K);
  } else {
    if (!run.oracle->capabilities().phi_star) {
      field_error(sp + "/K", "\"auto\" needs an instance with a known optimum");
    }
    if (!(run.mu_x > 0.0)) field_error(sp + "/K", "\"auto\" needs mu_x > 0");
    const double kappa_x = run.L_phi / run.mu_x;
    const double logs = std::log(2.0 * initial_potential(*run.oracle, run.mu_x) / run.eps);
    double k = 0.0;
    if (run.algorithm == "accbio") {
      k = std::sqrt(kappa_x) * logs;
    } else if (run.algorithm == "accbio_bg") {
      k = 2.0 / std::sqrt(run.alpha * run.mu_x) * logs;
    } else {
      k = 1.0 / (run.stepsize * run.mu_x) * logs;
    }
    run.K = std::max(1, static_cast<int>(std::ceil(k)));
  }
  return run;
}

RunOutcome execute(const ResolvedRun& run) {
  RunOutcome outcome;
  const SmoothnessConstants& c = run.oracle->constants();
  const AgdConfig agd = AgdConfig::from(c, run.N);
  const HeavyBallConfig hb = HeavyBallConfig::from(c, run.M);
  try {
    if (run.algorithm == "accbio") {
      AccBiOConfig cfg{run.K, run.L_phi, run.mu_x, agd, hb, run.eps};
      outcome.trace = accbio(run.oracle, cfg, run.tau_cost);
    } else if (run.algorithm == "accbio_bg") {
      AccBiOBGConfig cfg;
      cfg.K = run.K;
      cfg.alpha = run.alpha;
      cfg.mu_x = run.mu_x;
      cfg.agd = agd;
      cfg.hb = hb;
      cfg.U = run.U;
      cfg.warm_start = run.warm_start;
      outcome.trace = accbio_bg(run.oracle, cfg, run.tau_cost);
    } else {
      outcome.trace =
          baseline_aid_gd(run.oracle, run.stepsize, run.K, agd, hb, run.tau_cost, run.warm_start);
    }
  } catch (const RunDivergedError& e) {
    outcome.trace = e.partial();
    outcome.exit_code = kNumericFailure;
    outcome.message = e.what();
  }

  const RunTrace& t = outcome.trace;
  json s;
  s["status"] = t.status == RunStatus::Completed ? "completed" : "diverged";
  s["message"] = outcome.message;
  s["iterations"] = t.records.empty() ? 0 : t.records.back().k;
  if (!t.records.empty()) {
    const TraceRecord& last = t.last();
    s["final_gap"] = optional_json(last.phi_gap);
    s["final_grad_norm"] = optional_json(last.grad_norm);
    s["grad_norm_exact"] = t.grad_norm_exact;
    s["complexity"] = last.counters.complexity();
    s["counters"] = {{"n_G", last.counters.n_G},
                     {"n_J", last.counters.n_J},
                     {"n_H", last.counters.n_H},
                     {"tau_cost", last.counters.tau_cost}};
  }
  s["complexity_to_eps"] = optional_json(complexity_to_eps(t, run.eps));
  if (run.base_oracle != run.oracle && t.x_final.size() > 0) {
    const Capabilities caps = run.base_oracle->capabilities();
    if (caps.phi_star) s["unregularized_final_gap"] = run.base_oracle->phi_gap(t.x_final);
    if (caps.grad_phi) {
      s["unregularized_final_grad_norm"] = run.base_oracle->grad_phi(t.x_final).norm();
    }
  }
  if (run.spot_checks > 0 && outcome.exit_code == kSuccess) {
    std::mt19937_64 rng(run.seed);
    std::normal_distribution<double> normal;
    double worst = 0.0;
    for (int i = 0; i < run.spot_checks; ++i) {
      RealVector x(run.oracle->p());
      for (Index j = 0; j < x.size(); ++j) x[j] = normal(rng);
      const HypergradientEstimate est =
          aid_estimate(*run.oracle, x, RealVector::Zero(run.oracle->q()), agd, hb);
      const RealVector g = exact_hypergradient(*run.oracle, x);
      worst = std::max(worst, (est.G - g).norm() / (1.0 + g.norm()));
    }
    s["spot_check_max_rel_error"] = worst;
  }
  outcome.summary = s;
  return outcome;
}

int run_experiment(const json& config, const Overrides& overrides) {
  const ResolvedRun run = resolve_run(config, overrides);
  const RunOutcome outcome = execute(run);
  write_run_artifacts(output_dir(config, overrides), run, outcome);
  if (outcome.exit_code != kSuccess) std::cerr << outcome.message << '\n';
  return outcome.exit_code;
}

double fit_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2) {
    throw ContractError("fit_slope: need at least two paired points");
  }
  const double n = static_cast<double>(xs.size());
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i] / n;
    my += ys[i] / n;
  }
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  if (sxx == 0.0) throw ContractError("fit_slope: abscissae are all equal");
  return sxy / sxx;
}

int sweep(const json& config, const Overrides& overrides) {
  const json& sw = require_object(config, "sweep", "");
  const std::string axis = get_string(sw, "axis", "/sweep", "");
  const json* values = find(sw, "values");
  if (values == nullptr || !values->is_array() || values->empty()) {
    field_error("/sweep/values", "expected a nonempty array of numbers");
  }
  std::vector<double> grid;
  for (std::size_t i = 0; i < values->size(); ++i) {
    if (!(*values)[i].is_number()) {
      field_error("/sweep/values/" + std::to_string(i), "expected a number");
    }
    grid.push_back((*values)[i].get<double>());
  }

  // Resolve every point up front so that config errors surface before any run starts.
  std::vector<ResolvedRun> runs;
  for (double v : grid) {
    json point = apply_axis(config, axis, v);
    point.erase("sweep");
    runs.push_back(resolve_run(point, overrides));
  }

  const fs::path out = output_dir(config, overrides);
  fs::create_directories(out);
  std::vector<RunOutcome> outcomes(runs.size());
  std::vector<std::string> errors(runs.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < runs.size(); i = next++) {
      try {
        outcomes[i] = execute(runs[i]);
        std::ostringstream name;
        name << "point_" << i;
        write_run_artifacts(out / name.str(), runs[i], outcomes[i]);
      } catch (const std::exception& e) {
        outcomes[i].exit_code = code_for(e);
        errors[i] = e.what();
      }
    }
  };
  const int width = std::max(1, std::min<int>(overrides.jobs, static_cast<int>(runs.size())));
  std::vector<std::thread> pool;
  for (int i = 1; i < width; ++i) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();

  std::ostringstream csv;
  csv << "axis_value,complexity_to_eps,final_gap\n";
  std::vector<double> xs;
  std::vector<double> ys;
  json points = json::array();
  int failures = 0;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const json& s = outcomes[i].summary;
    const json to_eps = field_or_null(s, "complexity_to_eps");
    const json final_gap = field_or_null(s, "final_gap");
    const bool reached = errors[i].empty() && to_eps.is_number();
    const bool ok = reached && outcomes[i].exit_code == kSuccess;
    if (!ok) ++failures;
    csv << format_double(grid[i]) << ','
        << (reached ? format_double(to_eps.get<double>()) : std::string()) << ','
        << (final_gap.is_number() ? format_double(final_gap.get<double>()) : std::string())
        << '\n';
    if (ok) {
      const double cx = to_eps.get<double>();
      xs.push_back(axis == "eps" ? std::log(1.0 / grid[i]) : std::log(grid[i]));
      ys.push_back(axis == "eps" ? cx : std::log(cx));
    }
    points.push_back({{"axis_value", grid[i]},
                      {"ok", ok},
                      {"error", errors[i]},
                      {"resolved", runs[i].resolved_json()}});
  }
  json meta = {{"axis", axis}, {"points", points}, {"failures", failures}};
  if (xs.size() >= 2) {
    const double slope = fit_slope(xs, ys);
    if (axis == "eps") {
      meta["fit"] = "complexity against ln(1/eps)";
      meta["slope"] = slope;
      // Largest relative deviation of the points from the fitted line.
      const double mx = [&] {
        double m = 0.0;
        for (double x : xs) m += x / static_cast<double>(xs.size());
        return m;
      }();
      const double my = [&] {
        double m = 0.0;
        for (double y : ys) m += y / static_cast<double>(ys.size());
        return m;
      }();
      double worst = 0.0;
      for (std::size_t i = 0; i < xs.size(); ++i) {
        const double fit = my + slope * (xs[i] - mx);
        worst = std::max(worst, std::abs(fit - ys[i]) / ys[i]);
      }
      meta["max_relative_deviation"] = worst;
    } else {
      meta["fit"] = "log complexity against log axis value";
      meta["slope"] = slope;
    }
  } else {
    meta["slope"] = nullptr;
  }
  write_atomic(out / "sweep_summary.csv", csv.str());
  write_atomic(out / "sweep_meta.json", meta.dump(2) + "\n");
  if (failures > 0) {
    for (std::size_t i = 0; i < runs.size(); ++i) {
      if (!errors[i].empty()) std::cerr << "point " << i << ": " << errors[i] << '\n';
    }
  }
  if (failures == static_cast<int>(runs.size())) return kNumericFailure;
  return kSuccess;
}

namespace {

SimAlgorithm parse_algorithm(const std::string& name, const std::string& path) {
  if (name == "baseline_aid_gd") return SimAlgorithm::BaselineAidGd;
  if (name == "accbio") return SimAlgorithm::AccBiO;
  if (name == "accbio_bg") return SimAlgorithm::AccBiOBG;
  field_error(path, "expected baseline_aid_gd, accbio or accbio_bg");
}

Budgets read_budgets(const json& obj, const std::string& path, Budgets fallback) {
  const json* b = find(obj, "budgets");
  if (b == nullptr) return fallback;
  if (!b->is_object()) field_error(path + "/budgets", "expected an object");
  return {get_int(*b, "K", path + "/budgets", fallback.K),
          get_int(*b, "Q", path + "/budgets", fallback.Q),
          get_int(*b, "T", path + "/budgets", fallback.T)};
}

std::vector<std::string> read_algorithms(const json& obj, const std::string& path) {
  std::vector<std::string> out;
  const json* a = find(obj, "algorithms");
  if (a == nullptr) return {"baseline_aid_gd", "accbio", "accbio_bg"};
  if (!a->is_array()) field_error(path + "/algorithms", "expected an array");
  for (std::size_t i = 0; i < a->size(); ++i) {
    if (!(*a)[i].is_string()) field_error(path + "/algorithms/" + std::to_string(i), "expected a string");
    out.push_back((*a)[i].get<std::string>());
  }
  return out;
}

json item(const std::string& name, bool pass, json values) {
  return {{"name", name}, {"pass", pass}, {"values", std::move(values)}};
}

void scsc_battery(const json& cfg, json& items) {
  const std::string path = "/lower_bound/scsc";
  const SmoothnessConstants c = read_constants(cfg, path, "mild");
  const Budgets budgets = read_budgets(cfg, path, {10, 5, 3});
  const long long M = scsc_support_cap(budgets.K, budgets.Q, budgets.T);
  const ScscCoefficients coef = scsc_coefficients(c, get_optional_number(cfg, "Lbar_xy", path));
  const auto d_field = get_int_or_auto(cfg, "d", path);
  const Index d = d_field ? static_cast<Index>(*d_field) : scsc_feasible_dimension(coef, M);
  ScscInstance inst = build_scsc(d, c, get_optional_number(cfg, "Lbar_xy", path));
  if (const auto corrupt = get_optional_number(cfg, "corrupt_b_tilde3", path)) {
    inst.b_tilde[2] = *corrupt;
  }

  const double residual = std::abs(scsc_quartic(inst.r, inst.lam_coef, inst.tau_coef));
  items.push_back(item("scsc_quartic_root",
                       residual <= 1e-10 && inst.r > inst.bracket_lo() && inst.r < 1.0,
                       {{"r", inst.r}, {"residual", residual}, {"bracket_lo", inst.bracket_lo()}}));

  std::vector<long long> candidate_dims = {16, 32};
  if (const json* ld = find(cfg, "candidate_d")) {
    if (!ld->is_array()) field_error(path + "/candidate_d", "expected an array");
    candidate_dims = ld->get<std::vector<long long>>();
  }
  candidate_dims.push_back(d);
  for (long long ld : candidate_dims) {
    ScscInstance li = ld == d ? inst : build_scsc(ld, c, inst.Lbar_xy);
    const auto corrupt = get_optional_number(cfg, "corrupt_b_tilde3", path);
    if (ld != d && corrupt) li.b_tilde[2] = *corrupt;
    const double err = (li.x_hat - scsc_minimizer_dense(li)).norm();
    const double bound = li.candidate_error_bound();
    items.push_back(item("scsc_candidate_d" + std::to_string(ld), err <= bound,
                         {{"d", ld}, {"error", err}, {"bound", bound}}));
  }

  for (const std::string& name : read_algorithms(cfg, path)) {
    const SimAlgorithm alg = parse_algorithm(name, path + "/algorithms");
    const SimulationResult sim = simulate_on_instance(inst, alg, budgets);
    const LowerBoundReport sup = verify_support_cap(sim.profile, inst);
    items.push_back(item("scsc_support_" + name, sup.pass, to_json(sup)));
    LowerBoundReport gap = verify_gap_floor(inst, sim.x_final, M);
    gap.budgets = budgets;
    items.push_back(item("scsc_gap_floor_" + name, gap.pass, to_json(gap)));
  }
  const LowerBoundReport control = verify_gap_floor(inst, inst.oracle->x_star(), M);
  items.push_back(item("scsc_gap_floor_rejects_x_star", !control.pass, to_json(control)));
}

void csc_battery(const json& cfg, json& items) {
  const std::string path = "/lower_bound/csc";
  const SmoothnessConstants c = read_constants(cfg, path, "csc_mild");
  const Budgets budgets = read_budgets(cfg, path, {5, 1, 3});
  const long long M = csc_support_cap(budgets.K, budgets.Q, budgets.T);
  const Index d = static_cast<Index>(get_int(cfg, "d", path, 20));
  const double B = get_number(cfg, "B", path, 1.0);
  const CscInstance inst = build_csc(d, c, B);

  const double g_star = inst.oracle->grad_phi(inst.x_star).norm();
  items.push_back(item("csc_minimizer", g_star <= 1e-9 * inst.b_tilde.norm(),
                       {{"grad_norm_at_x_star", g_star}, {"b_tilde_norm", inst.b_tilde.norm()}}));
  const GradFloorCheck floor = csc_grad_floor_verify(inst);
  items.push_back(item("csc_constrained_floor", floor.measured_min >= floor.floor,
                       {{"measured_min", floor.measured_min}, {"floor", floor.floor}}));

  const double eps = get_number(cfg, "rstar_eps", path, inst.grad_floor);
  const RStar rs = csc_rstar(c, B, eps);
  const double rr = rs.r_star;
  const double rres = std::abs(rr * rr * rr * rr + rs.linear_coef * rr - rs.rhs) /
                      std::max(1.0, rs.rhs);
  items.push_back(item("csc_rstar_root", rres <= 1e-10,
                       {{"eps", eps}, {"r_star", rr}, {"relative_residual", rres}}));

  for (const std::string& name : read_algorithms(cfg, path)) {
    const SimAlgorithm alg = parse_algorithm(name, path + "/algorithms");
    const SimulationResult sim = simulate_on_instance(inst, alg, budgets);
    const LowerBoundReport sup = verify_support_cap(sim.profile, inst);
    items.push_back(item("csc_support_" + name, sup.pass, to_json(sup)));
    LowerBoundReport grad = verify_grad_floor(inst, sim.x_final, M);
    grad.budgets = budgets;
    items.push_back(item("csc_grad_floor_" + name, grad.pass, to_json(grad)));
  }
  const LowerBoundReport control = verify_grad_floor(inst, inst.x_star, M);
  items.push_back(item("csc_grad_floor_rejects_x_star", !control.pass, to_json(control)));
}

}  // namespace

json lower_bound_campaign(const json& config) {
  const json empty = json::object();
  const json* lb = find(config, "lower_bound");
  if (lb != nullptr && !lb->is_object()) field_error("/lower_bound", "expected an object");
  const json& root = lb != nullptr ? *lb : empty;
  json items = json::array();
  const json* scsc = find(root, "scsc");
  const json* csc = find(root, "csc");
  if (scsc == nullptr || scsc->is_object()) scsc_battery(scsc ? *scsc : empty, items);
  if (csc == nullptr || csc->is_object()) csc_battery(csc ? *csc : empty, items);
  bool pass = true;
  json failed = json::array();
  for (const json& it : items) {
    if (!it["pass"].get<bool>()) {
      pass = false;
      failed.push_back(it["name"]);
    }
  }
  return {{"pass", pass}, {"failed", failed}, {"items", items}};
}

int verify_lower_bounds(const json& config, const Overrides& overrides) {
  const json campaign = lower_bound_campaign(config);
  const fs::path out = output_dir(config, overrides);
  fs::create_directories(out);
  write_atomic(out / "campaign.json", campaign.dump(2) + "\n");
  if (!campaign["pass"].get<bool>()) {
    for (const json& name : campaign["failed"]) {
      std::cerr << "failed: " << name.get<std::string>() << '\n';
    }
    return kVerificationFailure;
  }
  return kSuccess;
}

int report(const fs::path& dir, std::ostream& out) {
  if (!fs::is_directory(dir)) throw ConfigError("report: " + dir.string() + " is not a directory");
  bool found = false;
  const auto dump_file = [&](const fs::path& p) {
    std::ifstream in(p);
    out << "== " << p.string() << '\n' << in.rdbuf();
    found = true;
  };
  std::vector<fs::path> summaries;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().filename() == "summary.csv") {
      summaries.push_back(entry.path());
    }
  }
  std::sort(summaries.begin(), summaries.end());
  for (const fs::path& p : summaries) dump_file(p);
  if (fs::exists(dir / "sweep_summary.csv")) dump_file(dir / "sweep_summary.csv");
  if (fs::exists(dir / "sweep_meta.json")) {
    std::ifstream in(dir / "sweep_meta.json");
    const json meta = json::parse(in);
    out << "== sweep over " << meta["axis"].get<std::string>() << ": slope " << meta["slope"].dump()
        << ", failures " << meta["failures"].dump() << '\n';
    found = true;
  }
  if (fs::exists(dir / "campaign.json")) {
    std::ifstream in(dir / "campaign.json");
    const json campaign = json::parse(in);
    out << "== lower-bound campaign: " << (campaign["pass"].get<bool>() ? "PASS" : "FAIL") << '\n';
    for (const json& it : campaign["items"]) {
      out << (it["pass"].get<bool>() ? "  pass  " : "  FAIL  ") << it["name"].get<std::string>()
          << '\n';
    }
    found = true;
  }
  if (!found) {
    out << "no artifacts found in " << dir.string() << '\n';
    return kConfigError;
  }
  return kSuccess;
}

}  // namespace bilevel::bench
