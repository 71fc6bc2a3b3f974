// Acceptance suite: one PASS/FAIL line per criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>

#include "CLI11.hpp"
#include "eqps/io.hpp"
#include "eqps/simulation.hpp"
#include "oracles.hpp"

using namespace eqps;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Options {
  int threads = 1;
  std::uint64_t seed = 20240521;
};

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double mean_se(const std::vector<double>& v) { return std::sqrt(variance_of(v) / static_cast<double>(v.size())); }

SimulationOptions sim_options(const Options& o, int replicates) {
  SimulationOptions s;
  s.replicates = replicates;
  s.seed = o.seed;
  s.threads = o.threads;
  return s;
}

// ---------------------------------------------------------------------------

Outcome ac1_conjugacy(const Options&) {
  Timer t;
  double worst = 0.0;
  bool order_exact = true;
  RngStream rng(1, 0);
  for (int trial = 0; trial < 2000; ++trial) {
    const double a = 0.2 + 30.0 * rng.uniform();
    const double b = 0.2 + 30.0 * rng.uniform();
    const int n = 1 + static_cast<int>(200 * rng.uniform());
    const int y = static_cast<int>((n + 1) * rng.uniform()) % (n + 1);
    const auto post = posterior_update(robustify({{1.0, a, b}}, VagueComponent::uniform(), 0.0), make_summary(y, n));
    worst = std::max({worst, std::fabs(post.components[0].a - (a + y)), std::fabs(post.components[0].b - (b + n - y))});
    const int n1 = n / 2, y1 = std::min(y, n1);
    const auto prior = robustify({{1.0, 2.0, 3.0}}, VagueComponent::uniform(), 0.0);
    const auto two = posterior_update(posterior_update(prior, make_summary(y1, n1 == 0 ? 1 : n1)),
                                      make_summary(y - y1, n - n1));
    const auto one = posterior_update(prior, make_summary(y, n + (n1 == 0 ? 1 : 0)));
    if (n1 > 0) order_exact = order_exact && two.components[0].a == one.components[0].a &&
                              two.components[0].b == one.components[0].b;
  }
  const double secs = t.seconds();
  return {worst <= 1e-12 && order_exact && secs < 1.0,
          "max parameter error " + fmt("%.2e", worst) + ", update order exact " + (order_exact ? "yes" : "no") +
              ", runtime " + fmt("%.3f", secs) + " s"};
}

Outcome ac2_weight_update(const Options&) {
  const auto post = posterior_update(robustify({{1.0, 2.0, 2.0}}, VagueComponent::uniform(), 0.5), make_summary(1, 2));
  const double f0 = oracle::beta_binomial_marginal(1.0, 1.0, 1, 2);
  const double f1 = oracle::beta_binomial_marginal(2.0, 2.0, 1, 2);
  const double oracle_w = 0.5 * f0 / (0.5 * f0 + 0.5 * f1);
  const bool pass = std::fabs(post.omega - 0.454545) <= 1e-6 + 1e-9 && std::fabs(post.omega - 5.0 / 11.0) <= 1e-9 &&
                    std::fabs(post.omega - oracle_w) <= 1e-9;
  return {pass, "omega_hat " + fmt("%.12f", post.omega) + ", quadrature " + fmt("%.12f", oracle_w)};
}

Outcome ac3_equivalence(const Options&) {
  Timer t;
  const double sym = equivalence_prob(make_summary(37, 120), make_summary(37, 120));
  // Beta(1, 3) against Beta(1, 1).
  const double skew = equivalence_prob(make_summary(1, 4), make_summary(1, 2), ContinuityMode::Strict);
  struct Pair {
    double a1, b1, a2, b2;
  };
  double worst = 0.0;
  for (const auto& p : {Pair{1, 3, 1, 1}, Pair{287, 112, 65, 35}}) {
    const double q = prob_beta_greater(p.a1, p.b1, p.a2, p.b2);
    const double mc = oracle::mc_prob_greater(p.a1, p.b1, p.a2, p.b2, 10000000, 99);
    worst = std::max(worst, std::fabs(q - mc));
  }
  const double secs = t.seconds();
  const bool pass = std::fabs(sym - 1.0) <= 1e-6 && std::fabs(skew - 0.5) <= 1e-6 && worst <= 0.001 && secs < 10.0;
  return {pass, "symmetric " + fmt("%.9f", sym) + ", Beta(1,3) vs uniform " + fmt("%.9f", skew) +
                    ", max |quadrature - MC| " + fmt("%.5f", worst) + ", runtime " + fmt("%.2f", secs) + " s"};
}

Outcome ac4_null_calibration(const Options& o) {
  ScenarioConfig cfg;
  cfg.beta1 = 0.0;
  std::vector<AnalysisVariant> v(1);
  v[0].method = Method::NoBorrow;
  Timer t;
  const auto recs = run_replicates(cfg, v, sim_options(o, 5000));
  const auto s = summarize_records(recs, 0.0);
  const bool pass = s.n_fail == 0 && s.rejection_rate >= 0.04 && s.rejection_rate <= 0.06;
  return {pass, "rejection rate " + fmt("%.4f", s.rejection_rate) + " (SE " + fmt("%.4f", s.rejection_se) +
                    ") over " + std::to_string(s.n) + " replicates, " + fmt("%.0f", t.seconds()) + " s"};
}

Outcome ac5_conflict(const Options& o) {
  ScenarioConfig cfg;
  cfg.beta3 = cfg.beta4 = 1.0;
  std::vector<AnalysisVariant> v(2);
  v[0].method = Method::Eqps;
  v[1].method = Method::Map;
  Timer t;
  const auto recs = run_replicates(cfg, v, sim_options(o, 500));
  const double truth = true_risk_difference(cfg);
  const auto eq = summarize_records(std::span<const ResultRecord>(recs).subspan(0, 500), truth);
  const auto map = summarize_records(std::span<const ResultRecord>(recs).subspan(500, 500), truth);
  const bool pass = eq.mean_omega >= 0.8 && std::fabs(eq.bias) <= std::fabs(map.bias);
  return {pass, "mean omega_Eq " + fmt("%.3f", eq.mean_omega) + " (SE " + fmt("%.3f", eq.omega_se) +
                    "), bias EQPS " + fmt("%+.4f", eq.bias) + " (SE " + fmt("%.4f", eq.bias_se) + "), bias MAP " +
                    fmt("%+.4f", map.bias) + " (SE " + fmt("%.4f", map.bias_se) + "), failures " +
                    std::to_string(eq.n_fail + map.n_fail) + ", " + fmt("%.0f", t.seconds()) + " s"};
}

Outcome ac6_weight_curve(const Options& o) {
  CurveConfig c;
  const double levels[] = {-0.8, -0.6, -0.4, -0.2, 0.0, 0.2, 0.4, 0.6, 0.8};
  c.points = CurveConfig::diagonal(levels);
  c.lambdas = {0.8};
  c.deltas = {0.1, 0.2};
  Timer t;
  const auto rows = weight_curve(c, sim_options(o, 200));
  std::vector<const CurveRow*> narrow, wide;
  for (const auto& r : rows) (r.delta == 0.1 ? narrow : wide).push_back(&r);
  std::size_t peak = 0;
  for (std::size_t i = 1; i < narrow.size(); ++i) {
    if (narrow[i]->mean_weight > narrow[peak]->mean_weight) peak = i;
  }
  // Unimodal up to Monte Carlo noise: no step against the slope beyond 2 SE.
  bool unimodal = true;
  for (std::size_t i = 0; i + 1 < narrow.size(); ++i) {
    const double step = narrow[i + 1]->mean_weight - narrow[i]->mean_weight;
    const double se = std::hypot(narrow[i]->se_weight, narrow[i + 1]->se_weight);
    if (i < peak && step < -2.0 * se) unimodal = false;
    if (i >= peak && step > 2.0 * se) unimodal = false;
  }
  const bool peak_near_zero = std::fabs(levels[peak]) <= 0.2 + 1e-12;
  bool widening_ok = true;
  std::string curve;
  for (std::size_t i = 0; i < narrow.size(); ++i) {
    const double se = std::hypot(narrow[i]->se_weight, wide[i]->se_weight);
    if (wide[i]->mean_weight < narrow[i]->mean_weight - 2.0 * se) widening_ok = false;
    curve += (i ? " " : "") + fmt("%.3f", narrow[i]->mean_weight) + "/" + fmt("%.3f", wide[i]->mean_weight);
  }
  return {unimodal && peak_near_zero && widening_ok,
          "1-omega_Eq (delta 0.1/0.2) " + curve + "; peak at " + fmt("%+.1f", levels[peak]) + ", unimodal " +
              (unimodal ? "yes" : "no") + ", widening monotone " + (widening_ok ? "yes" : "no") + ", " +
              fmt("%.0f", t.seconds()) + " s"};
}

Outcome ac7_nesting(const Options& o) {
  ScenarioConfig cfg;
  cfg.beta1 = 0.5;
  const int reps = 100;
  AnalysisConfig base = AnalysisConfig::desk();
  AnalysisConfig nested = base;
  nested.strata = 1;
  nested.eqps_unit_equivalence = true;
  nested.eqps_fixed_omega = base.rmap_omega;
  AnalysisConfig nested0 = nested;
  nested0.eqps_fixed_omega = 0.0;
  std::vector<double> d_rmap(reps), d_map(reps), sd_rmap(reps), sd_map(reps);
  Timer t;
  parallel_for(reps, o.threads, [&](std::size_t i) {
    const int r = static_cast<int>(i) + 1;
    const auto data = replicate_dataset(cfg, o.seed, r);
    const auto root = RngStream(o.seed, 2).substream(static_cast<std::uint64_t>(r));
    TrialAnalyzer plain(data, base, root);
    const auto rmap = plain.run(Method::RMap);
    const auto map = plain.run(Method::Map);
    const auto e1 = TrialAnalyzer(data, nested, root).run(Method::Eqps);
    const auto e0 = TrialAnalyzer(data, nested0, root).run(Method::Eqps);
    d_rmap[i] = e1.treatment.posterior.mean() - rmap.treatment.posterior.mean();
    d_map[i] = e0.treatment.posterior.mean() - map.treatment.posterior.mean();
    sd_rmap[i] = rmap.treatment.posterior.sd();
    sd_map[i] = map.treatment.posterior.sd();
  });
  const double m1 = mean_of(d_rmap), s1 = mean_se(d_rmap);
  const double m0 = mean_of(d_map), s0 = mean_se(d_map);
  const bool pass = std::fabs(m1) <= 2.0 * s1 && std::fabs(m0) <= 2.0 * s0;
  return {pass, "treatment posterior mean difference vs rMAP " + fmt("%+.4f", m1) + " (SE " + fmt("%.4f", s1) +
                    "), vs MAP " + fmt("%+.4f", m0) + " (SE " + fmt("%.4f", s0) + "), typical posterior sd " +
                    fmt("%.3f", mean_of(sd_map)) + ", " + std::to_string(reps) + " datasets, " +
                    fmt("%.0f", t.seconds()) + " s"};
}

Outcome ac8_case_study(const Options& o) {
  const auto agg = aggregate_from_json(load_json(std::string(EQPS_SOURCE_DIR) + "/data/case_study.json"));
  const double scalings[] = {1.0, 2.0, 4.0};
  const Method methods[] = {Method::Map, Method::Eqps};
  Timer t;
  const auto res = case_study(agg, scalings, methods, AnalysisConfig::desk(), o.seed);
  const double secs = t.seconds();
  bool stable = true;
  double map4 = 0.0, eq4 = 0.0;
  std::string eq_list, map_list;
  for (const auto& r : res.rows) {
    if (r.method == "eqps") {
      stable = stable && std::fabs(r.rd_mean - 0.25) <= 0.05;
      eq_list += (eq_list.empty() ? "" : "/") + fmt("%.3f", r.rd_mean);
      if (r.scaling == 4.0) eq4 = r.rd_mean;
    } else {
      map_list += (map_list.empty() ? "" : "/") + fmt("%.3f", r.rd_mean);
      if (r.scaling == 4.0) map4 = r.rd_mean;
    }
  }
  const double drift_map = std::fabs(map4 - 0.25), drift_eq = std::fabs(eq4 - 0.25);
  const bool pass = stable && drift_map > drift_eq && secs < 300.0;
  return {pass, "EQPS RD x1/x2/x4 " + eq_list + ", MAP " + map_list + "; |RD - 0.25| at x4 MAP " +
                    fmt("%.3f", drift_map) + " vs EQPS " + fmt("%.3f", drift_eq) + ", runtime " + fmt("%.0f", secs) +
                    " s"};
}

Outcome ac9_numerics(const Options&) {
  double worst_lb = 0.0, worst_cdf = 0.0;
  const double shapes[] = {0.5, 0.9, 1.0, 2.5, 7.0, 13.0, 20.0};
  for (double a : shapes) {
    for (double b : shapes) {
      const double q = oracle::beta_function(a, b);
      worst_lb = std::max(worst_lb, std::fabs(std::exp(log_beta_fn(a, b)) - q) / q);
      for (double x : {0.01, 0.2, 0.5, 0.77, 0.99}) {
        worst_cdf = std::max(worst_cdf, std::fabs(beta_cdf(x, a, b) - oracle::beta_cdf(x, a, b)));
      }
    }
  }
  RngStream rng(3, 0);
  std::vector<double> s(10000);
  for (double& v : s) v = rng.beta(3, 7);
  const auto fit = fit_beta_mixture(s);
  bool monotone = true;
  for (const auto& c : fit.candidates) {
    for (std::size_t i = 1; i < c.trace.size(); ++i) {
      if (c.trace[i] < c.trace[i - 1] - 1e-9 * std::fabs(c.trace[i - 1])) monotone = false;
    }
  }
  double mean = 0.0;
  for (const auto& c : fit.components) mean += c.weight * c.mean();
  const bool pass = worst_lb <= 1e-8 && worst_cdf <= 1e-10 && monotone && std::fabs(mean - 0.3) <= 0.02;
  return {pass, "log_beta rel err " + fmt("%.1e", worst_lb) + ", beta_cdf abs err " + fmt("%.1e", worst_cdf) +
                    ", EM monotone " + (monotone ? "yes" : "no") + ", Beta(3,7) mean " + fmt("%.4f", mean) + " (K=" +
                    std::to_string(fit.components.size()) + ")"};
}

Outcome ac10_determinism(const Options& o) {
  ScenarioConfig cfg;
  cfg.n_current = cfg.n_external = cfg.n_rwd = 60;
  cfg.beta1 = 0.5;
  cfg.beta3 = 0.3;
  std::vector<AnalysisVariant> v(3);
  v[0].method = Method::Map;
  v[1].method = Method::PsMap;
  v[2].method = Method::Eqps;
  auto run_all = [&](int threads) {
    auto opt = sim_options(o, 6);
    opt.threads = threads;
    std::ostringstream out;
    const auto recs = run_replicates(cfg, v, opt);
    write_records_csv(out, recs, false);
    const auto truth = true_risk_difference(cfg);
    std::vector<ScenarioSummary> sums;
    for (std::size_t k = 0; k < v.size(); ++k) {
      sums.push_back(summarize_records(std::span<const ResultRecord>(recs).subspan(k * 6, 6), truth));
    }
    write_summary_csv(out, sums);
    const auto agg = aggregate_from_json(load_json(std::string(EQPS_SOURCE_DIR) + "/data/case_study.json"));
    const double scalings[] = {1.0};
    const Method methods[] = {Method::Eqps};
    write_case_study_csv(out, case_study(agg, scalings, methods, AnalysisConfig::desk(), o.seed).rows);
    return out.str();
  };
  const auto a = run_all(1);
  const auto b = run_all(1);
  const auto c = run_all(std::max(2, o.threads));
  return {a == b && a == c, "rerun identical " + std::string(a == b ? "yes" : "no") + ", thread count invariant " +
                                (a == c ? "yes" : "no") + " (" + std::to_string(a.size()) + " bytes)"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EQPS acceptance suite"};
  Options opt;
  std::string only;
  app.add_option("--threads", opt.threads, "worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
  app.add_option("--seed", opt.seed, "master seed");
  app.add_option("--only", only, "comma-separated criterion numbers to run");
  CLI11_PARSE(app, argc, argv);
  if (opt.threads == 0) opt.threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));

  const std::vector<std::pair<std::string, std::function<Outcome(const Options&)>>> criteria{
      {"AC1", ac1_conjugacy},     {"AC2", ac2_weight_update},   {"AC3", ac3_equivalence},
      {"AC4", ac4_null_calibration}, {"AC5", ac5_conflict},      {"AC6", ac6_weight_curve},
      {"AC7", ac7_nesting},       {"AC8", ac8_case_study},      {"AC9", ac9_numerics},
      {"AC10", ac10_determinism}};
  std::set<std::string> selected;
  if (!only.empty()) {
    std::stringstream ss(only);
    for (std::string tok; std::getline(ss, tok, ',');) selected.insert("AC" + tok);
  }
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    if (!selected.empty() && !selected.contains(name)) continue;
    Outcome r;
    try {
      r = fn(opt);
    } catch (const std::exception& e) {
      r = {false, std::string("error: ") + e.what()};
    }
    failures += r.pass ? 0 : 1;
    std::cout << name << (name.size() == 3 ? "  " : " ") << (r.pass ? "PASS" : "FAIL") << "  " << r.detail
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
