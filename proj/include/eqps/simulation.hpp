#pragma once

// Monte Carlo operating characteristics: scenario data generation, the
// scenario grid, weight-versus-heterogeneity curves, required sample sizes and
// the aggregate-data case study.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "eqps/comparators.hpp"
#include "eqps/data.hpp"
#include "eqps/errors.hpp"
#include "eqps/numerics.hpp"

namespace eqps {

// ---------------------------------------------------------------------------
// Work queue

/// Calls fn(i) for i in [0, n) on up to `threads` workers. Results must be
/// written to per-index slots by fn; the first exception is rethrown.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < std::min(workers, n); ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
          }
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// Scenario data generation

struct CovariateSpec {
  std::string name;
  CovariateKind kind = CovariateKind::Continuous;
  double mean = 0.0;  // success probability for binary covariates
  double sd = 1.0;
};

struct ScenarioConfig {
  std::string id = "scenario";
  int n_current = 100;   // per arm
  int n_external = 100;  // per arm
  int n_rwd = 100;       // treatment only
  double beta0 = 0.0;
  double beta1 = 0.0;
  std::vector<double> beta2{0.5, 0.5};
  double beta3 = 0.0;  // treatment x real-world interaction
  double beta4 = 0.0;  // treatment x external interaction
  std::vector<double> beta_rwd{0.0, 0.0};  // selection slopes, real-world vs current
  std::vector<double> beta_ext{0.0, 0.0};  // selection slopes, external vs current
  std::vector<CovariateSpec> covariates{{"x1", CovariateKind::Binary, 0.5, 0.0},
                                        {"x2", CovariateKind::Continuous, 0.0, 1.0}};

  void validate() const {
    if (n_current <= 0 || n_external < 0 || n_rwd < 0) {
      throw ConfigError("scenario sample sizes must be positive");
    }
    const auto k = covariates.size();
    if (beta2.size() != k || beta_rwd.size() != k || beta_ext.size() != k) {
      throw ConfigError("coefficient vectors must match the covariate count");
    }
    for (const auto& c : covariates) {
      if (c.kind == CovariateKind::Binary && !(c.mean > 0.0 && c.mean < 1.0)) {
        throw ConfigError("binary covariate '" + c.name + "' needs a probability in (0, 1)");
      }
      if (c.kind == CovariateKind::Continuous && !(c.sd > 0.0)) {
        throw ConfigError("continuous covariate '" + c.name + "' needs sd > 0");
      }
    }
  }

  /// Same selection slope on every covariate for both comparison sources.
  void set_baseline_shift(double shift) {
    std::fill(beta_rwd.begin(), beta_rwd.end(), shift);
    std::fill(beta_ext.begin(), beta_ext.end(), shift);
  }

  static ScenarioConfig desk() { return {}; }
  static ScenarioConfig full() {
    ScenarioConfig c;
    c.n_current = c.n_external = c.n_rwd = 500;
    return c;
  }
};

namespace detail {
inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline void draw_covariates(const ScenarioConfig& cfg, RngStream& rng, std::vector<double>& x) {
  x.resize(cfg.covariates.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    const auto& c = cfg.covariates[j];
    x[j] = c.kind == CovariateKind::Binary ? (rng.uniform() < c.mean ? 1.0 : 0.0)
                                            : c.mean + c.sd * rng.normal();
  }
}

/// Membership probabilities (current, real-world, external) under the selection model.
inline std::array<double, 3> membership(const ScenarioConfig& cfg, std::span<const double> x) {
  const double er = std::exp(dot(cfg.beta_rwd, x));
  const double ee = std::exp(dot(cfg.beta_ext, x));
  const double z = 1.0 + er + ee;
  return {1.0 / z, er / z, ee / z};
}

inline double outcome_logit(const ScenarioConfig& cfg, std::span<const double> x, Source s, Arm arm) {
  const double t = arm == Arm::Treatment ? 1.0 : 0.0;
  double eta = cfg.beta0 + cfg.beta1 * t + dot(cfg.beta2, x);
  if (s == Source::RealWorld) eta += cfg.beta3 * t;
  if (s == Source::External) eta += cfg.beta4 * t;
  return eta;
}
}  // namespace detail

/// Draws covariates from their population law, assigns each draw a source from
/// the selection probabilities and keeps it while that source's quota is open.
/// Trial sources are randomised exactly 1:1; the real-world cohort is all treated.
inline Dataset generate_dataset(const ScenarioConfig& cfg, RngStream& rng) {
  cfg.validate();
  const std::array<int, 3> quota = {2 * cfg.n_current, cfg.n_rwd, 2 * cfg.n_external};
  const std::array<Source, 3> sources = {Source::Current, Source::RealWorld, Source::External};
  std::array<std::vector<std::vector<double>>, 3> pools;
  const long total = static_cast<long>(quota[0]) + quota[1] + quota[2];
  const long max_attempts = 10000L * total + 100000L;
  std::vector<double> x;
  long attempts = 0;
  auto open = [&] {
    for (std::size_t c = 0; c < 3; ++c) {
      if (static_cast<int>(pools[c].size()) < quota[c]) return true;
    }
    return false;
  };
  while (open()) {
    if (++attempts > max_attempts) {
      throw ConfigError("selection model makes a source too rare to fill its quota");
    }
    detail::draw_covariates(cfg, rng, x);
    const auto pr = detail::membership(cfg, x);
    const double u = rng.uniform();
    const std::size_t c = u < pr[0] ? 0 : (u < pr[0] + pr[1] ? 1 : 2);
    if (static_cast<int>(pools[c].size()) < quota[c]) pools[c].push_back(x);
  }

  Dataset ds;
  for (const auto& c : cfg.covariates) ds.covariate_names.push_back(c.name);
  for (std::size_t c = 0; c < 3; ++c) {
    const Source src = sources[c];
    std::vector<Arm> arms(pools[c].size(), Arm::Treatment);
    if (src != Source::RealWorld) {
      std::fill(arms.begin() + static_cast<long>(arms.size() / 2), arms.end(), Arm::Control);
      shuffle(arms, rng);
    }
    for (std::size_t i = 0; i < pools[c].size(); ++i) {
      Subject s;
      s.source = src;
      s.arm = arms[i];
      s.covariates = std::move(pools[c][i]);
      const double p = logistic(detail::outcome_logit(cfg, s.covariates, src, s.arm));
      s.outcome = rng.uniform() < p ? 1 : 0;
      ds.subjects.push_back(std::move(s));
    }
  }
  return ds;
}

/// Current-trial risk difference averaged over the covariate law of the
/// current population, by importance weighting population draws with the
/// current-membership probability.
inline double true_risk_difference(const ScenarioConfig& cfg, std::size_t draws = 1000000,
                                   std::uint64_t seed = 0x7e57) {
  cfg.validate();
  RngStream rng(seed, 0);
  std::vector<double> x;
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < draws; ++i) {
    detail::draw_covariates(cfg, rng, x);
    const double w = detail::membership(cfg, x)[0];
    const double pt = logistic(detail::outcome_logit(cfg, x, Source::Current, Arm::Treatment));
    const double pc = logistic(detail::outcome_logit(cfg, x, Source::Current, Arm::Control));
    num += w * (pt - pc);
    den += w;
  }
  return num / den;
}

// ---------------------------------------------------------------------------
// Replicated analysis

/// A method together with the EQPS tuning it runs under.
struct AnalysisVariant {
  std::string scenario;
  Method method = Method::Eqps;
  EqpsConfig eqps;
};

struct ResultRecord {
  std::string scenario;
  std::string method;
  int replicate = 0;
  double rd_estimate = std::numeric_limits<double>::quiet_NaN();
  double prob_superior = std::numeric_limits<double>::quiet_NaN();
  bool success = false;
  double omega = std::numeric_limits<double>::quiet_NaN();  // treatment-arm prior vague weight
  double ess = std::numeric_limits<double>::quiet_NaN();    // treatment-arm prior ESS
  double max_rhat = std::numeric_limits<double>::quiet_NaN();
  bool failed = false;
  bool diagnostic_failure = false;
  std::string error;
  double runtime_ms = 0.0;
};

struct SimulationOptions {
  int replicates = 500;
  std::uint64_t seed = 20240521;
  int threads = 1;
  AnalysisConfig analysis = AnalysisConfig::desk();
};

/// Dataset for replicate r. The stream depends only on the seed and r, so every
/// scenario sees the same underlying uniforms.
inline Dataset replicate_dataset(const ScenarioConfig& cfg, std::uint64_t seed, int r) {
  auto rng = RngStream(seed, 1).substream(static_cast<std::uint64_t>(r));
  return generate_dataset(cfg, rng);
}

inline RngStream replicate_analysis_stream(std::uint64_t seed, int r) {
  return RngStream(seed, 2).substream(static_cast<std::uint64_t>(r));
}

/// Runs every variant on each replicate of one data scenario. Records are
/// ordered by variant, then replicate.
inline std::vector<ResultRecord> run_replicates(const ScenarioConfig& data,
                                                const std::vector<AnalysisVariant>& variants,
                                                const SimulationOptions& opt) {
  if (opt.replicates < 1) throw ConfigError("replicate count must be at least 1");
  if (variants.empty()) throw ConfigError("no methods to run");
  data.validate();
  opt.analysis.validate();
  const auto reps = static_cast<std::size_t>(opt.replicates);
  std::vector<ResultRecord> out(variants.size() * reps);
  parallel_for(reps, opt.threads, [&](std::size_t r) {
    const int rep = static_cast<int>(r);
    std::optional<Dataset> ds;
    std::string data_error;
    try {
      ds = replicate_dataset(data, opt.seed, rep);
    } catch (const std::exception& e) {
      data_error = e.what();
    }
    std::optional<TrialAnalyzer> analyzer;
    if (ds) {
      try {
        analyzer.emplace(*ds, opt.analysis, replicate_analysis_stream(opt.seed, rep));
      } catch (const std::exception& e) {
        data_error = e.what();
      }
    }
    for (std::size_t v = 0; v < variants.size(); ++v) {
      auto& rec = out[v * reps + r];
      rec.scenario = variants[v].scenario;
      rec.method = to_string(variants[v].method);
      rec.replicate = rep + 1;
      if (!analyzer) {
        rec.failed = true;
        rec.error = data_error;
        continue;
      }
      const auto t0 = std::chrono::steady_clock::now();
      try {
        const auto res = analyzer->run(variants[v].method, variants[v].eqps);
        rec.rd_estimate = res.rd_mean;
        rec.prob_superior = res.decision.prob_superior;
        rec.success = res.decision.success;
        rec.omega = res.treatment.omega;
        rec.ess = res.treatment.ess_prior.value;
        rec.max_rhat = res.max_rhat;
        rec.diagnostic_failure = res.diagnostic_failure;
      } catch (const std::exception& e) {
        rec.failed = true;
        rec.error = e.what();
      }
      rec.runtime_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    }
  });
  return out;
}

struct ScenarioSummary {
  std::string scenario;
  std::string method;
  double true_rd = 0.0;
  int n = 0;  // successful replicates
  int n_fail = 0;
  double bias = 0.0;
  double bias_se = 0.0;
  double mse = 0.0;
  double rejection_rate = 0.0;
  double rejection_se = 0.0;
  double mean_omega = 0.0;
  double omega_se = 0.0;
  double mean_ess = 0.0;
};

/// Summaries over the records of one (scenario, method) pair, in record order.
inline ScenarioSummary summarize_records(std::span<const ResultRecord> recs, double true_rd) {
  ScenarioSummary s;
  s.true_rd = true_rd;
  if (!recs.empty()) {
    s.scenario = recs.front().scenario;
    s.method = recs.front().method;
  }
  std::vector<double> err;
  std::vector<double> omega;
  double rej = 0.0;
  double ess = 0.0;
  for (const auto& r : recs) {
    if (r.failed) {
      ++s.n_fail;
      continue;
    }
    err.push_back(r.rd_estimate - true_rd);
    omega.push_back(r.omega);
    rej += r.success ? 1.0 : 0.0;
    ess += r.ess;
  }
  s.n = static_cast<int>(err.size());
  if (s.n == 0) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    s.bias = s.bias_se = s.mse = s.rejection_rate = s.rejection_se = s.mean_omega = s.omega_se =
        s.mean_ess = nan;
    return s;
  }
  const double n = s.n;
  s.bias = mean_of(err);
  double sq = 0.0;
  for (double e : err) sq += e * e;
  s.mse = sq / n;
  s.bias_se = s.n > 1 ? std::sqrt(variance_of(err) / n) : 0.0;
  s.rejection_rate = rej / n;
  s.rejection_se = std::sqrt(s.rejection_rate * (1.0 - s.rejection_rate) / n);
  s.mean_omega = mean_of(omega);
  s.omega_se = s.n > 1 ? std::sqrt(variance_of(omega) / n) : 0.0;
  s.mean_ess = ess / n;
  return s;
}

// ---------------------------------------------------------------------------
// Scenario grid

struct GridConfig {
  ScenarioConfig base;
  std::vector<double> shift_levels{0.0, 0.5};
  std::vector<double> heterogeneity{0.0, 0.2, 0.4};  // beta3 = beta4
  std::vector<double> lambdas{0.7, 0.8, 0.9};
  std::vector<double> deltas{0.1, 0.15, 0.2};
  std::vector<Method> methods{Method::Eqps};

  void validate() const {
    base.validate();
    if (shift_levels.empty() || heterogeneity.empty() || lambdas.empty() || deltas.empty() ||
        methods.empty()) {
      throw ConfigError("every grid dimension needs at least one level");
    }
  }
};

struct GridResult {
  std::vector<ScenarioSummary> summaries;
  std::vector<ResultRecord> records;
};

inline std::string scenario_label(double shift, double het, double lambda, double delta) {
  using detail::format_double;
  return "shift=" + format_double(shift) + ";het=" + format_double(het) +
         ";lambda=" + format_double(lambda) + ";delta=" + format_double(delta);
}

/// Every (shift, heterogeneity) data scenario is simulated once; all methods
/// and (lambda, delta) settings are analysed on the same replicates.
inline GridResult run_grid(const GridConfig& grid, const SimulationOptions& opt,
                           const std::function<void(const std::string&)>& progress = {}) {
  grid.validate();
  GridResult out;
  for (double shift : grid.shift_levels) {
    for (double het : grid.heterogeneity) {
      ScenarioConfig sc = grid.base;
      sc.set_baseline_shift(shift);
      sc.beta3 = sc.beta4 = het;
      std::vector<AnalysisVariant> variants;
      for (double lambda : grid.lambdas) {
        for (double delta : grid.deltas) {
          for (Method m : grid.methods) {
            AnalysisVariant v;
            v.scenario = scenario_label(shift, het, lambda, delta);
            v.method = m;
            v.eqps = opt.analysis.eqps;
            v.eqps.lambda = lambda;
            v.eqps.delta = delta;
            variants.push_back(std::move(v));
          }
        }
      }
      if (progress) progress("shift=" + detail::format_double(shift) + " het=" + detail::format_double(het));
      const double truth = true_risk_difference(sc);
      auto recs = run_replicates(sc, variants, opt);
      const auto reps = static_cast<std::size_t>(opt.replicates);
      for (std::size_t v = 0; v < variants.size(); ++v) {
        out.summaries.push_back(summarize_records(
            std::span<const ResultRecord>(recs).subspan(v * reps, reps), truth));
      }
      out.records.insert(out.records.end(), std::make_move_iterator(recs.begin()),
                         std::make_move_iterator(recs.end()));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Weight curves

struct CurvePoint {
  double beta3 = 0.0;
  double beta4 = 0.0;
};

struct CurveConfig {
  ScenarioConfig base;
  std::vector<CurvePoint> points;
  std::vector<double> lambdas{0.8};
  std::vector<double> deltas{0.1};

  /// beta3 = beta4 = h for each h in levels.
  static std::vector<CurvePoint> diagonal(std::span<const double> levels) {
    std::vector<CurvePoint> p;
    for (double h : levels) p.push_back({h, h});
    return p;
  }
};

struct CurveRow {
  double beta3 = 0.0;
  double beta4 = 0.0;
  double lambda = 0.0;
  double delta = 0.0;
  double mean_weight = 0.0;  // mean of 1 - omega_Eq
  double se_weight = 0.0;
  int n = 0;
  int n_fail = 0;
};

/// Mean borrowing weight 1 - omega_Eq per (point, lambda, delta). Every point
/// uses the same replicate seeds.
inline std::vector<CurveRow> weight_curve(const CurveConfig& cfg, const SimulationOptions& opt,
                                          const std::function<void(const std::string&)>& progress = {}) {
  if (cfg.points.empty() || cfg.lambdas.empty() || cfg.deltas.empty()) {
    throw ConfigError("weight curve grids must be non-empty");
  }
  std::vector<CurveRow> out;
  for (const auto& pt : cfg.points) {
    ScenarioConfig sc = cfg.base;
    sc.beta3 = pt.beta3;
    sc.beta4 = pt.beta4;
    std::vector<AnalysisVariant> variants;
    for (double lambda : cfg.lambdas) {
      for (double delta : cfg.deltas) {
        AnalysisVariant v;
        v.method = Method::Eqps;
        v.eqps = opt.analysis.eqps;
        v.eqps.lambda = lambda;
        v.eqps.delta = delta;
        v.scenario = "beta3=" + detail::format_double(pt.beta3) + ";beta4=" + detail::format_double(pt.beta4);
        variants.push_back(std::move(v));
      }
    }
    if (progress) progress(variants.front().scenario);
    const auto recs = run_replicates(sc, variants, opt);
    const auto reps = static_cast<std::size_t>(opt.replicates);
    for (std::size_t v = 0; v < variants.size(); ++v) {
      CurveRow row;
      row.beta3 = pt.beta3;
      row.beta4 = pt.beta4;
      row.lambda = variants[v].eqps.lambda;
      row.delta = variants[v].eqps.delta;
      std::vector<double> w;
      for (std::size_t r = 0; r < reps; ++r) {
        const auto& rec = recs[v * reps + r];
        if (rec.failed) {
          ++row.n_fail;
        } else {
          w.push_back(1.0 - rec.omega);
        }
      }
      row.n = static_cast<int>(w.size());
      row.mean_weight = w.empty() ? std::numeric_limits<double>::quiet_NaN() : mean_of(w);
      row.se_weight = w.size() > 1 ? std::sqrt(variance_of(w) / static_cast<double>(w.size())) : 0.0;
      out.push_back(row);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Required sample size

struct SampleSizeSearch {
  double target_power = 0.8;
  int n_min = 20;
  int n_max = 400;
  int linear_step = 10;
  int replicates = 200;

  void validate() const {
    if (!(target_power > 0.0 && target_power < 1.0)) throw ConfigError("target power must lie in (0, 1)");
    if (n_min < 2 || n_max < n_min) throw ConfigError("sample-size range must satisfy 2 <= min <= max");
    if (linear_step < 1) throw ConfigError("linear step must be at least 1");
    if (replicates < 1) throw ConfigError("replicates per evaluation must be at least 1");
  }
};

struct SampleSizeResult {
  std::string scenario;
  std::string method;
  int n_star = 0;
  double power = 0.0;
  bool exhausted = false;
  std::vector<std::pair<int, double>> evaluations;
};

/// Smallest current per-arm size reaching the target power: doubling from
/// n_min until the target is met, then a linear scan upward from the last
/// failing size.
inline SampleSizeResult required_sample_size(const ScenarioConfig& base, const AnalysisVariant& variant,
                                             const SampleSizeSearch& search,
                                             const SimulationOptions& opt) {
  search.validate();
  SampleSizeResult out;
  out.scenario = variant.scenario;
  out.method = to_string(variant.method);
  SimulationOptions o = opt;
  o.replicates = search.replicates;
  std::map<int, double> cache;
  auto power_at = [&](int n) {
    if (auto it = cache.find(n); it != cache.end()) return it->second;
    ScenarioConfig sc = base;
    sc.n_current = n;
    const auto recs = run_replicates(sc, {variant}, o);
    int ok = 0;
    int hits = 0;
    for (const auto& r : recs) {
      if (r.failed) continue;
      ++ok;
      hits += r.success ? 1 : 0;
    }
    const double p = ok > 0 ? static_cast<double>(hits) / ok : 0.0;
    cache[n] = p;
    out.evaluations.emplace_back(n, p);
    return p;
  };

  int lo = 0;  // largest size known to fail
  int hi = 0;  // smallest size known to pass
  for (int n = search.n_min;; n = std::min(2 * n, search.n_max)) {
    if (power_at(n) >= search.target_power) {
      hi = n;
      break;
    }
    lo = n;
    if (n == search.n_max) break;
  }
  if (hi == 0) {
    out.exhausted = true;
    out.power = cache[search.n_max];
    return out;
  }
  out.n_star = hi;
  out.power = cache[hi];
  for (int n = (lo == 0 ? hi : lo + search.linear_step); n < hi; n += search.linear_step) {
    if (power_at(n) >= search.target_power) {
      out.n_star = n;
      out.power = cache[n];
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Case study

struct CaseStudyRow {
  double scaling = 1.0;
  std::string method;
  double rd_mean = 0.0;
  double rd_sd = 0.0;
  double prob_superior = 0.0;
  bool success = false;
  double omega_treatment = 0.0;
  double omega_control = 0.0;
  double mean_treatment = 0.0;
  double mean_control = 0.0;
  double ess_treatment = 0.0;
  double ess_control = 0.0;
};

struct CaseStudyResult {
  std::vector<CaseStudyRow> rows;
  std::vector<TrialAnalysis> analyses;  // parallel to rows
  std::vector<std::string> warnings;
};

/// The aggregate table with the real-world cohort's size (and responders, at
/// the same rate) multiplied by `factor`.
inline AggregateSummary scale_rwd(AggregateSummary agg, double factor) {
  if (!(factor > 0.0)) throw ConfigError("real-world scaling must be positive");
  for (auto& src : agg.sources) {
    if (src.source != Source::RealWorld) continue;
    for (auto& arm : src.arms) {
      arm.y = static_cast<int>(std::lround(arm.y * factor));
      arm.n = static_cast<int>(std::lround(arm.n * factor));
    }
  }
  return agg;
}

/// Each source is reconstructed from its own substream so that rescaling one
/// source leaves the other sources' subjects unchanged.
inline Dataset reconstruct_subjects(const AggregateSummary& agg, std::uint64_t seed,
                                    OutcomeDraw mode = OutcomeDraw::ExactCount) {
  validate(agg);
  Dataset ds;
  for (const auto& src : agg.sources) {
    AggregateSummary one;
    one.sources.push_back(src);
    auto rng = RngStream(seed, 3).substream(static_cast<std::uint64_t>(src.source));
    auto part = simulate_from_aggregate(one, rng, mode);
    if (ds.covariate_names.empty()) ds.covariate_names = part.covariate_names;
    for (auto& s : part.subjects) ds.subjects.push_back(std::move(s));
  }
  return ds;
}

inline double posterior_rd_sd(const TrialAnalysis& a) {
  return std::sqrt(a.treatment.posterior.variance() + a.control.posterior.variance());
}

inline CaseStudyResult case_study(const AggregateSummary& agg, std::span<const double> scalings,
                                  std::span<const Method> methods, const AnalysisConfig& cfg,
                                  std::uint64_t seed) {
  if (scalings.empty() || methods.empty()) throw ConfigError("case study needs scalings and methods");
  CaseStudyResult out;
  for (double k : scalings) {
    const auto ds = reconstruct_subjects(scale_rwd(agg, k), seed);
    TrialAnalyzer analyzer(ds, cfg, RngStream(seed, 4));
    for (Method m : methods) {
      auto a = analyzer.run(m);
      CaseStudyRow row;
      row.scaling = k;
      row.method = to_string(m);
      row.rd_mean = a.rd_mean;
      row.rd_sd = posterior_rd_sd(a);
      row.prob_superior = a.decision.prob_superior;
      row.success = a.decision.success;
      row.omega_treatment = a.treatment.omega;
      row.omega_control = a.control.omega;
      row.mean_treatment = a.treatment.posterior.mean();
      row.mean_control = a.control.posterior.mean();
      row.ess_treatment = a.treatment.ess_prior.value;
      row.ess_control = a.control.ess_prior.value;
      for (const auto& w : a.warnings) {
        out.warnings.push_back("x" + detail::format_double(k) + " " + row.method + ": " + w);
      }
      out.rows.push_back(row);
      out.analyses.push_back(std::move(a));
    }
  }
  return out;
}

/// Density of theta_t - theta_c on a grid, by numerical convolution of the two
/// independent arm posteriors.
inline DensityEstimate risk_difference_density(const TrialAnalysis& a, std::size_t grid_size = 401) {
  DensityEstimate out;
  out.grid = uniform_grid(-1.0, 1.0, grid_size);
  const auto c_grid = uniform_grid(0.0, 1.0, 801);
  std::vector<double> fc(c_grid.size());
  for (std::size_t j = 0; j < c_grid.size(); ++j) fc[j] = a.control.posterior.density(c_grid[j]);
  out.density.resize(out.grid.size());
  DensityEstimate integrand;
  integrand.grid = c_grid;
  integrand.density.resize(c_grid.size());
  for (std::size_t i = 0; i < out.grid.size(); ++i) {
    for (std::size_t j = 0; j < c_grid.size(); ++j) {
      const double t = out.grid[i] + c_grid[j];
      integrand.density[j] = t > 0.0 && t < 1.0 ? a.treatment.posterior.density(t) * fc[j] : 0.0;
    }
    out.density[i] = trapezoid_integral(integrand);
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV writers. Numbers use the shortest round-trip representation, so equal
// results give identical bytes.

inline void write_records_csv(std::ostream& out, std::span<const ResultRecord> recs, bool timing) {
  using detail::format_double;
  out << "scenario,method,replicate,rd_estimate,prob_superior,success,omega,ess,max_rhat,failed,"
         "diagnostic_failure,error";
  if (timing) out << ",runtime_ms";
  out << '\n';
  for (const auto& r : recs) {
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    out << '"' << r.scenario << "\"," << r.method << ',' << r.replicate << ','
        << format_double(r.rd_estimate) << ',' << format_double(r.prob_superior) << ','
        << (r.success ? 1 : 0) << ',' << format_double(r.omega) << ',' << format_double(r.ess)
        << ',' << format_double(r.max_rhat) << ',' << (r.failed ? 1 : 0) << ','
        << (r.diagnostic_failure ? 1 : 0) << ',' << err;
    if (timing) out << ',' << format_double(r.runtime_ms);
    out << '\n';
  }
}

inline void write_summary_csv(std::ostream& out, std::span<const ScenarioSummary> rows) {
  using detail::format_double;
  out << "scenario,method,bias,mse,rejection_rate,mean_omega,mean_ess,n_fail,true_rd,n,bias_se,"
         "rejection_se,omega_se\n";
  for (const auto& s : rows) {
    out << '"' << s.scenario << "\"," << s.method << ',' << format_double(s.bias) << ','
        << format_double(s.mse) << ',' << format_double(s.rejection_rate) << ','
        << format_double(s.mean_omega) << ',' << format_double(s.mean_ess) << ',' << s.n_fail
        << ',' << format_double(s.true_rd) << ',' << s.n << ',' << format_double(s.bias_se) << ','
        << format_double(s.rejection_se) << ',' << format_double(s.omega_se) << '\n';
  }
}

inline void write_curve_csv(std::ostream& out, std::span<const CurveRow> rows) {
  using detail::format_double;
  out << "beta3,beta4,lambda,delta,mean_weight,se_weight,n,n_fail\n";
  for (const auto& r : rows) {
    out << format_double(r.beta3) << ',' << format_double(r.beta4) << ',' << format_double(r.lambda)
        << ',' << format_double(r.delta) << ',' << format_double(r.mean_weight) << ','
        << format_double(r.se_weight) << ',' << r.n << ',' << r.n_fail << '\n';
  }
}

struct SampleSizeRow {
  SampleSizeResult method;
  SampleSizeResult reference;  // no borrowing
  double heterogeneity = 0.0;
  double shift = 0.0;
  double lambda = 0.0;
  double delta = 0.0;

  double ratio() const {
    if (method.exhausted || reference.exhausted || reference.n_star == 0) {
      return std::numeric_limits<double>::quiet_NaN();
    }
    return static_cast<double>(method.n_star) / reference.n_star;
  }
};

inline void write_samplesize_csv(std::ostream& out, std::span<const SampleSizeRow> rows) {
  using detail::format_double;
  out << "shift,heterogeneity,lambda,delta,method,n_star,power,exhausted,n_star_noborrow,ratio\n";
  for (const auto& r : rows) {
    out << format_double(r.shift) << ',' << format_double(r.heterogeneity) << ','
        << format_double(r.lambda) << ',' << format_double(r.delta) << ',' << r.method.method << ','
        << r.method.n_star << ',' << format_double(r.method.power) << ','
        << (r.method.exhausted ? 1 : 0) << ',' << r.reference.n_star << ','
        << format_double(r.ratio()) << '\n';
  }
}

inline void write_case_study_csv(std::ostream& out, std::span<const CaseStudyRow> rows) {
  using detail::format_double;
  out << "scaling,method,rd_mean,rd_sd,prob_superior,success,omega_treatment,omega_control,"
         "mean_treatment,mean_control,ess_treatment,ess_control\n";
  for (const auto& r : rows) {
    out << format_double(r.scaling) << ',' << r.method << ',' << format_double(r.rd_mean) << ','
        << format_double(r.rd_sd) << ',' << format_double(r.prob_superior) << ','
        << (r.success ? 1 : 0) << ',' << format_double(r.omega_treatment) << ','
        << format_double(r.omega_control) << ',' << format_double(r.mean_treatment) << ','
        << format_double(r.mean_control) << ',' << format_double(r.ess_treatment) << ','
        << format_double(r.ess_control) << '\n';
  }
}

}  // namespace eqps
