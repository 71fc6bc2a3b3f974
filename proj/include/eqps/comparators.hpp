#pragma once

// Trial-level analysis for every borrowing method. All methods produce a
// RobustBetaMixture posterior per arm so the decision rule applies uniformly.

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "eqps/data.hpp"
#include "eqps/eqps.hpp"
#include "eqps/errors.hpp"
#include "eqps/hierarchy.hpp"
#include "eqps/mixture.hpp"
#include "eqps/numerics.hpp"
#include "eqps/propensity.hpp"

namespace eqps {

enum class Method { NoBorrow, Map, RMap, EbRMap, PsMap, Eqps };

inline constexpr std::array<Method, 6> kAllMethods = {Method::NoBorrow, Method::Map,
                                                      Method::RMap,     Method::EbRMap,
                                                      Method::PsMap,    Method::Eqps};

inline std::string to_string(Method m) {
  switch (m) {
    case Method::NoBorrow: return "noborrow";
    case Method::Map: return "map";
    case Method::RMap: return "rmap";
    case Method::EbRMap: return "ebrmap";
    case Method::PsMap: return "psmap";
    case Method::Eqps: return "eqps";
  }
  return "?";
}

inline std::optional<Method> parse_method(std::string_view token) {
  const auto t = detail::lower(detail::trim(token));
  for (Method m : kAllMethods) {
    if (to_string(m) == t) return m;
  }
  return std::nullopt;
}

/// Comma-separated method list; throws ConfigError on unknown or duplicate names.
inline std::vector<Method> parse_method_list(std::string_view list) {
  std::vector<Method> out;
  for (auto tok : detail::split_csv_line(list)) {
    auto m = parse_method(tok);
    if (!m) throw ConfigError("unknown method '" + std::string(tok) + "'");
    if (std::find(out.begin(), out.end(), *m) != out.end()) {
      throw ConfigError("method '" + std::string(tok) + "' listed twice");
    }
    out.push_back(*m);
  }
  if (out.empty()) throw ConfigError("method list is empty");
  return out;
}

/// Step function from the prior-predictive p-value to the vague weight:
/// p < thresholds[0] gives weights[0], ..., p >= thresholds.back() gives weights.back().
struct EbStepFunction {
  std::vector<double> thresholds{0.01, 0.05, 0.2};
  std::vector<double> weights{1.0, 0.8, 0.5, 0.1};

  void validate() const {
    if (weights.size() != thresholds.size() + 1) {
      throw ConfigError("step function needs one more weight than thresholds");
    }
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
      if (!(thresholds[i] > 0.0 && thresholds[i] < 1.0)) {
        throw ConfigError("step thresholds must lie in (0, 1)");
      }
      if (i > 0 && !(thresholds[i] > thresholds[i - 1])) {
        throw ConfigError("step thresholds must be ascending");
      }
    }
    for (double w : weights) {
      if (!(w >= 0.0 && w <= 1.0)) throw ConfigError("step weights must lie in [0, 1]");
    }
  }

  double weight_for(double p) const {
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
      if (p < thresholds[i]) return weights[i];
    }
    return weights.back();
  }
};

struct AnalysisConfig {
  McmcConfig mcmc;
  EqpsConfig eqps;
  int strata = 5;
  double map_tau_scale = 1.0;
  double mu_prior_sd = 10.0;
  double rmap_omega = 0.2;
  EbStepFunction eb;
  std::size_t decision_draws = 20000;
  double decision_threshold = 0.95;
  double rhat_threshold = 1.05;
  // Reductions of the stratified method, used to check that it nests the
  // unstratified comparators.
  bool eqps_unit_equivalence = false;
  std::optional<double> eqps_fixed_omega;

  void validate() const {
    mcmc.validate();
    eqps.validate();
    eb.validate();
    if (strata < 1) throw ConfigError("stratum count must be at least 1");
    if (!(map_tau_scale > 0.0)) throw ConfigError("MAP tau scale must be positive");
    if (!(mu_prior_sd > 0.0)) throw ConfigError("mu prior sd must be positive");
    if (!(rmap_omega >= 0.0 && rmap_omega <= 1.0)) throw ConfigError("rMAP weight must lie in [0, 1]");
    if (eqps_fixed_omega && !(*eqps_fixed_omega >= 0.0 && *eqps_fixed_omega <= 1.0)) {
      throw ConfigError("fixed EQPS weight must lie in [0, 1]");
    }
    if (decision_draws == 0) throw ConfigError("decision draws must be positive");
    if (!(decision_threshold > 0.0 && decision_threshold < 1.0)) {
      throw ConfigError("decision threshold must lie in (0, 1)");
    }
  }

  static AnalysisConfig desk() {
    AnalysisConfig c;
    c.eqps.mc_draws = 20000;
    return c;
  }
  static AnalysisConfig full() {
    AnalysisConfig c;
    c.mcmc = McmcConfig::full();
    return c;
  }
};

// ---------------------------------------------------------------------------
// Beta-binomial prior predictive

/// log Pr(Y = y) for Y ~ BetaBinomial(n, a, b).
inline double beta_binomial_log_pmf(int y, int n, double a, double b) {
  if (y < 0 || y > n) return -kInf;
  const double log_choose = std::lgamma(n + 1.0) - std::lgamma(y + 1.0) - std::lgamma(n - y + 1.0);
  return log_choose + log_beta_fn(a + y, b + n - y) - log_beta_fn(a, b);
}

/// Prior-predictive pmf of the responder count in n subjects.
inline std::vector<double> prior_predictive_pmf(const RobustBetaMixture& prior, int n) {
  std::vector<double> pmf(static_cast<std::size_t>(n) + 1, 0.0);
  for (const auto& c : prior.flattened()) {
    if (c.weight <= 0.0) continue;
    for (int y = 0; y <= n; ++y) {
      pmf[static_cast<std::size_t>(y)] += c.weight * std::exp(beta_binomial_log_pmf(y, n, c.a, c.b));
    }
  }
  return pmf;
}

/// Box's p-value: predictive mass of counts no more probable than the observed one.
inline double box_p_value(const RobustBetaMixture& prior, const BinomialSummary& observed) {
  const auto pmf = prior_predictive_pmf(prior, observed.n);
  const double at = pmf[static_cast<std::size_t>(observed.y)];
  double p = 0.0;
  for (double v : pmf) {
    if (v <= at * (1.0 + 1e-12)) p += v;
  }
  return std::min(1.0, p);
}

// ---------------------------------------------------------------------------
// Results

struct ArmPosterior {
  Arm arm = Arm::Treatment;
  BinomialSummary current;
  RobustBetaMixture prior;
  RobustBetaMixture posterior;
  double omega = 1.0;  // prior vague weight
  EffectiveSampleSize ess_prior;
  std::optional<double> box_p;
  std::optional<EqpsResult> eqps;
  StratumWeights weights;
  double max_rhat = 1.0;
  bool empty_borrow = false;
  std::vector<std::string> warnings;
};

struct TrialAnalysis {
  Method method = Method::NoBorrow;
  ArmPosterior treatment;
  ArmPosterior control;
  TrialDecision decision;
  double rd_mean = 0.0;  // posterior mean of theta_t - theta_c
  double max_rhat = 1.0;
  bool diagnostic_failure = false;
  std::vector<std::string> warnings;
};

inline ArmPosterior finish_arm(Arm arm, const BinomialSummary& current, RobustBetaMixture prior) {
  ArmPosterior a;
  a.arm = arm;
  a.current = current;
  a.posterior = posterior_update(prior, current);
  a.omega = prior.omega;
  a.ess_prior = prior_effective_sample_size(prior);
  a.prior = std::move(prior);
  return a;
}

// ---------------------------------------------------------------------------
// Analyzer

/// Runs the methods on one dataset. Expensive intermediate results (MAP fit,
/// propensity strata, hierarchical draws, stratified mixture fits) are computed
/// on first use and shared between methods. Every random step draws from a
/// fixed substream of the root stream, so results do not depend on the order
/// in which methods are requested.
class TrialAnalyzer {
 public:
  TrialAnalyzer(const Dataset& data, AnalysisConfig cfg, RngStream root)
      : data_(data), cfg_(std::move(cfg)), root_(std::move(root)) {
    cfg_.validate();
    for (Arm arm : {Arm::Treatment, Arm::Control}) {
      current_[idx(arm)] = summarize(data_.subjects, {Source::Current, arm, {}});
      if (current_[idx(arm)].n == 0) {
        throw ValidationError("current trial has no " + to_string(arm) + " subjects");
      }
    }
  }

  const AnalysisConfig& config() const { return cfg_; }
  const BinomialSummary& current(Arm arm) const { return current_[idx(arm)]; }

  TrialAnalysis run(Method method) { return run(method, cfg_.eqps); }

  /// EQPS with a different lambda / delta; the stratified prior is reused.
  TrialAnalysis run(Method method, const EqpsConfig& eqps) {
    eqps.validate();
    TrialAnalysis out;
    out.method = method;
    out.treatment = arm_posterior(method, Arm::Treatment, eqps);
    out.control = arm_posterior(method, Arm::Control, eqps);
    auto rng = root_.substream(kDecisionStream);
    out.decision = decide_trial(out.treatment.posterior, out.control.posterior, cfg_.decision_draws,
                                rng, cfg_.decision_threshold);
    out.rd_mean = out.treatment.posterior.mean() - out.control.posterior.mean();
    out.max_rhat = std::max(out.treatment.max_rhat, out.control.max_rhat);
    out.diagnostic_failure = out.max_rhat > cfg_.rhat_threshold;
    for (const auto* a : {&out.treatment, &out.control}) {
      for (const auto& w : a->warnings) out.warnings.push_back(to_string(a->arm) + ": " + w);
    }
    return out;
  }

  const PropensityStratification& stratification() {
    if (!strat_) strat_ = propensity_stratify(data_, cfg_.strata);
    return *strat_;
  }

  const PosteriorDraws& hierarchy_draws(Arm arm) {
    auto& d = draws_[idx(arm)];
    if (!d) {
      d = sample_arm_hierarchy(stratification(), arm, cfg_.mcmc, cfg_.mu_prior_sd,
                               root_.substream(kHierarchyStream + idx(arm)));
    }
    return *d;
  }

 private:
  static constexpr std::uint64_t kMapStream = 100;
  static constexpr std::uint64_t kHierarchyStream = 200;
  static constexpr std::uint64_t kSearchStream = 300;
  static constexpr std::uint64_t kDecisionStream = 400;

  static std::size_t idx(Arm a) { return a == Arm::Treatment ? 0 : 1; }

  struct MapFit {
    std::vector<BetaComponent> components;  // empty: no histories
    double max_rhat = 1.0;
    std::vector<std::string> warnings;
  };

  const MapFit& map_fit(Arm arm) {
    auto& m = map_[idx(arm)];
    if (m) return *m;
    MapFit fit;
    std::vector<BinomialSummary> histories;
    for (Source s : {Source::External, Source::RealWorld}) {
      if (s == Source::RealWorld && arm == Arm::Control) continue;
      const auto h = summarize(data_.subjects, {s, arm, {}});
      if (h.n > 0) histories.push_back(h);
    }
    if (histories.empty()) {
      fit.warnings.push_back("no historical data; vague prior only");
    } else {
      const auto draws = sample_unstratified_map(histories, cfg_.map_tau_scale, cfg_.mcmc,
                                                 root_.substream(kMapStream + idx(arm)),
                                                 cfg_.mu_prior_sd);
      fit.max_rhat = draws.model.max_rhat();
      std::vector<double> p(draws.theta_star.size());
      for (std::size_t i = 0; i < p.size(); ++i) p[i] = logistic(draws.theta_star[i]);
      auto mix = fit_beta_mixture(p, cfg_.eqps.mixture);
      fit.components = std::move(mix.components);
      fit.warnings = std::move(mix.warnings);
    }
    m = std::move(fit);
    return *m;
  }

  const StratifiedPrior& stratified_prior(Arm arm, bool unit_equivalence) {
    auto& slot = unit_equivalence ? unit_prior_[idx(arm)] : eps_prior_[idx(arm)];
    if (slot) return *slot;
    StratumWeightOptions wopt;
    wopt.continuity = cfg_.eqps.continuity;
    wopt.unit_equivalence = unit_equivalence;
    auto weights = stratum_weights(stratification().strata, stratification().scales, arm, wopt);
    if (weights.empty_borrow()) {
      slot = combine_stratified_prior({}, std::move(weights), arm, cfg_.eqps.mixture);
    } else {
      slot = combine_stratified_prior(hierarchy_draws(arm), std::move(weights), arm,
                                      cfg_.eqps.mixture);
    }
    return *slot;
  }

  ArmPosterior from_components(Arm arm, const std::vector<BetaComponent>& comps, double omega) {
    if (comps.empty()) omega = 1.0;
    return finish_arm(arm, current_[idx(arm)], robustify(comps, cfg_.eqps.vague, omega));
  }

  ArmPosterior arm_posterior(Method method, Arm arm, const EqpsConfig& eqps) {
    const auto& cur = current_[idx(arm)];
    switch (method) {
      case Method::NoBorrow: {
        auto a = from_components(arm, {}, 1.0);
        a.empty_borrow = true;
        return a;
      }
      case Method::Map:
      case Method::RMap:
      case Method::EbRMap: {
        const auto& fit = map_fit(arm);
        double omega = method == Method::Map ? 0.0 : cfg_.rmap_omega;
        std::optional<double> box;
        if (method == Method::EbRMap && !fit.components.empty()) {
          box = box_p_value(robustify(fit.components, cfg_.eqps.vague, 0.0), cur);
          omega = cfg_.eb.weight_for(*box);
        }
        auto a = from_components(arm, fit.components, omega);
        a.box_p = box;
        a.max_rhat = fit.max_rhat;
        a.empty_borrow = fit.components.empty();
        a.warnings = fit.warnings;
        return a;
      }
      case Method::PsMap:
      case Method::Eqps: {
        const bool unit = method == Method::PsMap || cfg_.eqps_unit_equivalence;
        const auto& sp = stratified_prior(arm, unit);
        ArmPosterior a;
        if (method == Method::PsMap) {
          a = from_components(arm, sp.components, 0.0);
        } else if (cfg_.eqps_fixed_omega) {
          a = from_components(arm, sp.components, *cfg_.eqps_fixed_omega);
        } else {
          auto rng = root_.substream(kSearchStream + idx(arm));
          auto res = find_omega_eq(sp.components, cur, eqps, rng);
          a = finish_arm(arm, cur, res.prior);
          for (const auto& w : res.warnings) a.warnings.push_back(w);
          a.eqps = std::move(res);
        }
        a.weights = sp.weights;
        a.max_rhat = sp.max_rhat;
        a.empty_borrow = sp.components.empty();
        for (const auto& w : sp.warnings) a.warnings.push_back(w);
        return a;
      }
    }
    throw ConfigError("unknown method");
  }

  const Dataset& data_;
  AnalysisConfig cfg_;
  RngStream root_;
  std::array<BinomialSummary, 2> current_{};
  std::array<std::optional<MapFit>, 2> map_;
  std::optional<PropensityStratification> strat_;
  std::array<std::optional<PosteriorDraws>, 2> draws_;
  std::array<std::optional<StratifiedPrior>, 2> eps_prior_;
  std::array<std::optional<StratifiedPrior>, 2> unit_prior_;
};

/// One-shot analysis of a dataset with a single method.
inline TrialAnalysis analyze(const Dataset& data, Method method, const AnalysisConfig& cfg,
                             const RngStream& rng) {
  TrialAnalyzer a(data, cfg, rng);
  return a.run(method);
}

}  // namespace eqps
