#pragma once

// Equivalence-probability weighting of stratum-specific posteriors, the
// composite prior on the current trial's response rate, the consistency
// search for the vague weight, and the final trial decision.

#include <boost/math/quadrature/tanh_sinh.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eqps/data.hpp"
#include "eqps/errors.hpp"
#include "eqps/hierarchy.hpp"
#include "eqps/mixture.hpp"
#include "eqps/numerics.hpp"
#include "eqps/propensity.hpp"

namespace eqps {

/// Handling of Beta(y, n - y) when y is 0 or n.
enum class ContinuityMode {
  Half,    // add 0.5 to both shapes and record a warning
  Strict,  // throw DomainError
};

/// Which hybrid distribution the consistency metric compares with the current data.
enum class SearchStage {
  Prior,                  // the robust prior itself
  PosteriorFixedWeight,   // conjugate-updated components, vague weight kept at the candidate
  PosteriorUpdatedWeight  // conjugate-updated components with the marginal-likelihood reweighting
};

struct EqpsConfig {
  double lambda = 0.8;
  double delta = 0.1;
  double grid_step = 0.01;
  std::size_t mc_draws = 100000;
  SearchStage stage = SearchStage::PosteriorFixedWeight;
  ContinuityMode continuity = ContinuityMode::Half;
  VagueComponent vague = VagueComponent::uniform();
  MixtureFitOptions mixture;

  int grid_points() const { return static_cast<int>(std::lround(1.0 / grid_step)) + 1; }

  void validate() const {
    if (!(lambda > 0.0 && lambda < 1.0)) throw ConfigError("lambda must lie in (0, 1)");
    if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must lie in (0, 1)");
    if (!(grid_step > 0.0 && grid_step <= 1.0)) throw ConfigError("grid step must lie in (0, 1]");
    const double steps = 1.0 / grid_step;
    if (std::fabs(steps - std::round(steps)) > 1e-9) {
      throw ConfigError("grid step must divide 1");
    }
    if (mc_draws < 1000) throw ConfigError("consistency Monte Carlo needs at least 1000 draws");
    if (!(vague.a > 0.0 && vague.b > 0.0)) throw ConfigError("vague shapes must be positive");
  }
};

/// Beta(y, n - y) shapes for a response rate, with the configured boundary handling.
inline std::pair<double, double> rate_shapes(const BinomialSummary& s, ContinuityMode mode,
                                             std::vector<std::string>* warnings = nullptr) {
  if (s.n <= 0) throw DomainError("response-rate distribution needs n > 0");
  if (s.y > 0 && s.y < s.n) return {static_cast<double>(s.y), static_cast<double>(s.n - s.y)};
  if (mode == ContinuityMode::Strict) {
    throw DomainError("Beta(y, n - y) is improper for y = " + std::to_string(s.y) +
                      ", n = " + std::to_string(s.n));
  }
  if (warnings) {
    warnings->push_back("continuity correction applied to y=" + std::to_string(s.y) +
                        ", n=" + std::to_string(s.n));
  }
  return {s.y + 0.5, s.n - s.y + 0.5};
}

/// Pr(X > Y) for independent X ~ Beta(a1, b1), Y ~ Beta(a2, b2), as
/// the integral of f_X(x) F_Y(x) over the effective support of X.
inline double prob_beta_greater(double a1, double b1, double a2, double b2) {
  const double m = a1 / (a1 + b1);
  const double sd = std::sqrt(a1 * b1 / ((a1 + b1) * (a1 + b1) * (a1 + b1 + 1.0)));
  const double lo = std::max(0.0, m - 15.0 * sd);
  const double hi = std::min(1.0, m + 15.0 * sd);
  boost::math::quadrature::tanh_sinh<double> integrator;
  auto f = [&](double x) {
    if (x <= 0.0 || x >= 1.0) return 0.0;
    return beta_pdf(x, a1, b1) * beta_cdf(x, a2, b2);
  };
  const double v = integrator.integrate(f, lo, hi);
  return std::clamp(v, 0.0, 1.0);
}

/// Equivalence probability 2 min{Pr(p_a > p_b), 1 - Pr(p_a > p_b)}.
inline double equivalence_prob(const BinomialSummary& a, const BinomialSummary& b,
                               ContinuityMode mode = ContinuityMode::Half,
                               std::vector<std::string>* warnings = nullptr) {
  const auto [a1, b1] = rate_shapes(a, mode, warnings);
  const auto [a2, b2] = rate_shapes(b, mode, warnings);
  const double pr = prob_beta_greater(a1, b1, a2, b2);
  return std::clamp(2.0 * std::min(pr, 1.0 - pr), 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Stratum weights

struct StratumWeight {
  int n_current = 0;
  int n_external = 0;
  int n_rwd = 0;
  bool uses_external = false;
  bool uses_rwd = false;
  double eps_external = std::numeric_limits<double>::quiet_NaN();
  double eps_rwd = std::numeric_limits<double>::quiet_NaN();
  double w_external = 0.0;
  double w_rwd = 0.0;
  double current_share = 0.0;    // n_Curr,s / N_Curr
  double effective_share = 0.0;  // share renormalised over borrowing strata
  bool no_borrow = false;
};

struct StratumWeights {
  std::vector<StratumWeight> strata;
  std::vector<std::string> warnings;

  bool empty_borrow() const {
    return std::all_of(strata.begin(), strata.end(),
                       [](const StratumWeight& s) { return s.no_borrow; });
  }
};

struct StratumWeightOptions {
  ContinuityMode continuity = ContinuityMode::Half;
  bool unit_equivalence = false;  // every epsilon fixed to 1 (sample-size-only weights)
};

/// omega_Real,s = n_Real,s eps_Real,s / (n_Ex,s eps_Ex,s + n_Real,s eps_Real,s) and
/// the complement for the external source. A source is used in a stratum when it
/// has subjects in the arm and a finite half-normal scale; real-world data only
/// enter the treatment arm.
inline StratumWeights stratum_weights(const StratifiedData& sd, const OverlapScales& scales,
                                      Arm arm, const StratumWeightOptions& opt = {}) {
  StratumWeights out;
  const int n_current_total = sd.total(Source::Current, arm).n;
  if (n_current_total == 0) throw ValidationError("no current-trial subjects in the arm");
  double borrowing_share = 0.0;
  for (std::size_t s = 0; s < sd.strata.size(); ++s) {
    const auto& st = sd.strata[s];
    StratumWeight w;
    const auto& cur = st.cell(Source::Current, arm);
    const auto& ext = st.cell(Source::External, arm);
    const auto rwd = arm == Arm::Treatment ? st.cell(Source::RealWorld, arm) : BinomialSummary{};
    w.n_current = cur.n;
    w.n_external = ext.n;
    w.n_rwd = rwd.n;
    w.current_share = static_cast<double>(cur.n) / n_current_total;
    w.uses_external = ext.n > 0 && std::isfinite(scales.k_external[s]);
    w.uses_rwd = rwd.n > 0 && std::isfinite(scales.k_rwd[s]);
    if (cur.n == 0) {
      w.uses_external = false;
      w.uses_rwd = false;
    }
    if (w.uses_external) {
      w.eps_external = opt.unit_equivalence
                           ? 1.0
                           : equivalence_prob(ext, cur, opt.continuity, &out.warnings);
    }
    if (w.uses_rwd) {
      w.eps_rwd =
          opt.unit_equivalence ? 1.0 : equivalence_prob(rwd, cur, opt.continuity, &out.warnings);
    }
    const double num_ext = w.uses_external ? w.n_external * w.eps_external : 0.0;
    const double num_rwd = w.uses_rwd ? w.n_rwd * w.eps_rwd : 0.0;
    const double denom = num_ext + num_rwd;
    if (!(denom > 0.0)) {
      w.no_borrow = true;
      if (w.uses_external || w.uses_rwd) {
        out.warnings.push_back("stratum " + std::to_string(s + 1) +
                               ": equivalence probabilities are all zero; no borrowing");
      }
    } else {
      w.w_rwd = num_rwd / denom;
      w.w_external = w.uses_external ? 1.0 - w.w_rwd : 0.0;
      borrowing_share += w.current_share;
    }
    out.strata.push_back(w);
  }
  for (auto& w : out.strata) {
    w.effective_share = w.no_borrow || borrowing_share <= 0.0 ? 0.0 : w.current_share / borrowing_share;
  }
  return out;
}

/// Hierarchical-model inputs for one arm: the same sources stratum_weights uses.
inline HierarchicalSpec hierarchical_spec(const StratifiedData& sd, const OverlapScales& scales,
                                          Arm arm, double mu_prior_sd = 10.0) {
  HierarchicalSpec spec;
  spec.mu_prior_sd = mu_prior_sd;
  for (std::size_t s = 0; s < sd.strata.size(); ++s) {
    const auto& st = sd.strata[s];
    StratumSpec ss;
    ss.external = st.cell(Source::External, arm);
    ss.k_external = scales.k_external[s];
    if (arm == Arm::Treatment) {
      ss.rwd = st.cell(Source::RealWorld, arm);
      ss.k_rwd = scales.k_rwd[s];
    }
    if (st.cell(Source::Current, arm).n == 0) {
      ss.external = {};
      ss.rwd = {};
    }
    spec.strata.push_back(ss);
  }
  return spec;
}

/// Draws of the current-trial response rate implied by
/// theta_curr = sum_s share_s (w_Real,s theta_Real,s + w_Ex,s theta_Ex,s).
/// Empty when no stratum can borrow.
inline std::vector<double> composite_prior_samples(const PosteriorDraws& draws,
                                                   const StratumWeights& w,
                                                   std::vector<double>* theta_out = nullptr) {
  if (draws.strata.size() != w.strata.size()) {
    throw ValidationError("composite prior: draws and weights cover different strata");
  }
  if (w.empty_borrow()) return {};
  const std::size_t n = draws.size();
  std::vector<double> theta(n, 0.0);
  for (std::size_t s = 0; s < w.strata.size(); ++s) {
    const auto& ws = w.strata[s];
    if (ws.no_borrow || ws.effective_share <= 0.0) continue;
    const auto& ds = draws.strata[s];
    if (ws.w_external > 0.0 && !ds.has_external) {
      throw ValidationError("composite prior: external draws missing for stratum " + std::to_string(s + 1));
    }
    if (ws.w_rwd > 0.0 && !ds.has_rwd) {
      throw ValidationError("composite prior: real-world draws missing for stratum " + std::to_string(s + 1));
    }
    for (std::size_t i = 0; i < n; ++i) {
      double ts = 0.0;
      if (ws.w_external > 0.0) ts += ws.w_external * ds.theta_external[i];
      if (ws.w_rwd > 0.0) ts += ws.w_rwd * ds.theta_rwd[i];
      theta[i] += ws.effective_share * ts;
    }
  }
  std::vector<double> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = logistic(theta[i]);
  if (theta_out) *theta_out = std::move(theta);
  return p;
}

// ---------------------------------------------------------------------------
// Consistency metric and the vague-weight search

struct MonteCarloEstimate {
  double value = 0.0;
  double se = 0.0;
};

/// Pr(p_Hyb - delta < p_Curr < p_Hyb + delta) from M paired independent draws.
inline MonteCarloEstimate consistency_p(const RobustBetaMixture& hybrid,
                                        const BinomialSummary& current, double delta,
                                        std::size_t draws, RngStream& rng,
                                        ContinuityMode mode = ContinuityMode::Half) {
  if (draws < 1000) throw ConfigError("consistency Monte Carlo needs at least 1000 draws");
  if (delta >= 1.0) return {1.0, 0.0};
  const auto [a, b] = rate_shapes(current, mode);
  std::size_t hits = 0;
  for (std::size_t j = 0; j < draws; ++j) {
    const double h = hybrid.sample(rng);
    const double c = rng.beta(a, b);
    if (c > h - delta && c < h + delta) ++hits;
  }
  const double p = static_cast<double>(hits) / static_cast<double>(draws);
  return {p, std::sqrt(p * (1.0 - p) / static_cast<double>(draws))};
}

struct SweepPoint {
  double omega = 0.0;         // candidate prior vague weight
  double vague_weight = 0.0;  // weight of the vague part in the compared distribution
  double p = 0.0;
};

struct EqpsResult {
  double omega_eq = 1.0;
  MonteCarloEstimate consistency;
  RobustBetaMixture prior;
  RobustBetaMixture posterior;
  double omega_hat = 1.0;  // posterior vague weight
  EffectiveSampleSize ess_prior;
  EffectiveSampleSize ess_posterior;
  std::vector<SweepPoint> sweep;
  bool empty_borrow = false;
  std::vector<std::string> warnings;
};

/// Smallest grid weight whose hybrid distribution agrees with the current data
/// (p >= lambda), else 1. All candidates share one set of random draws: a
/// current-rate draw, a vague-part draw, an informative-part draw and a
/// selection uniform per replicate.
inline EqpsResult find_omega_eq(const std::vector<BetaComponent>& components,
                                const BinomialSummary& current, const EqpsConfig& cfg,
                                RngStream& rng) {
  cfg.validate();
  EqpsResult out;
  if (current.n <= 0) throw ValidationError("current data must be non-empty");
  const double y = current.y;
  const double f = current.n - current.y;
  if (components.empty()) {
    out.empty_borrow = true;
    out.omega_eq = 1.0;
    out.prior = robustify({}, cfg.vague, 1.0);
    out.posterior = posterior_update(out.prior, current);
    out.omega_hat = 1.0;
    out.ess_prior = prior_effective_sample_size(out.prior);
    out.ess_posterior = prior_effective_sample_size(out.posterior);
    out.warnings.push_back("no borrowable external information; vague prior only");
    out.consistency = consistency_p(out.posterior, current, cfg.delta, cfg.mc_draws, rng, cfg.continuity);
    return out;
  }

  const RobustBetaMixture informative_prior = robustify(components, cfg.vague, 0.0);
  const RobustBetaMixture informative_post = posterior_update(informative_prior, current);
  const bool prior_stage = cfg.stage == SearchStage::Prior;
  const RobustBetaMixture& informative = prior_stage ? informative_prior : informative_post;
  const VagueComponent vague_draw =
      prior_stage ? cfg.vague : VagueComponent{cfg.vague.a + y, cfg.vague.b + f};

  const auto [ca, cb] = rate_shapes(current, cfg.continuity, &out.warnings);
  const std::size_t m = cfg.mc_draws;
  std::vector<double> select(m);
  std::vector<char> hit_vague(m);
  std::vector<char> hit_informative(m);
  auto draw_rng = rng.substream(0x5157u);
  for (std::size_t j = 0; j < m; ++j) {
    const double c = draw_rng.beta(ca, cb);
    const double v = draw_rng.beta(vague_draw.a, vague_draw.b);
    const auto& comp = informative.components[informative.pick_component(draw_rng.uniform())];
    const double x = draw_rng.beta(comp.a, comp.b);
    select[j] = draw_rng.uniform();
    hit_vague[j] = std::fabs(c - v) < cfg.delta;
    hit_informative[j] = std::fabs(c - x) < cfg.delta;
  }

  const int points = cfg.grid_points();
  std::optional<std::size_t> chosen;
  for (int g = 0; g < points; ++g) {
    const double omega = std::min(1.0, g * cfg.grid_step);
    double weight = omega;
    if (cfg.stage == SearchStage::PosteriorUpdatedWeight) {
      weight = posterior_update(robustify(components, cfg.vague, omega), current).omega;
    }
    std::size_t hits = 0;
    for (std::size_t j = 0; j < m; ++j) {
      hits += select[j] < weight ? hit_vague[j] : hit_informative[j];
    }
    const double p = static_cast<double>(hits) / static_cast<double>(m);
    out.sweep.push_back({omega, weight, p});
    if (!chosen && p >= cfg.lambda) chosen = out.sweep.size() - 1;
  }
  const double p_at = chosen ? out.sweep[*chosen].p : out.sweep.back().p;
  out.omega_eq = chosen ? out.sweep[*chosen].omega : 1.0;
  out.consistency = {p_at, std::sqrt(p_at * (1.0 - p_at) / static_cast<double>(m))};
  out.prior = robustify(components, cfg.vague, out.omega_eq);
  out.posterior = posterior_update(out.prior, current);
  out.omega_hat = out.posterior.omega;
  out.ess_prior = prior_effective_sample_size(out.prior);
  out.ess_posterior = prior_effective_sample_size(out.posterior);
  return out;
}

// ---------------------------------------------------------------------------
// Decision

struct TrialDecision {
  double prob_superior = 0.0;  // Pr(theta_t > theta_c)
  double se = 0.0;
  bool success = false;
};

inline TrialDecision decide_trial(const RobustBetaMixture& treatment,
                                  const RobustBetaMixture& control, std::size_t draws,
                                  RngStream& rng, double threshold = 0.95) {
  if (draws == 0) throw ConfigError("decision needs at least one draw");
  std::size_t wins = 0;
  for (std::size_t j = 0; j < draws; ++j) {
    const double t = treatment.sample(rng);
    const double c = control.sample(rng);
    if (t > c) ++wins;
  }
  TrialDecision d;
  d.prob_superior = static_cast<double>(wins) / static_cast<double>(draws);
  d.se = std::sqrt(d.prob_superior * (1.0 - d.prob_superior) / static_cast<double>(draws));
  d.success = d.prob_superior > threshold;
  return d;
}

// ---------------------------------------------------------------------------
// Stratified prior construction for one arm

struct StratifiedPriorOptions {
  McmcConfig mcmc;
  MixtureFitOptions mixture;
  StratumWeightOptions weights;
  double mu_prior_sd = 10.0;
};

struct StratifiedPrior {
  Arm arm = Arm::Treatment;
  StratumWeights weights;
  std::vector<BetaComponent> components;  // empty: nothing to borrow
  std::vector<double> draws;              // composite response-rate draws
  double max_rhat = 1.0;
  bool clamped = false;
  std::vector<std::string> warnings;
};

/// Hierarchical draws for every stratum where the arm has something to borrow.
inline PosteriorDraws sample_arm_hierarchy(const PropensityStratification& ps, Arm arm,
                                           const McmcConfig& mcmc, double mu_prior_sd,
                                           const RngStream& rng) {
  return sample_hierarchy(hierarchical_spec(ps.strata, ps.scales, arm, mu_prior_sd), mcmc, rng);
}

/// Weights the stratum draws into the composite prior on the current arm's
/// response rate and approximates it by a Beta mixture.
inline StratifiedPrior combine_stratified_prior(const PosteriorDraws& draws, StratumWeights weights,
                                                Arm arm, const MixtureFitOptions& mixture) {
  StratifiedPrior out;
  out.arm = arm;
  out.weights = std::move(weights);
  out.warnings = out.weights.warnings;
  if (out.weights.empty_borrow()) {
    out.warnings.push_back(to_string(arm) + " arm: no stratum can borrow");
    return out;
  }
  out.max_rhat = draws.max_rhat();
  out.draws = composite_prior_samples(draws, out.weights);
  auto fit = fit_beta_mixture(out.draws, mixture);
  out.components = std::move(fit.components);
  out.clamped = fit.clamped;
  for (auto& w : fit.warnings) out.warnings.push_back(std::move(w));
  return out;
}

inline StratifiedPrior build_stratified_prior(const PropensityStratification& ps, Arm arm,
                                              const StratifiedPriorOptions& opt,
                                              const RngStream& rng) {
  auto weights = stratum_weights(ps.strata, ps.scales, arm, opt.weights);
  if (weights.empty_borrow()) return combine_stratified_prior({}, std::move(weights), arm, opt.mixture);
  const auto draws = sample_arm_hierarchy(ps, arm, opt.mcmc, opt.mu_prior_sd, rng);
  return combine_stratified_prior(draws, std::move(weights), arm, opt.mixture);
}

}  // namespace eqps
