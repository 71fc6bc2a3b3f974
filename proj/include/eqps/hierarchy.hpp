#pragma once

// Normal-logit hierarchical models for binomial groups, sampled with adaptive
// random-walk Metropolis within Gibbs.
//
// A model is a set of binomial groups g with log-odds theta_g ~ N(mu, tau_j^2),
// where j = tau_of_group[g] selects one of several heterogeneity parameters,
// tau_j ~ half-normal(scale_j) and mu ~ N(m0, s0^2). The stratified model
// uses one tau per source; the unstratified MAP model shares a single tau.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "eqps/data.hpp"
#include "eqps/errors.hpp"
#include "eqps/numerics.hpp"

namespace eqps {

struct McmcConfig {
  int chains = 4;
  int iterations = 5000;  // per chain, including burn-in
  int burn_in = 1000;
  int thin = 1;
  double target_accept = 0.30;
  bool parallel_chains = false;

  int draws_per_chain() const { return (iterations - burn_in + thin - 1) / thin; }

  void validate() const {
    if (chains < 2) throw ConfigError("MCMC needs at least 2 chains");
    if (iterations <= 0 || burn_in < 0 || burn_in >= iterations) {
      throw ConfigError("MCMC burn-in must be smaller than the iteration count");
    }
    if (thin < 1) throw ConfigError("MCMC thinning must be at least 1");
    if (!(target_accept > 0.0 && target_accept < 1.0)) {
      throw ConfigError("MCMC target acceptance must lie in (0, 1)");
    }
  }

  static McmcConfig desk() { return {}; }
  static McmcConfig full() {
    McmcConfig c;
    c.chains = 5;
    c.iterations = 41000;
    c.burn_in = 1000;
    return c;
  }
};

struct HierarchicalModel {
  std::vector<BinomialSummary> groups;
  std::vector<int> tau_of_group;
  std::vector<double> tau_scales;  // half-normal scale per tau, finite and positive
  double mu_prior_mean = 0.0;
  double mu_prior_sd = 10.0;

  void validate() const {
    if (groups.empty()) throw ValidationError("hierarchical model has no groups");
    if (tau_of_group.size() != groups.size()) {
      throw ValidationError("hierarchical model: tau index per group required");
    }
    for (int j : tau_of_group) {
      if (j < 0 || j >= static_cast<int>(tau_scales.size())) {
        throw ValidationError("hierarchical model: tau index out of range");
      }
    }
    for (double k : tau_scales) {
      if (!(k > 0.0) || !std::isfinite(k)) {
        throw ValidationError("half-normal scales must be positive and finite");
      }
    }
    for (const auto& g : groups) {
      if (g.n <= 0 || g.y < 0 || g.y > g.n) throw ValidationError("group needs 0 <= y <= n, n > 0");
    }
    if (!(mu_prior_sd > 0.0)) throw ValidationError("mu prior sd must be positive");
  }
};

/// Convergence summary for one scalar parameter.
struct ParameterDiagnostic {
  std::string name;
  double rhat = 1.0;
  double ess = 0.0;
};

/// Post-burn-in draws, chain-major (chain c occupies [c*L, (c+1)*L)).
struct ModelDraws {
  int chains = 0;
  int draws_per_chain = 0;
  std::vector<std::vector<double>> theta;  // per group
  std::vector<double> mu;
  std::vector<std::vector<double>> tau;  // per tau parameter
  std::vector<ParameterDiagnostic> diagnostics;

  std::size_t size() const { return mu.size(); }
  double max_rhat() const {
    double r = 1.0;
    for (const auto& d : diagnostics) r = std::max(r, d.rhat);
    return r;
  }
};

// ---------------------------------------------------------------------------
// Convergence diagnostics

/// Split R-hat over equal-length chains stored chain-major.
inline double split_rhat(std::span<const double> draws, int chains) {
  const auto len = static_cast<std::size_t>(draws.size() / static_cast<std::size_t>(chains));
  const std::size_t half = len / 2;
  if (half < 2) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> means;
  std::vector<double> vars;
  for (int c = 0; c < chains; ++c) {
    for (int h = 0; h < 2; ++h) {
      const auto seg = draws.subspan(static_cast<std::size_t>(c) * len + h * half, half);
      means.push_back(mean_of(seg));
      vars.push_back(variance_of(seg));
    }
  }
  const double w = mean_of(vars);
  const double b = static_cast<double>(half) * variance_of(means);
  if (!(w > 0.0)) return b > 0.0 ? kInf : 1.0;
  const double n = static_cast<double>(half);
  const double var_plus = (n - 1.0) / n * w + b / n;
  return std::sqrt(var_plus / w);
}

/// Multi-chain effective draw count with Geyer's initial positive sequence.
inline double effective_draws(std::span<const double> draws, int chains) {
  const auto len = draws.size() / static_cast<std::size_t>(chains);
  if (len < 4) return static_cast<double>(draws.size());
  std::vector<double> means(static_cast<std::size_t>(chains));
  std::vector<double> vars(static_cast<std::size_t>(chains));
  for (int c = 0; c < chains; ++c) {
    const auto seg = draws.subspan(static_cast<std::size_t>(c) * len, len);
    means[static_cast<std::size_t>(c)] = mean_of(seg);
    vars[static_cast<std::size_t>(c)] = variance_of(seg);
  }
  const double w = mean_of(vars);
  const double n = static_cast<double>(len);
  const double var_plus = (n - 1.0) / n * w + (chains > 1 ? variance_of(means) : 0.0);
  if (!(var_plus > 0.0)) return static_cast<double>(draws.size());
  auto autocov = [&](std::size_t lag) {
    double total = 0.0;
    for (int c = 0; c < chains; ++c) {
      const auto seg = draws.subspan(static_cast<std::size_t>(c) * len, len);
      const double m = means[static_cast<std::size_t>(c)];
      double acc = 0.0;
      for (std::size_t t = 0; t + lag < len; ++t) acc += (seg[t] - m) * (seg[t + lag] - m);
      total += acc / n;
    }
    return total / chains;
  };
  double sum = 0.0;
  double prev_pair = kInf;
  for (std::size_t lag = 0; lag + 1 < len; lag += 2) {
    const double rho0 = 1.0 - (w - autocov(lag)) / var_plus;
    const double rho1 = 1.0 - (w - autocov(lag + 1)) / var_plus;
    double pair = rho0 + rho1;
    if (pair < 0.0) break;
    pair = std::min(pair, prev_pair);
    prev_pair = pair;
    sum += pair;
  }
  const double tau = -1.0 + 2.0 * sum;
  return static_cast<double>(draws.size()) / std::max(tau, 1.0 / std::log10(static_cast<double>(draws.size()) + 10.0));
}

// ---------------------------------------------------------------------------
// Sampler

namespace detail {

struct RobbinsMonroStep {
  double log_step = 0.0;
  void adapt(double accept_prob, double target, int t) {
    log_step += (accept_prob - target) * std::pow(static_cast<double>(t) + 1.0, -0.6);
    log_step = std::clamp(log_step, -25.0, 5.0);
  }
  double step() const { return std::exp(log_step); }
};

class HierarchySampler {
 public:
  HierarchySampler(const HierarchicalModel& m, const McmcConfig& cfg, RngStream rng)
      : m_(m), cfg_(cfg), rng_(std::move(rng)) {
    const auto g = m_.groups.size();
    const auto nt = m_.tau_scales.size();
    theta_.resize(g);
    ll_.resize(g);
    eta_.resize(nt);
    members_.resize(nt);
    for (std::size_t i = 0; i < g; ++i) {
      members_[static_cast<std::size_t>(m_.tau_of_group[i])].push_back(i);
    }
    theta_step_.resize(g);
    eta_step_.resize(nt);
    scale_step_.resize(nt);

    double info_total = 0.0;
    for (std::size_t i = 0; i < g; ++i) {
      const auto& gr = m_.groups[i];
      const double p = (gr.y + 0.5) / (gr.n + 1.0);
      const double info = gr.n * p * (1.0 - p) + 0.25;
      theta_step_[i].log_step = std::log(2.4 / std::sqrt(info));
      info_total += info;
    }
    translate_step_.log_step = std::log(2.4 / std::sqrt(info_total));
    for (std::size_t j = 0; j < nt; ++j) {
      eta_step_[j].log_step = std::log(0.5);
      scale_step_[j].log_step = std::log(0.5);
    }

    // Start near the data, with group offsets no wider than their tau allows.
    double mu0 = 0.0;
    std::vector<double> raw(g);
    for (std::size_t i = 0; i < g; ++i) {
      const auto& gr = m_.groups[i];
      raw[i] = logit((gr.y + 0.5) / (gr.n + 1.0)) + 0.2 * rng_.normal();
      mu0 += raw[i] / static_cast<double>(g);
    }
    mu_ = mu0 + 0.2 * rng_.normal();
    for (std::size_t j = 0; j < nt; ++j) {
      eta_[j] = std::log(0.7 * m_.tau_scales[j]) + 0.2 * rng_.normal();
    }
    for (std::size_t i = 0; i < g; ++i) {
      const double tau = tau_of(i);
      theta_[i] = mu_ + std::clamp(raw[i] - mu_, -2.0 * tau, 2.0 * tau);
      ll_[i] = loglik(i, theta_[i]);
    }
  }

  void run(ModelDraws& out, int chain) {
    const int len = cfg_.draws_per_chain();
    const auto offset = static_cast<std::size_t>(chain) * static_cast<std::size_t>(len);
    std::size_t stored = 0;
    for (int t = 0; t < cfg_.iterations; ++t) {
      const bool adapting = t < cfg_.burn_in;
      sweep(adapting, t);
      if (!adapting && (t - cfg_.burn_in) % cfg_.thin == 0) {
        const auto at = offset + stored;
        for (std::size_t i = 0; i < theta_.size(); ++i) out.theta[i][at] = theta_[i];
        out.mu[at] = mu_;
        for (std::size_t j = 0; j < eta_.size(); ++j) out.tau[j][at] = std::exp(eta_[j]);
        ++stored;
      }
    }
  }

 private:
  double tau_of(std::size_t g) const {
    return std::exp(eta_[static_cast<std::size_t>(m_.tau_of_group[g])]);
  }

  double loglik(std::size_t g, double theta) const {
    const auto& gr = m_.groups[g];
    return gr.y * theta - gr.n * log1p_exp(theta);
  }

  double log_prior_eta(std::size_t j, double eta) const {
    const double tau = std::exp(eta);
    const double k = m_.tau_scales[j];
    return -0.5 * tau * tau / (k * k) + eta;
  }

  // Log density of theta_g given mu and tau_j, summed over members of j.
  double log_group_prior(std::size_t j, double mu, double eta) const {
    const double inv_var = std::exp(-2.0 * eta);
    double s = 0.0;
    for (std::size_t g : members_[j]) {
      const double d = theta_[g] - mu;
      s += -0.5 * d * d * inv_var - eta;
    }
    return s;
  }

  bool accept(double log_ratio, RobbinsMonroStep& step, bool adapting, int t) {
    const double prob = log_ratio >= 0.0 ? 1.0 : std::exp(log_ratio);
    if (adapting) step.adapt(prob, cfg_.target_accept, t);
    return rng_.uniform() < prob;
  }

  void sweep(bool adapting, int t) {
    // Component-wise updates of each log-odds.
    for (std::size_t g = 0; g < theta_.size(); ++g) {
      const double tau = tau_of(g);
      const double prop = theta_[g] + theta_step_[g].step() * rng_.normal();
      const double ll_new = loglik(g, prop);
      const double d_old = theta_[g] - mu_;
      const double d_new = prop - mu_;
      const double lr = ll_new - ll_[g] - 0.5 * (d_new * d_new - d_old * d_old) / (tau * tau);
      if (accept(lr, theta_step_[g], adapting, t)) {
        theta_[g] = prop;
        ll_[g] = ll_new;
      }
    }

    // Exact Gibbs step for the mean.
    double prec = 1.0 / (m_.mu_prior_sd * m_.mu_prior_sd);
    double num = m_.mu_prior_mean * prec;
    for (std::size_t g = 0; g < theta_.size(); ++g) {
      const double w = std::exp(-2.0 * eta_[static_cast<std::size_t>(m_.tau_of_group[g])]);
      prec += w;
      num += w * theta_[g];
    }
    mu_ = num / prec + rng_.normal() / std::sqrt(prec);

    // Log-heterogeneity, centred.
    for (std::size_t j = 0; j < eta_.size(); ++j) {
      const double prop = eta_[j] + eta_step_[j].step() * rng_.normal();
      const double lr = log_prior_eta(j, prop) - log_prior_eta(j, eta_[j]) +
                        log_group_prior(j, mu_, prop) - log_group_prior(j, mu_, eta_[j]);
      if (accept(lr, eta_step_[j], adapting, t)) eta_[j] = prop;
    }

    // Joint shift of the mean and every log-odds (mixes under strong pooling).
    {
      const double eps = translate_step_.step() * rng_.normal();
      double lr = 0.0;
      std::vector<double>& ll_new = scratch_;
      ll_new.resize(theta_.size());
      for (std::size_t g = 0; g < theta_.size(); ++g) {
        ll_new[g] = loglik(g, theta_[g] + eps);
        lr += ll_new[g] - ll_[g];
      }
      const double s2 = m_.mu_prior_sd * m_.mu_prior_sd;
      const double a = mu_ - m_.mu_prior_mean;
      lr += -0.5 * ((a + eps) * (a + eps) - a * a) / s2;
      if (accept(lr, translate_step_, adapting, t)) {
        mu_ += eps;
        for (std::size_t g = 0; g < theta_.size(); ++g) {
          theta_[g] += eps;
          ll_[g] = ll_new[g];
        }
      }
    }

    // Rescale tau_j together with the member offsets from the mean (the
    // non-centred direction); the Jacobian cancels the tau normalisers.
    for (std::size_t j = 0; j < eta_.size(); ++j) {
      const double eps = scale_step_[j].step() * rng_.normal();
      const double factor = std::exp(eps);
      double lr = log_prior_eta(j, eta_[j] + eps) - log_prior_eta(j, eta_[j]);
      std::vector<double>& ll_new = scratch_;
      ll_new.resize(theta_.size());
      for (std::size_t g : members_[j]) {
        ll_new[g] = loglik(g, mu_ + (theta_[g] - mu_) * factor);
        lr += ll_new[g] - ll_[g];
      }
      if (accept(lr, scale_step_[j], adapting, t)) {
        eta_[j] += eps;
        for (std::size_t g : members_[j]) {
          theta_[g] = mu_ + (theta_[g] - mu_) * factor;
          ll_[g] = ll_new[g];
        }
      }
    }
  }

  const HierarchicalModel& m_;
  const McmcConfig& cfg_;
  RngStream rng_;
  std::vector<double> theta_;
  std::vector<double> ll_;
  std::vector<double> eta_;
  double mu_ = 0.0;
  std::vector<std::vector<std::size_t>> members_;
  std::vector<RobbinsMonroStep> theta_step_;
  std::vector<RobbinsMonroStep> eta_step_;
  std::vector<RobbinsMonroStep> scale_step_;
  RobbinsMonroStep translate_step_;
  std::vector<double> scratch_;
};

inline void add_diagnostic(ModelDraws& d, std::string name, std::span<const double> v) {
  d.diagnostics.push_back({std::move(name), split_rhat(v, d.chains), effective_draws(v, d.chains)});
}

}  // namespace detail

/// Runs `cfg.chains` independent chains (chain c uses rng.substream(c)) and
/// returns the pooled post-burn-in draws with split R-hat and effective draw
/// counts for every parameter.
inline ModelDraws sample_model(const HierarchicalModel& model, const McmcConfig& cfg,
                               const RngStream& rng) {
  model.validate();
  cfg.validate();
  ModelDraws out;
  out.chains = cfg.chains;
  out.draws_per_chain = cfg.draws_per_chain();
  const auto total = static_cast<std::size_t>(out.chains) * static_cast<std::size_t>(out.draws_per_chain);
  out.theta.assign(model.groups.size(), std::vector<double>(total));
  out.tau.assign(model.tau_scales.size(), std::vector<double>(total));
  out.mu.assign(total, 0.0);

  auto run_chain = [&](int c) {
    detail::HierarchySampler sampler(model, cfg, rng.substream(static_cast<std::uint64_t>(c)));
    sampler.run(out, c);
  };
  if (cfg.parallel_chains) {
    std::vector<std::jthread> workers;
    for (int c = 0; c < cfg.chains; ++c) workers.emplace_back(run_chain, c);
  } else {
    for (int c = 0; c < cfg.chains; ++c) run_chain(c);
  }

  for (std::size_t g = 0; g < out.theta.size(); ++g) {
    detail::add_diagnostic(out, "theta[" + std::to_string(g) + "]", out.theta[g]);
  }
  detail::add_diagnostic(out, "mu", out.mu);
  for (std::size_t j = 0; j < out.tau.size(); ++j) {
    detail::add_diagnostic(out, "tau[" + std::to_string(j) + "]", out.tau[j]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stratified model: one (external, real-world) pair per stratum

struct StratumSpec {
  BinomialSummary external;
  BinomialSummary rwd;
  double k_external = 1.0;  // +inf excludes the source from the stratum
  double k_rwd = 1.0;

  bool uses_external() const { return external.n > 0 && std::isfinite(k_external); }
  bool uses_rwd() const { return rwd.n > 0 && std::isfinite(k_rwd); }
  bool included() const { return uses_external() || uses_rwd(); }
};

struct HierarchicalSpec {
  std::vector<StratumSpec> strata;
  double mu_prior_sd = 10.0;
};

struct StratumDraws {
  bool has_external = false;
  bool has_rwd = false;
  std::vector<double> theta_external;
  std::vector<double> theta_rwd;
  std::vector<double> mu;
  std::vector<double> tau_external;
  std::vector<double> tau_rwd;
  std::vector<ParameterDiagnostic> diagnostics;

  bool included() const { return has_external || has_rwd; }
};

struct PosteriorDraws {
  int chains = 0;
  int draws_per_chain = 0;
  std::vector<StratumDraws> strata;

  std::size_t size() const {
    return static_cast<std::size_t>(chains) * static_cast<std::size_t>(draws_per_chain);
  }
  double max_rhat() const {
    double r = 1.0;
    for (const auto& s : strata) {
      for (const auto& d : s.diagnostics) {
        if (std::isfinite(d.rhat) || std::isinf(d.rhat)) r = std::max(r, d.rhat);
      }
    }
    return r;
  }
  bool diagnostic_failure(double threshold = 1.05) const { return max_rhat() > threshold; }
};

/// Samples every included stratum independently; stratum s uses rng.substream(s).
inline PosteriorDraws sample_hierarchy(const HierarchicalSpec& spec, const McmcConfig& cfg,
                                       const RngStream& rng) {
  cfg.validate();
  PosteriorDraws out;
  out.chains = cfg.chains;
  out.draws_per_chain = cfg.draws_per_chain();
  for (std::size_t s = 0; s < spec.strata.size(); ++s) {
    const auto& st = spec.strata[s];
    StratumDraws sd;
    if (!st.included()) {
      out.strata.push_back(std::move(sd));
      continue;
    }
    HierarchicalModel m;
    m.mu_prior_sd = spec.mu_prior_sd;
    int ext_g = -1;
    int rwd_g = -1;
    if (st.uses_external()) {
      ext_g = static_cast<int>(m.groups.size());
      m.groups.push_back(st.external);
      m.tau_of_group.push_back(static_cast<int>(m.tau_scales.size()));
      m.tau_scales.push_back(st.k_external);
    }
    if (st.uses_rwd()) {
      rwd_g = static_cast<int>(m.groups.size());
      m.groups.push_back(st.rwd);
      m.tau_of_group.push_back(static_cast<int>(m.tau_scales.size()));
      m.tau_scales.push_back(st.k_rwd);
    }
    auto draws = sample_model(m, cfg, rng.substream(s));
    sd.mu = std::move(draws.mu);
    if (ext_g >= 0) {
      sd.has_external = true;
      sd.theta_external = std::move(draws.theta[static_cast<std::size_t>(ext_g)]);
      sd.tau_external = std::move(draws.tau[static_cast<std::size_t>(ext_g)]);
    }
    if (rwd_g >= 0) {
      sd.has_rwd = true;
      sd.theta_rwd = std::move(draws.theta[static_cast<std::size_t>(rwd_g)]);
      sd.tau_rwd = std::move(draws.tau[static_cast<std::size_t>(rwd_g)]);
    }
    for (auto& d : draws.diagnostics) {
      if (ext_g >= 0) {
        if (d.name == "theta[" + std::to_string(ext_g) + "]") d.name = "theta_external";
        if (d.name == "tau[" + std::to_string(ext_g) + "]") d.name = "tau_external";
      }
      if (rwd_g >= 0) {
        if (d.name == "theta[" + std::to_string(rwd_g) + "]") d.name = "theta_rwd";
        if (d.name == "tau[" + std::to_string(rwd_g) + "]") d.name = "tau_rwd";
      }
      d.name += "[" + std::to_string(s + 1) + "]";
    }
    sd.diagnostics = std::move(draws.diagnostics);
    out.strata.push_back(std::move(sd));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Unstratified meta-analytic-predictive model

struct MapDraws {
  std::vector<double> theta_star;  // predictive log-odds for a new trial
  ModelDraws model;
};

/// theta_h ~ N(mu, tau^2) over the histories with one shared tau ~ half-normal(tau_scale);
/// returns predictive draws theta_* ~ N(mu, tau^2) alongside the posterior.
inline MapDraws sample_unstratified_map(std::span<const BinomialSummary> histories,
                                        double tau_scale, const McmcConfig& cfg,
                                        const RngStream& rng, double mu_prior_sd = 10.0) {
  if (histories.empty()) throw ValidationError("MAP needs at least one history");
  HierarchicalModel m;
  m.mu_prior_sd = mu_prior_sd;
  m.tau_scales = {tau_scale};
  for (const auto& h : histories) {
    m.groups.push_back(h);
    m.tau_of_group.push_back(0);
  }
  MapDraws out;
  out.model = sample_model(m, cfg, rng.substream(0));
  auto pred_rng = rng.substream(1);
  out.theta_star.resize(out.model.size());
  for (std::size_t i = 0; i < out.theta_star.size(); ++i) {
    out.theta_star[i] = out.model.mu[i] + out.model.tau[0][i] * pred_rng.normal();
  }
  return out;
}

/// Optional draw dump: chain, iteration, parameter, stratum, value.
inline void write_draws_csv(std::ostream& out, const PosteriorDraws& d) {
  out << "chain,iteration,parameter,stratum,value\n";
  const auto len = static_cast<std::size_t>(d.draws_per_chain);
  for (std::size_t s = 0; s < d.strata.size(); ++s) {
    const auto& st = d.strata[s];
    const std::pair<const char*, const std::vector<double>*> params[] = {
        {"theta_external", &st.theta_external}, {"theta_rwd", &st.theta_rwd},
        {"mu", &st.mu},                         {"tau_external", &st.tau_external},
        {"tau_rwd", &st.tau_rwd}};
    for (const auto& [name, vec] : params) {
      for (std::size_t i = 0; i < vec->size(); ++i) {
        out << (i / len + 1) << ',' << (i % len + 1) << ',' << name << ',' << (s + 1) << ','
            << detail::format_double((*vec)[i]) << '\n';
      }
    }
  }
}

}  // namespace eqps
