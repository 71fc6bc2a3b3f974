#pragma once

// Beta-mixture priors: EM approximation of draws, robustification with a
// vague component, and closed-form conjugate updating.

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "eqps/data.hpp"
#include "eqps/errors.hpp"
#include "eqps/numerics.hpp"

namespace eqps {

struct BetaComponent {
  double weight = 1.0;
  double a = 1.0;
  double b = 1.0;

  double mean() const { return a / (a + b); }
  double second_moment() const { return a * (a + 1.0) / ((a + b) * (a + b + 1.0)); }
};

struct VagueComponent {
  double a = 1.0;
  double b = 1.0;

  static VagueComponent uniform() { return {1.0, 1.0}; }
  static VagueComponent jeffreys() { return {0.5, 0.5}; }
};

namespace detail {
inline double log_sum_exp(std::span<const double> v) {
  double top = -kInf;
  for (double x : v) top = std::max(top, x);
  if (!std::isfinite(top)) return top;
  double s = 0.0;
  for (double x : v) s += std::exp(x - top);
  return top + std::log(s);
}
}  // namespace detail

/// (1 - omega) * sum_k pi_k Beta(a_k, b_k) + omega * Beta(a0, b0).
struct RobustBetaMixture {
  std::vector<BetaComponent> components;
  VagueComponent vague;
  double omega = 0.0;

  void validate() const {
    if (!(omega >= 0.0 && omega <= 1.0)) throw ValidationError("vague weight must lie in [0, 1]");
    if (!(vague.a > 0.0 && vague.b > 0.0)) throw ValidationError("vague shapes must be positive");
    if (components.empty() && omega < 1.0) {
      throw ValidationError("mixture without informative components needs omega = 1");
    }
    double total = 0.0;
    for (const auto& c : components) {
      if (!(c.weight > 0.0) || !(c.a > 0.0) || !(c.b > 0.0)) {
        throw ValidationError("mixture components need positive weight and shapes");
      }
      total += c.weight;
    }
    if (!components.empty() && std::fabs(total - 1.0) > 1e-12) {
      throw ValidationError("informative weights must sum to 1");
    }
  }

  /// Every component with its overall weight, vague component last.
  std::vector<BetaComponent> flattened() const {
    std::vector<BetaComponent> out;
    for (const auto& c : components) {
      if (omega < 1.0) out.push_back({(1.0 - omega) * c.weight, c.a, c.b});
    }
    if (omega > 0.0) out.push_back({omega, vague.a, vague.b});
    return out;
  }

  double density(double x) const {
    double d = 0.0;
    for (const auto& c : flattened()) d += c.weight * beta_pdf(x, c.a, c.b);
    return d;
  }

  double mean() const {
    double m = 0.0;
    for (const auto& c : flattened()) m += c.weight * c.mean();
    return m;
  }

  double variance() const {
    double m2 = 0.0;
    for (const auto& c : flattened()) m2 += c.weight * c.second_moment();
    const double m = mean();
    return std::max(0.0, m2 - m * m);
  }

  double sd() const { return std::sqrt(variance()); }

  double cdf(double x) const {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    double p = 0.0;
    for (const auto& c : flattened()) p += c.weight * beta_cdf(x, c.a, c.b);
    return std::clamp(p, 0.0, 1.0);
  }

  double quantile(double q) const {
    if (!(q > 0.0 && q < 1.0)) throw DomainError("mixture quantile needs q in (0, 1)");
    double lo = 0.0;
    double hi = 1.0;
    for (int i = 0; i < 200 && hi - lo > 1e-15; ++i) {
      const double mid = 0.5 * (lo + hi);
      (cdf(mid) < q ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  }

  double sample(RngStream& rng) const {
    if (omega > 0.0 && (omega >= 1.0 || rng.uniform() < omega)) {
      return rng.beta(vague.a, vague.b);
    }
    const auto& c = components[pick_component(rng.uniform())];
    return rng.beta(c.a, c.b);
  }

  std::vector<double> sample(RngStream& rng, std::size_t count) const {
    std::vector<double> out(count);
    for (auto& x : out) x = sample(rng);
    return out;
  }

  /// Informative component index for a uniform variate u.
  std::size_t pick_component(double u) const {
    double acc = 0.0;
    for (std::size_t k = 0; k < components.size(); ++k) {
      acc += components[k].weight;
      if (u < acc) return k;
    }
    return components.size() - 1;
  }
};

inline RobustBetaMixture robustify(std::vector<BetaComponent> components, VagueComponent vague,
                                   double omega) {
  if (!(omega >= 0.0 && omega <= 1.0)) throw ValidationError("vague weight must lie in [0, 1]");
  RobustBetaMixture m;
  m.components = std::move(components);
  m.vague = vague;
  m.omega = omega;
  m.validate();
  return m;
}

/// Conjugate update with data-driven reweighting: every component gains
/// (y, N - y); the vague weight and informative weights are rescaled by each
/// component's marginal likelihood ratio B(a + y, b + N - y) / B(a, b).
inline RobustBetaMixture posterior_update(const RobustBetaMixture& prior,
                                          const BinomialSummary& data) {
  prior.validate();
  const double y = data.y;
  const double f = data.n - data.y;
  RobustBetaMixture post;
  post.vague = {prior.vague.a + y, prior.vague.b + f};

  std::vector<double> log_terms;
  for (const auto& c : prior.components) {
    log_terms.push_back(std::log(c.weight) + log_beta_fn(c.a + y, c.b + f) -
                        log_beta_fn(c.a, c.b));
  }
  const double log_inf = log_terms.empty() ? -kInf : detail::log_sum_exp(log_terms);
  for (std::size_t k = 0; k < prior.components.size(); ++k) {
    const auto& c = prior.components[k];
    post.components.push_back({std::exp(log_terms[k] - log_inf), c.a + y, c.b + f});
  }
  // Renormalise so the weights sum to one to machine precision.
  double total = 0.0;
  for (const auto& c : post.components) total += c.weight;
  for (auto& c : post.components) c.weight /= total;

  if (prior.omega <= 0.0) {
    post.omega = 0.0;
  } else if (prior.omega >= 1.0) {
    post.omega = 1.0;
  } else {
    const double log_v = std::log(prior.omega) + log_beta_fn(prior.vague.a + y, prior.vague.b + f) -
                         log_beta_fn(prior.vague.a, prior.vague.b);
    const double log_i = std::log1p(-prior.omega) + log_inf;
    const double pair[2] = {log_v, log_i};
    post.omega = std::exp(log_v - detail::log_sum_exp(pair));
  }
  return post;
}

struct EffectiveSampleSize {
  double value = 0.0;
  bool degenerate = false;  // variance at or above the Bernoulli bound
};

/// Moment-matched Beta(a, b) to the mixture mean and variance; ESS = a + b.
inline EffectiveSampleSize prior_effective_sample_size(const RobustBetaMixture& m) {
  const double mu = m.mean();
  const double v = m.variance();
  const double bound = mu * (1.0 - mu);
  if (!(v > 0.0) || v >= bound) return {0.0, true};
  return {bound / v - 1.0, false};
}

// ---------------------------------------------------------------------------
// EM fitting

enum class SelectionCriterion { AIC, BIC };

struct MixtureFitOptions {
  int k_max = 3;
  SelectionCriterion criterion = SelectionCriterion::AIC;
  int max_iterations = 500;
  double tolerance = 1e-7;  // relative change in log-likelihood
  double min_weight = 1e-4;
  std::size_t min_samples = 100;
  std::size_t max_samples = 4000;  // larger inputs are thinned evenly; 0 keeps all
};

struct MixtureFit {
  std::vector<BetaComponent> components;
  double log_likelihood = 0.0;
  double criterion = 0.0;
  int iterations = 0;
  std::vector<double> trace;  // log-likelihood after every EM iteration
  bool monotone = true;
};

struct MixtureFitResult {
  std::vector<BetaComponent> components;  // selected fit
  std::vector<MixtureFit> candidates;     // one per K tried (after component drops)
  bool clamped = false;
  std::vector<std::string> warnings;
};

namespace detail {

// Weighted Beta MLE from sufficient statistics: maximises
// (a - 1) s1 + (b - 1) s2 - ln B(a, b) by damped Newton iterations.
inline void beta_mle(double s1, double s2, double& a, double& b) {
  using boost::math::digamma;
  using boost::math::trigamma;
  auto objective = [&](double aa, double bb) { return (aa - 1.0) * s1 + (bb - 1.0) * s2 - log_beta_fn(aa, bb); };
  double obj = objective(a, b);
  for (int it = 0; it < 100; ++it) {
    const double dab = digamma(a + b);
    const double ga = s1 - digamma(a) + dab;
    const double gb = s2 - digamma(b) + dab;
    if (std::fabs(ga) + std::fabs(gb) < 1e-13) break;
    const double tab = trigamma(a + b);
    const double haa = -trigamma(a) + tab;
    const double hbb = -trigamma(b) + tab;
    const double hab = tab;
    const double det = haa * hbb - hab * hab;
    double da = -(hbb * ga - hab * gb) / det;
    double db = -(-hab * ga + haa * gb) / det;
    double step = 1.0;
    bool improved = false;
    for (int h = 0; h < 60; ++h) {
      const double na = a + step * da;
      const double nb = b + step * db;
      if (na > 0.0 && nb > 0.0) {
        const double nobj = objective(na, nb);
        if (nobj >= obj) {
          a = na;
          b = nb;
          obj = nobj;
          improved = true;
          break;
        }
      }
      step *= 0.5;
    }
    if (!improved) break;
  }
}

inline bool moment_match(std::span<const double> x, double& a, double& b) {
  const double m = mean_of(x);
  const double v = variance_of(x);
  if (!(v > 0.0) || v >= m * (1.0 - m)) return false;
  const double common = m * (1.0 - m) / v - 1.0;
  a = m * common;
  b = (1.0 - m) * common;
  return a > 0.0 && b > 0.0;
}

// Method-of-moments start from a 1-D k-means split of the sorted sample.
inline std::vector<BetaComponent> initial_components(const std::vector<double>& sorted, int k) {
  std::vector<double> centers(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j) {
    centers[static_cast<std::size_t>(j)] = quantile_sorted(sorted, (j + 0.5) / k);
  }
  std::vector<std::size_t> cut(static_cast<std::size_t>(k) + 1);
  for (int iter = 0; iter < 50; ++iter) {
    // Sorted data: clusters are contiguous, split at midpoints between centers.
    cut.front() = 0;
    cut.back() = sorted.size();
    for (int j = 1; j < k; ++j) {
      const double mid = 0.5 * (centers[static_cast<std::size_t>(j) - 1] + centers[static_cast<std::size_t>(j)]);
      cut[static_cast<std::size_t>(j)] = static_cast<std::size_t>(
          std::lower_bound(sorted.begin(), sorted.end(), mid) - sorted.begin());
    }
    bool moved = false;
    for (int j = 0; j < k; ++j) {
      const auto lo = cut[static_cast<std::size_t>(j)];
      const auto hi = cut[static_cast<std::size_t>(j) + 1];
      if (hi <= lo) continue;
      const double c = mean_of(std::span<const double>(sorted).subspan(lo, hi - lo));
      if (c != centers[static_cast<std::size_t>(j)]) moved = true;
      centers[static_cast<std::size_t>(j)] = c;
    }
    if (!moved) break;
  }
  std::vector<BetaComponent> comps;
  double a_all = 1.0;
  double b_all = 1.0;
  moment_match(sorted, a_all, b_all);
  for (int j = 0; j < k; ++j) {
    const auto lo = cut[static_cast<std::size_t>(j)];
    const auto hi = cut[static_cast<std::size_t>(j) + 1];
    BetaComponent c;
    c.weight = static_cast<double>(hi - lo) / static_cast<double>(sorted.size());
    if (hi - lo < 2 || !moment_match(std::span<const double>(sorted).subspan(lo, hi - lo), c.a, c.b)) {
      c.a = a_all;
      c.b = b_all;
    }
    if (c.weight <= 0.0) c.weight = 1.0 / static_cast<double>(sorted.size());
    comps.push_back(c);
  }
  double total = 0.0;
  for (const auto& c : comps) total += c.weight;
  for (auto& c : comps) c.weight /= total;
  return comps;
}

inline MixtureFit run_em(std::span<const double> lx, std::span<const double> l1x,
                         std::vector<BetaComponent> comps, const MixtureFitOptions& opt) {
  const std::size_t n = lx.size();
  MixtureFit fit;
  std::vector<double> resp;
  double prev = -kInf;
  for (int it = 0;; ++it) {
    const std::size_t k = comps.size();
    resp.assign(n * k, 0.0);
    std::vector<double> log_norm(k);
    for (std::size_t j = 0; j < k; ++j) {
      log_norm[j] = std::log(comps[j].weight) - log_beta_fn(comps[j].a, comps[j].b);
    }
    // E-step; ll is the log-likelihood of the current parameters.
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double top = -kInf;
      for (std::size_t j = 0; j < k; ++j) {
        const double v = log_norm[j] + (comps[j].a - 1.0) * lx[i] + (comps[j].b - 1.0) * l1x[i];
        resp[i * k + j] = v;
        top = std::max(top, v);
      }
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        resp[i * k + j] = std::exp(resp[i * k + j] - top);
        s += resp[i * k + j];
      }
      for (std::size_t j = 0; j < k; ++j) resp[i * k + j] /= s;
      ll += top + std::log(s);
    }
    fit.trace.push_back(ll);
    fit.log_likelihood = ll;
    fit.iterations = it;
    if (it > 0 && ll < prev - 1e-9 * std::max(1.0, std::fabs(prev))) fit.monotone = false;
    if ((it > 0 && std::fabs(ll - prev) < opt.tolerance * (1.0 + std::fabs(prev))) ||
        it >= opt.max_iterations) {
      break;
    }
    prev = ll;
    // M-step.
    for (std::size_t j = 0; j < k; ++j) {
      double w = 0.0;
      double s1 = 0.0;
      double s2 = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double r = resp[i * k + j];
        w += r;
        s1 += r * lx[i];
        s2 += r * l1x[i];
      }
      comps[j].weight = w / static_cast<double>(n);
      if (w > 0.0) beta_mle(s1 / w, s2 / w, comps[j].a, comps[j].b);
    }
    // Degenerate components are removed; the caller refits.
    const auto before = comps.size();
    std::erase_if(comps, [&](const BetaComponent& c) { return c.weight < opt.min_weight; });
    if (comps.size() != before) {
      double total = 0.0;
      for (const auto& c : comps) total += c.weight;
      for (auto& c : comps) c.weight /= total;
      fit.components = comps;
      fit.iterations = -1;  // signal: dropped
      return fit;
    }
  }
  fit.components = std::move(comps);
  return fit;
}

}  // namespace detail

/// Fits Beta mixtures with K = 1..k_max components by EM and keeps the best by
/// AIC or BIC. Samples at 0 or 1 are clamped to [1e-6, 1 - 1e-6].
inline MixtureFitResult fit_beta_mixture(std::span<const double> samples,
                                         const MixtureFitOptions& opt = {}) {
  if (samples.size() < opt.min_samples) {
    throw EstimationError("fit_beta_mixture: need at least " + std::to_string(opt.min_samples) +
                          " samples");
  }
  if (opt.k_max < 1) throw ConfigError("fit_beta_mixture: k_max must be at least 1");
  MixtureFitResult result;
  std::vector<double> x;
  const std::size_t stride =
      opt.max_samples > 0 ? (samples.size() + opt.max_samples - 1) / opt.max_samples : 1;
  for (std::size_t i = 0; i < samples.size(); i += stride) x.push_back(samples[i]);
  for (double& v : x) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw DomainError("fit_beta_mixture: samples must lie in [0, 1]");
    }
    if (v < 1e-6 || v > 1.0 - 1e-6) {
      v = std::clamp(v, 1e-6, 1.0 - 1e-6);
      result.clamped = true;
    }
  }
  if (result.clamped) result.warnings.push_back("samples clamped to [1e-6, 1 - 1e-6]");
  std::vector<double> sorted = x;
  std::sort(sorted.begin(), sorted.end());
  if (!(sorted.back() > sorted.front())) {
    throw EstimationError("fit_beta_mixture: samples are constant (degenerate component)");
  }
  std::vector<double> lx(x.size());
  std::vector<double> l1x(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    lx[i] = std::log(x[i]);
    l1x[i] = std::log1p(-x[i]);
  }
  const double n = static_cast<double>(x.size());
  double best = kInf;
  for (int k = 1; k <= opt.k_max; ++k) {
    auto comps = detail::initial_components(sorted, k);
    MixtureFit fit;
    while (true) {
      fit = detail::run_em(lx, l1x, comps, opt);
      if (fit.iterations != -1) break;
      comps = fit.components;  // restart EM without the dropped component
      result.warnings.push_back("dropped degenerate mixture component at K=" + std::to_string(k));
    }
    const double params = 3.0 * static_cast<double>(fit.components.size()) - 1.0;
    fit.criterion = (opt.criterion == SelectionCriterion::AIC ? 2.0 * params : std::log(n) * params) -
                    2.0 * fit.log_likelihood;
    if (fit.criterion < best) {
      best = fit.criterion;
      result.components = fit.components;
    }
    result.candidates.push_back(std::move(fit));
  }
  return result;
}

}  // namespace eqps
