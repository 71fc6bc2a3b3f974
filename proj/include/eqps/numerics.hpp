#pragma once

// Special functions, random streams, density estimation and small
// statistics helpers shared by every other header.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "eqps/errors.hpp"

namespace eqps {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

namespace detail {

// Stirling-series remainder ln Γ(x) − [(x − ½) ln x − x + ½ ln 2π], valid for x ≥ 10.
inline double lgamma_correction(double x) {
  const double x2 = 1.0 / (x * x);
  return (1.0 / 12.0 +
          x2 * (-1.0 / 360.0 +
                x2 * (1.0 / 1260.0 +
                      x2 * (-1.0 / 1680.0 +
                            x2 * (1.0 / 1188.0 + x2 * (-691.0 / 360360.0 + x2 / 156.0)))))) /
         x;
}

// Modified Lentz evaluation of the incomplete-beta continued fraction.
inline double beta_continued_fraction(double x, double a, double b) {
  constexpr double kTiny = 1e-300;
  constexpr double kEps = 1e-16;
  constexpr int kMaxIter = 200000;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) return h;
  }
  throw ConvergenceError("incomplete beta continued fraction did not converge");
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// ln B(a, b). Uses Stirling corrections once either argument reaches 10 so
/// that the three large log-gamma terms never cancel.
inline double log_beta_fn(double a, double b) {
  if (!(a > 0.0) || !(b > 0.0) || !std::isfinite(a) || !std::isfinite(b)) {
    throw DomainError("log_beta_fn: arguments must be positive and finite");
  }
  const double p = std::min(a, b);
  const double q = std::max(a, b);
  const double ln_sqrt_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  if (p >= 10.0) {
    const double corr = detail::lgamma_correction(p) + detail::lgamma_correction(q) -
                        detail::lgamma_correction(p + q);
    return -0.5 * std::log(q) + ln_sqrt_2pi + corr + (p - 0.5) * std::log(p / (p + q)) +
           q * std::log1p(-p / (p + q));
  }
  if (q >= 10.0) {
    const double corr = detail::lgamma_correction(q) - detail::lgamma_correction(p + q);
    return std::lgamma(p) + corr + p - p * std::log(p + q) +
           (q - 0.5) * std::log1p(-p / (p + q));
  }
  return std::lgamma(p) + std::lgamma(q) - std::lgamma(p + q);
}

inline double beta_log_pdf(double x, double a, double b) {
  if (x < 0.0 || x > 1.0) return -kInf;
  if (x == 0.0) {
    if (a < 1.0) return kInf;
    if (a > 1.0) return -kInf;
    return -log_beta_fn(a, b);
  }
  if (x == 1.0) {
    if (b < 1.0) return kInf;
    if (b > 1.0) return -kInf;
    return -log_beta_fn(a, b);
  }
  return (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) - log_beta_fn(a, b);
}

inline double beta_pdf(double x, double a, double b) { return std::exp(beta_log_pdf(x, a, b)); }

/// Regularized incomplete beta I_x(a, b).
inline double beta_cdf(double x, double a, double b) {
  if (!(a > 0.0) || !(b > 0.0) || !std::isfinite(a) || !std::isfinite(b)) {
    throw DomainError("beta_cdf: shape parameters must be positive and finite");
  }
  if (!(x >= 0.0 && x <= 1.0)) throw DomainError("beta_cdf: x must lie in [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double log_front = a * std::log(x) + b * std::log1p(-x) - log_beta_fn(a, b);
  if (x < a / (a + b)) {
    return std::exp(log_front) * detail::beta_continued_fraction(x, a, b) / a;
  }
  return 1.0 - std::exp(log_front) * detail::beta_continued_fraction(1.0 - x, b, a) / b;
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

inline double logistic(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

// log(1 + e^t) without overflow.
inline double log1p_exp(double t) {
  return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}

// ---------------------------------------------------------------------------
// Random streams

/// A reproducible random stream keyed by (seed, stream_id). Child streams are
/// derived deterministically, so a replicate's draws never depend on which
/// worker runs it or in what order.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id) : seed_(seed), stream_id_(stream_id) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream_id),
                      static_cast<std::uint32_t>(stream_id >> 32), 0x45515053u};
    engine_.seed(seq);
  }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }

  /// Independent stream for a labelled sub-task (chain, replicate, candidate ...).
  RngStream substream(std::uint64_t child) const {
    return RngStream(seed_, detail::splitmix64(detail::splitmix64(stream_id_) ^ (child + 1)));
  }

  /// Uniform on the open interval (0, 1).
  double uniform() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double normal() { return normal_(engine_); }
  double normal(double mean, double sd) { return mean + sd * normal_(engine_); }

  double gamma(double shape) {
    return gamma_(engine_, std::gamma_distribution<double>::param_type(shape, 1.0));
  }

  double beta(double a, double b) {
    const double x = gamma(a);
    const double y = gamma(b);
    const double s = x + y;
    if (s <= 0.0) return uniform() < a / (a + b) ? 1.0 : 0.0;
    return x / s;
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::gamma_distribution<double> gamma_{1.0, 1.0};
};

template <class T>
void shuffle(std::vector<T>& v, RngStream& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[rng.index(i)]);
  }
}

// ---------------------------------------------------------------------------
// Descriptive statistics

inline double mean_of(std::span<const double> x) {
  if (x.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

inline double variance_of(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const double m = mean_of(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return ss / static_cast<double>(x.size() - 1);
}

/// Linear-interpolation sample quantile (Hyndman–Fan type 7) of sorted data.
inline double quantile_sorted(std::span<const double> sorted, double prob) {
  if (sorted.empty()) throw EstimationError("quantile of empty sample");
  const double pos = prob * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline double quantile_of(std::span<const double> x, double prob) {
  std::vector<double> s(x.begin(), x.end());
  std::sort(s.begin(), s.end());
  return quantile_sorted(s, prob);
}

inline double median_of(std::span<const double> x) { return quantile_of(x, 0.5); }

// ---------------------------------------------------------------------------
// Density estimation on the unit interval

/// Density values on an ascending grid.
struct DensityEstimate {
  std::vector<double> grid;
  std::vector<double> density;

  /// Linear interpolation; zero outside the grid.
  double at(double x) const {
    if (grid.empty() || x < grid.front() || x > grid.back()) return 0.0;
    const auto it = std::upper_bound(grid.begin(), grid.end(), x);
    if (it == grid.end()) return density.back();
    const auto hi = static_cast<std::size_t>(it - grid.begin());
    if (hi == 0) return density.front();
    const std::size_t lo = hi - 1;
    const double t = (x - grid[lo]) / (grid[hi] - grid[lo]);
    return density[lo] + t * (density[hi] - density[lo]);
  }
};

inline double trapezoid_integral(const DensityEstimate& f) {
  double total = 0.0;
  for (std::size_t i = 1; i < f.grid.size(); ++i) {
    total += 0.5 * (f.density[i] + f.density[i - 1]) * (f.grid[i] - f.grid[i - 1]);
  }
  return total;
}

inline std::vector<double> uniform_grid(double lo, double hi, std::size_t points) {
  std::vector<double> g(points);
  for (std::size_t i = 0; i < points; ++i) {
    g[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
  }
  return g;
}

inline double silverman_bandwidth(std::span<const double> samples) {
  const double sd = std::sqrt(variance_of(samples));
  std::vector<double> s(samples.begin(), samples.end());
  std::sort(s.begin(), s.end());
  const double iqr = quantile_sorted(s, 0.75) - quantile_sorted(s, 0.25);
  double spread = sd;
  if (iqr > 0.0) spread = std::min(sd, iqr / 1.34);
  return 0.9 * spread * std::pow(static_cast<double>(samples.size()), -0.2);
}

/// Gaussian kernel density estimate on [0, 1] with reflection at both ends and
/// Silverman's rule-of-thumb bandwidth. The result is renormalized so that its
/// trapezoidal integral is one.
inline DensityEstimate kde_unit_interval(std::span<const double> samples,
                                         std::size_t grid_size = 512,
                                         std::size_t min_samples = 10) {
  if (samples.size() < std::max<std::size_t>(min_samples, 2)) {
    throw EstimationError("kde_unit_interval: need at least " +
                          std::to_string(std::max<std::size_t>(min_samples, 2)) + " samples");
  }
  if (grid_size < 2) throw EstimationError("kde_unit_interval: grid needs at least 2 points");
  for (double s : samples) {
    if (!(s >= 0.0 && s <= 1.0)) throw DomainError("kde_unit_interval: sample outside [0, 1]");
  }
  const double h = silverman_bandwidth(samples);
  if (!(h > 0.0)) throw EstimationError("kde_unit_interval: samples have zero variance");

  DensityEstimate est;
  est.grid = uniform_grid(0.0, 1.0, grid_size);
  est.density.assign(grid_size, 0.0);
  const double norm = 1.0 / (static_cast<double>(samples.size()) * h *
                             std::sqrt(2.0 * std::numbers::pi));
  const double cutoff = 8.0 * h;
  for (double s : samples) {
    const double centers[3] = {s, -s, 2.0 - s};
    for (double c : centers) {
      const double lo = c - cutoff;
      const double hi = c + cutoff;
      if (hi < 0.0 || lo > 1.0) continue;
      const auto first = static_cast<std::size_t>(
          std::max(0.0, std::ceil(lo * static_cast<double>(grid_size - 1))));
      const auto last = static_cast<std::size_t>(std::min(
          static_cast<double>(grid_size - 1), std::floor(hi * static_cast<double>(grid_size - 1))));
      for (std::size_t i = first; i <= last; ++i) {
        const double z = (est.grid[i] - c) / h;
        est.density[i] += norm * std::exp(-0.5 * z * z);
      }
    }
  }
  const double total = trapezoid_integral(est);
  if (!(total > 0.0)) throw EstimationError("kde_unit_interval: degenerate estimate");
  for (double& d : est.density) d /= total;
  return est;
}

}  // namespace eqps
