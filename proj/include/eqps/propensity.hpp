#pragma once

// Source-membership propensity model, trimming to the current-trial score
// range, quantile stratification and per-stratum overlap scales.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "eqps/data.hpp"
#include "eqps/errors.hpp"
#include "eqps/numerics.hpp"

namespace eqps {

/// Multinomial logit with the current trial as reference class. Row 0 holds
/// the real-world coefficients, row 1 the external-trial coefficients; each
/// row is (intercept, slopes...).
struct PropensityModel {
  std::array<std::vector<double>, 2> coefficients;
  std::array<bool, 2> present = {false, false};
  int iterations = 0;
  double gradient_norm = 0.0;
  bool regularized = false;
  std::vector<std::string> warnings;

  std::size_t covariate_count() const {
    return coefficients[0].empty() ? 0 : coefficients[0].size() - 1;
  }

  /// Class probabilities (current, real-world, external) for one covariate vector.
  std::array<double, 3> probabilities(std::span<const double> x) const {
    if (x.size() != covariate_count()) {
      throw ValidationError("propensity model expects " + std::to_string(covariate_count()) +
                            " covariates, got " + std::to_string(x.size()));
    }
    std::array<double, 3> eta = {0.0, -kInf, -kInf};
    for (std::size_t c = 0; c < 2; ++c) {
      if (!present[c]) continue;
      double e = coefficients[c][0];
      for (std::size_t j = 0; j < x.size(); ++j) e += coefficients[c][j + 1] * x[j];
      eta[c + 1] = e;
    }
    const double top = std::max({eta[0], eta[1], eta[2]});
    std::array<double, 3> p{};
    double total = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      p[c] = std::isfinite(eta[c]) ? std::exp(eta[c] - top) : 0.0;
      total += p[c];
    }
    for (double& v : p) v /= total;
    return p;
  }
};

struct PropensityFitOptions {
  int max_iterations = 100;
  double gradient_tolerance = 1e-8;
  double ridge = 1e-6;
  double separation_bound = 50.0;
};

namespace detail {

inline int class_index(Source s) {
  switch (s) {
    case Source::RealWorld: return 0;
    case Source::External: return 1;
    case Source::Current: break;
  }
  return -1;
}

struct NewtonResult {
  Eigen::VectorXd beta;
  int iterations = 0;
  double gradient_norm = 0.0;
  bool converged = false;
  bool diverging = false;
};

inline NewtonResult multinomial_newton(const Eigen::MatrixXd& x, const std::vector<int>& cls,
                                       const std::vector<int>& active, double ridge,
                                       const PropensityFitOptions& opt, double gram_min) {
  const auto n = x.rows();
  const auto p = x.cols();
  const auto m = static_cast<Eigen::Index>(active.size());
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(m * p);

  auto loglik = [&](const Eigen::VectorXd& b) {
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double top = 0.0;
      std::vector<double> eta(static_cast<std::size_t>(m));
      for (Eigen::Index c = 0; c < m; ++c) {
        eta[static_cast<std::size_t>(c)] = x.row(i).dot(b.segment(c * p, p));
        top = std::max(top, eta[static_cast<std::size_t>(c)]);
      }
      double denom = std::exp(-top);
      for (double e : eta) denom += std::exp(e - top);
      const double log_denom = top + std::log(denom);
      const int k = cls[static_cast<std::size_t>(i)];
      ll += (k < 0 ? 0.0 : eta[static_cast<std::size_t>(k)]) - log_denom;
    }
    return ll - 0.5 * ridge * b.squaredNorm();
  };

  NewtonResult res;
  double current = loglik(beta);
  for (int it = 1; it <= opt.max_iterations; ++it) {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(m * p);
    Eigen::MatrixXd info = Eigen::MatrixXd::Zero(m * p, m * p);
    std::vector<double> prob(static_cast<std::size_t>(m));
    for (Eigen::Index i = 0; i < n; ++i) {
      double top = 0.0;
      for (Eigen::Index c = 0; c < m; ++c) {
        prob[static_cast<std::size_t>(c)] = x.row(i).dot(beta.segment(c * p, p));
        top = std::max(top, prob[static_cast<std::size_t>(c)]);
      }
      double denom = std::exp(-top);
      for (auto& e : prob) {
        e = std::exp(e - top);
        denom += e;
      }
      for (auto& e : prob) e /= denom;
      const auto xi = x.row(i).transpose();
      const Eigen::MatrixXd outer = xi * xi.transpose();
      for (Eigen::Index c = 0; c < m; ++c) {
        const double yc = cls[static_cast<std::size_t>(i)] == c ? 1.0 : 0.0;
        grad.segment(c * p, p) += (yc - prob[static_cast<std::size_t>(c)]) * xi;
        for (Eigen::Index d = 0; d < m; ++d) {
          const double w = prob[static_cast<std::size_t>(c)] *
                           ((c == d ? 1.0 : 0.0) - prob[static_cast<std::size_t>(d)]);
          info.block(c * p, d * p, p, p) += w * outer;
        }
      }
    }
    grad -= ridge * beta;
    info.diagonal().array() += ridge;
    res.gradient_norm = grad.lpNorm<Eigen::Infinity>();
    res.iterations = it;
    if (res.gradient_norm < opt.gradient_tolerance) {
      res.converged = true;
      // A vanishing information matrix means the gradient vanished because the
      // coefficients ran off to infinity, not at an interior optimum.
      info.diagonal().array() -= ridge;
      const double info_min = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(info).eigenvalues().minCoeff();
      res.diverging = ridge == 0.0 && !(info_min > 1e-6 * gram_min);
      if (res.diverging) res.converged = false;
      break;
    }
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    if (ldlt.info() != Eigen::Success) break;
    Eigen::VectorXd step = ldlt.solve(grad);
    double scale = 1.0;
    Eigen::VectorXd trial = beta + step;
    double next = loglik(trial);
    const double slack = 1e-12 * (1.0 + std::fabs(current));
    while (!(next >= current - slack) && scale > 1e-10) {
      scale *= 0.5;
      trial = beta + scale * step;
      next = loglik(trial);
    }
    beta = trial;
    current = next;
    if (beta.lpNorm<Eigen::Infinity>() > opt.separation_bound) {
      res.diverging = true;
      break;
    }
  }
  res.beta = beta;
  return res;
}

}  // namespace detail

/// Maximum-likelihood multinomial-logit fit by Newton iterations. Under
/// separation (diverging coefficients or a singular information matrix) the
/// fit is redone with a small ridge on the Hessian diagonal and flagged.
inline PropensityModel fit_propensity(const Dataset& ds, const PropensityFitOptions& opt = {}) {
  const auto k = ds.covariate_count();
  const auto p = static_cast<Eigen::Index>(k + 1);
  std::array<int, 3> counts = {0, 0, 0};
  for (const auto& s : ds.subjects) ++counts[static_cast<std::size_t>(s.source)];
  if (counts[static_cast<std::size_t>(Source::Current)] == 0) {
    throw ValidationError("propensity model needs current-trial subjects");
  }
  std::vector<int> active;  // class rows with subjects, in row order
  std::array<int, 2> remap = {-1, -1};
  for (Source s : {Source::RealWorld, Source::External}) {
    if (counts[static_cast<std::size_t>(s)] > 0) {
      remap[static_cast<std::size_t>(detail::class_index(s))] = static_cast<int>(active.size());
      active.push_back(detail::class_index(s));
    }
  }
  if (active.empty()) throw ValidationError("propensity model needs at least two sources");

  const auto n = static_cast<Eigen::Index>(ds.subjects.size());
  Eigen::MatrixXd x(n, p);
  std::vector<int> cls(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = ds.subjects[static_cast<std::size_t>(i)];
    x(i, 0) = 1.0;
    for (std::size_t j = 0; j < k; ++j) x(i, static_cast<Eigen::Index>(j + 1)) = s.covariates[j];
    const int ci = detail::class_index(s.source);
    cls[static_cast<std::size_t>(i)] = ci < 0 ? -1 : remap[static_cast<std::size_t>(ci)];
  }

  const Eigen::MatrixXd gram = x.transpose() * x;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  const double max_ev = eig.eigenvalues().maxCoeff();
  if (!(eig.eigenvalues().minCoeff() > 1e-10 * max_ev)) {
    throw ValidationError("propensity design matrix is rank deficient");
  }

  PropensityModel model;
  auto res = detail::multinomial_newton(x, cls, active, 0.0, opt, eig.eigenvalues().minCoeff());
  if (!res.converged) {
    model.regularized = true;
    model.warnings.push_back(
        "propensity fit did not converge (possible separation); refit with ridge " +
        detail::format_double(opt.ridge));
    res = detail::multinomial_newton(x, cls, active, opt.ridge, opt, eig.eigenvalues().minCoeff());
    if (!res.converged && !res.diverging) {
      throw ConvergenceError("propensity fit did not converge after " +
                             std::to_string(opt.max_iterations) + " iterations");
    }
  }
  model.iterations = res.iterations;
  model.gradient_norm = res.gradient_norm;
  for (std::size_t row = 0; row < 2; ++row) {
    model.coefficients[row].assign(static_cast<std::size_t>(p), 0.0);
    const int r = remap[row];
    if (r < 0) continue;
    model.present[row] = true;
    for (Eigen::Index j = 0; j < p; ++j) {
      model.coefficients[row][static_cast<std::size_t>(j)] = res.beta(r * p + j);
    }
  }
  return model;
}

/// e(X): probability of belonging to the current trial.
inline std::vector<double> score(const PropensityModel& model, std::span<const Subject> subjects) {
  std::vector<double> e;
  e.reserve(subjects.size());
  for (const auto& s : subjects) e.push_back(model.probabilities(s.covariates)[0]);
  return e;
}

/// Odds weights that reweight each external subject to the current-trial
/// covariate distribution (current subjects get 1). Reported for diagnostics.
inline std::vector<double> inverse_probability_weights(const PropensityModel& model,
                                                       std::span<const Subject> subjects) {
  std::vector<double> w;
  w.reserve(subjects.size());
  for (const auto& s : subjects) {
    const auto p = model.probabilities(s.covariates);
    if (s.source == Source::Current) {
      w.push_back(1.0);
    } else {
      const double own = s.source == Source::RealWorld ? p[1] : p[2];
      w.push_back(p[0] / own);
    }
  }
  return w;
}

// ---------------------------------------------------------------------------
// Trimming

struct TrimResult {
  double lower = 0.0;
  double upper = 0.0;
  std::vector<std::size_t> kept_rwd;       // indices into the real-world score list
  std::vector<std::size_t> kept_external;  // indices into the external score list
  std::size_t trimmed_rwd = 0;
  std::size_t trimmed_external = 0;
  bool empty_borrow = false;  // nothing external survived
};

/// Drops real-world and external scores outside [min, max] of the current scores.
inline TrimResult trim(std::span<const double> current, std::span<const double> rwd,
                       std::span<const double> external) {
  if (current.empty()) throw ValidationError("trim: current-trial scores are empty");
  TrimResult out;
  const auto [lo, hi] = std::minmax_element(current.begin(), current.end());
  out.lower = *lo;
  out.upper = *hi;
  for (std::size_t i = 0; i < rwd.size(); ++i) {
    if (rwd[i] >= out.lower && rwd[i] <= out.upper) {
      out.kept_rwd.push_back(i);
    } else {
      ++out.trimmed_rwd;
    }
  }
  for (std::size_t i = 0; i < external.size(); ++i) {
    if (external[i] >= out.lower && external[i] <= out.upper) {
      out.kept_external.push_back(i);
    } else {
      ++out.trimmed_external;
    }
  }
  out.empty_borrow = out.kept_rwd.empty() && out.kept_external.empty();
  return out;
}

// ---------------------------------------------------------------------------
// Stratification

/// Equal-probability quantiles of the current scores; q0 = min, qS = max.
inline std::vector<double> stratum_boundaries(std::span<const double> current, int strata) {
  if (strata < 1) throw ValidationError("stratum count must be at least 1");
  if (static_cast<int>(current.size()) < strata) {
    throw ValidationError("need at least as many current subjects as strata");
  }
  std::vector<double> sorted(current.begin(), current.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> q(static_cast<std::size_t>(strata) + 1);
  q.front() = sorted.front();
  q.back() = sorted.back();
  for (int j = 1; j < strata; ++j) {
    q[static_cast<std::size_t>(j)] = quantile_sorted(sorted, static_cast<double>(j) / strata);
  }
  for (std::size_t j = 1; j < q.size() && strata > 1; ++j) {
    if (!(q[j] > q[j - 1])) {
      throw ValidationError("propensity quantile boundaries are not strictly increasing");
    }
  }
  return q;
}

/// 1-based stratum of a score: [q_{s-1}, q_s) with the last interval closed.
inline int assign_stratum(std::span<const double> boundaries, double score) {
  const auto strata = static_cast<int>(boundaries.size()) - 1;
  if (score < boundaries.front() || score > boundaries.back()) return 0;
  const auto it = std::upper_bound(boundaries.begin() + 1, boundaries.end() - 1, score);
  return std::min(static_cast<int>(it - boundaries.begin()), strata);
}

struct Stratum {
  double lower = 0.0;
  double upper = 0.0;
  // cells[source][arm]
  std::array<std::array<BinomialSummary, 2>, 3> cells{};
  // propensity scores of every retained subject by source (both arms)
  std::array<std::vector<double>, 3> scores;
  bool no_external_information = false;

  const BinomialSummary& cell(Source s, Arm a) const {
    return cells[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)];
  }
  int count(Source s) const {
    return cell(s, Arm::Treatment).n + cell(s, Arm::Control).n;
  }
};

struct StratifiedData {
  int strata_count = 0;
  std::vector<double> boundaries;
  std::vector<Stratum> strata;
  std::size_t trimmed_external = 0;
  std::size_t trimmed_rwd = 0;
  bool empty_borrow = false;

  BinomialSummary total(Source s, Arm a) const {
    BinomialSummary t;
    for (const auto& st : strata) t += st.cell(s, a);
    return t;
  }
};

/// Trims external scores and partitions every retained subject into strata.
/// `scores` is parallel to `subjects`; the assigned stratum (or none when
/// trimmed) is written back to each subject.
inline StratifiedData stratify(std::vector<Subject>& subjects, std::span<const double> scores,
                               int strata) {
  if (scores.size() != subjects.size()) throw ValidationError("stratify: score count mismatch");
  std::array<std::vector<double>, 3> by_source;
  std::array<std::vector<std::size_t>, 3> index_of;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const auto s = static_cast<std::size_t>(subjects[i].source);
    by_source[s].push_back(scores[i]);
    index_of[s].push_back(i);
  }
  const auto& cur = by_source[static_cast<std::size_t>(Source::Current)];
  const auto tr = trim(cur, by_source[static_cast<std::size_t>(Source::RealWorld)],
                       by_source[static_cast<std::size_t>(Source::External)]);

  StratifiedData out;
  out.strata_count = strata;
  out.trimmed_external = tr.trimmed_external;
  out.trimmed_rwd = tr.trimmed_rwd;
  out.empty_borrow = tr.empty_borrow;
  out.boundaries = stratum_boundaries(cur, strata);
  out.strata.resize(static_cast<std::size_t>(strata));
  for (int s = 0; s < strata; ++s) {
    out.strata[static_cast<std::size_t>(s)].lower = out.boundaries[static_cast<std::size_t>(s)];
    out.strata[static_cast<std::size_t>(s)].upper =
        out.boundaries[static_cast<std::size_t>(s) + 1];
  }

  std::vector<bool> keep(subjects.size(), false);
  for (std::size_t i : index_of[static_cast<std::size_t>(Source::Current)]) keep[i] = true;
  for (std::size_t j : tr.kept_rwd) keep[index_of[static_cast<std::size_t>(Source::RealWorld)][j]] = true;
  for (std::size_t j : tr.kept_external) {
    keep[index_of[static_cast<std::size_t>(Source::External)][j]] = true;
  }

  for (std::size_t i = 0; i < subjects.size(); ++i) {
    auto& subj = subjects[i];
    subj.propensity = scores[i];
    if (!keep[i]) {
      subj.stratum.reset();
      continue;
    }
    const int st = assign_stratum(out.boundaries, scores[i]);
    subj.stratum = st;
    auto& stratum = out.strata[static_cast<std::size_t>(st - 1)];
    auto& c = stratum.cells[static_cast<std::size_t>(subj.source)][static_cast<std::size_t>(subj.arm)];
    c.n += 1;
    c.y += subj.outcome;
    stratum.scores[static_cast<std::size_t>(subj.source)].push_back(scores[i]);
  }
  for (auto& st : out.strata) {
    if (st.count(Source::Current) == 0) {
      throw ValidationError("internal error: stratum without current-trial subjects");
    }
    st.no_external_information =
        st.count(Source::External) == 0 && st.count(Source::RealWorld) == 0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Overlap and heterogeneity scales

/// ∫ min(f, g) by the trapezoidal rule on f's grid (g interpolated onto it).
inline double overlap(const DensityEstimate& f, const DensityEstimate& g) {
  DensityEstimate m;
  m.grid = f.grid;
  m.density.resize(f.grid.size());
  const bool same_grid = f.grid == g.grid;
  for (std::size_t i = 0; i < f.grid.size(); ++i) {
    const double gv = same_grid ? g.density[i] : g.at(f.grid[i]);
    m.density[i] = std::min(f.density[i], gv);
  }
  return std::clamp(trapezoid_integral(m), 0.0, 1.0);
}

/// Overlap of two score samples within [lower, upper]; scores are rescaled to
/// the unit interval first. NaN when either sample is too small or constant.
inline double stratum_overlap(std::span<const double> a, std::span<const double> b, double lower,
                              double upper, std::size_t grid_size = 512) {
  auto rescale = [&](std::span<const double> v) {
    std::vector<double> u;
    u.reserve(v.size());
    const double width = upper - lower;
    for (double x : v) u.push_back(width > 0.0 ? std::clamp((x - lower) / width, 0.0, 1.0) : 0.5);
    return u;
  };
  try {
    const auto fa = kde_unit_interval(rescale(a), grid_size, 2);
    const auto fb = kde_unit_interval(rescale(b), grid_size, 2);
    return overlap(fa, fb);
  } catch (const EstimationError&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

struct OverlapScales {
  std::vector<double> r_external;
  std::vector<double> r_rwd;
  double ref_external = std::numeric_limits<double>::quiet_NaN();
  double ref_rwd = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> k_external;  // +inf: source excluded from that stratum
  std::vector<double> k_rwd;
};

namespace detail {
inline void scales_for(const std::vector<double>& r, double& ref, std::vector<double>& k) {
  std::vector<double> positive;
  for (double v : r) {
    if (std::isfinite(v) && v > 0.0) positive.push_back(v);
  }
  k.assign(r.size(), 1.0);
  if (positive.empty()) {
    for (std::size_t s = 0; s < r.size(); ++s) {
      if (r[s] == 0.0) k[s] = kInf;
    }
    return;
  }
  ref = median_of(positive);
  for (std::size_t s = 0; s < r.size(); ++s) {
    if (std::isnan(r[s])) {
      k[s] = 1.0;
    } else if (r[s] <= 0.0) {
      k[s] = kInf;
    } else {
      k[s] = ref / r[s];
    }
  }
}
}  // namespace detail

/// k_s = r_ref / r_s with r_ref the median of the (positive) stratum overlaps.
/// A zero overlap yields +inf; an undefined (NaN) overlap yields the neutral 1.
inline OverlapScales half_normal_scales(std::vector<double> r_external, std::vector<double> r_rwd) {
  OverlapScales out;
  out.r_external = std::move(r_external);
  out.r_rwd = std::move(r_rwd);
  detail::scales_for(out.r_external, out.ref_external, out.k_external);
  detail::scales_for(out.r_rwd, out.ref_rwd, out.k_rwd);
  return out;
}

inline OverlapScales stratum_overlap_scales(const StratifiedData& sd, std::size_t grid_size = 512) {
  std::vector<double> rex;
  std::vector<double> rrw;
  for (const auto& st : sd.strata) {
    const auto& cur = st.scores[static_cast<std::size_t>(Source::Current)];
    const auto& ex = st.scores[static_cast<std::size_t>(Source::External)];
    const auto& rw = st.scores[static_cast<std::size_t>(Source::RealWorld)];
    rex.push_back(ex.empty() ? 0.0 : stratum_overlap(ex, cur, st.lower, st.upper, grid_size));
    rrw.push_back(rw.empty() ? 0.0 : stratum_overlap(rw, cur, st.lower, st.upper, grid_size));
  }
  return half_normal_scales(std::move(rex), std::move(rrw));
}

/// Propensity model, strata and half-normal scales for one dataset.
struct PropensityStratification {
  PropensityModel model;
  StratifiedData strata;
  OverlapScales scales;
  std::vector<Subject> subjects;  // with propensity and stratum filled in
};

inline PropensityStratification propensity_stratify(const Dataset& ds, int strata,
                                                    const PropensityFitOptions& opt = {}) {
  PropensityStratification out;
  out.subjects = ds.subjects;
  std::array<int, 3> counts = {0, 0, 0};
  for (const auto& s : ds.subjects) ++counts[static_cast<std::size_t>(s.source)];
  // Without a comparison source or covariates every score is the same constant.
  std::vector<double> e(out.subjects.size(), 0.5);
  if (counts[1] + counts[2] > 0 && ds.covariate_count() > 0) {
    out.model = fit_propensity(ds, opt);
    e = score(out.model, out.subjects);
  } else if (strata > 1) {
    throw ValidationError("stratification needs covariates and an external or real-world source");
  }
  out.strata = stratify(out.subjects, e, strata);
  out.scales = stratum_overlap_scales(out.strata);
  return out;
}

inline void write_stratum_report(std::ostream& out, const PropensityStratification& ps) {
  out << "stratum,lower,upper,n_current,n_external,n_rwd,r_external,r_rwd,k_external,k_rwd,"
         "trimmed_external,trimmed_rwd\n";
  const auto& sd = ps.strata;
  for (std::size_t s = 0; s < sd.strata.size(); ++s) {
    const auto& st = sd.strata[s];
    out << (s + 1) << ',' << detail::format_double(st.lower) << ','
        << detail::format_double(st.upper) << ',' << st.count(Source::Current) << ','
        << st.count(Source::External) << ',' << st.count(Source::RealWorld) << ','
        << detail::format_double(ps.scales.r_external[s]) << ','
        << detail::format_double(ps.scales.r_rwd[s]) << ','
        << detail::format_double(ps.scales.k_external[s]) << ','
        << detail::format_double(ps.scales.k_rwd[s]) << ',' << sd.trimmed_external << ','
        << sd.trimmed_rwd << '\n';
  }
}

}  // namespace eqps
