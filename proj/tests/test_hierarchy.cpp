#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numbers>
#include <sstream>

#include "eqps/hierarchy.hpp"

using namespace eqps;

namespace {
double log_binom_lik(double theta, int y, int n) {
  // y log p + (n - y) log(1 - p) on the logit scale, stable in both tails.
  return -y * std::log1p(std::exp(-theta)) - (n - y) * std::log1p(std::exp(theta));
}

// Posterior mean of theta for log prior `lp` and binomial data, by dense grid.
double grid_posterior_mean(int y, int n, const std::function<double(double)>& lp) {
  const int m = 40001;
  const double lo = -15.0, hi = 15.0, h = (hi - lo) / (m - 1);
  std::vector<double> lw(m);
  double top = -1e300;
  for (int i = 0; i < m; ++i) {
    const double t = lo + i * h;
    lw[i] = lp(t) + log_binom_lik(t, y, n);
    top = std::max(top, lw[i]);
  }
  double z = 0.0, s = 0.0;
  for (int i = 0; i < m; ++i) {
    const double w = std::exp(lw[i] - top);
    z += w;
    s += w * (lo + i * h);
  }
  return s / z;
}

double half_normal_pdf(double t, double k) {
  return std::sqrt(2.0 / std::numbers::pi) / k * std::exp(-0.5 * t * t / (k * k));
}

double normal_pdf(double x, double m, double sd) {
  const double z = (x - m) / sd;
  return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * std::numbers::pi));
}

double mean(const std::vector<double>& v) { return mean_of(v); }

McmcConfig quick() {
  McmcConfig c;
  c.chains = 4;
  c.iterations = 6000;
  c.burn_in = 1000;
  return c;
}
}  // namespace

TEST(McmcConfig, Validation) {
  EXPECT_NO_THROW(McmcConfig::desk().validate());
  EXPECT_EQ(McmcConfig::full().chains, 5);
  EXPECT_EQ(McmcConfig::full().draws_per_chain(), 40000);
  McmcConfig c;
  c.chains = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.burn_in = c.iterations;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.thin = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.thin = 3;
  EXPECT_EQ(c.draws_per_chain(), 1334);
}

TEST(HierarchicalModel, Validation) {
  HierarchicalModel m;
  m.groups = {make_summary(3, 10)};
  m.tau_of_group = {0};
  m.tau_scales = {1.0};
  EXPECT_NO_THROW(m.validate());
  m.tau_scales = {kInf};
  EXPECT_THROW(m.validate(), ValidationError);
  m.tau_scales = {1.0};
  m.tau_of_group = {1};
  EXPECT_THROW(m.validate(), ValidationError);
  m.tau_of_group = {0};
  m.groups = {BinomialSummary{}};
  EXPECT_THROW(m.validate(), ValidationError);
}

TEST(Diagnostics, RhatAndEffectiveDraws) {
  RngStream rng(8, 0);
  const int chains = 4, len = 5000;
  std::vector<double> iid(chains * len), shifted(chains * len), ar(chains * len);
  for (auto& v : iid) v = rng.normal();
  for (int c = 0; c < chains; ++c) {
    double x = 0.0;
    for (int i = 0; i < len; ++i) {
      shifted[c * len + i] = rng.normal() + 2.0 * c;
      x = 0.9 * x + std::sqrt(1.0 - 0.81) * rng.normal();
      ar[c * len + i] = x;
    }
  }
  EXPECT_NEAR(split_rhat(iid, chains), 1.0, 0.01);
  EXPECT_GT(split_rhat(shifted, chains), 1.5);
  EXPECT_NEAR(effective_draws(iid, chains) / (chains * len), 1.0, 0.1);
  // AR(1) with rho = 0.9: integrated autocorrelation time (1 + rho) / (1 - rho) = 19.
  EXPECT_NEAR(effective_draws(ar, chains) / (chains * len), 1.0 / 19.0, 0.015);
}

TEST(SampleHierarchy, NearZeroScalePools) {
  HierarchicalSpec spec;
  spec.strata = {{make_summary(160, 200), make_summary(40, 200), 1e-6, 1e-6}};
  const auto d = sample_hierarchy(spec, quick(), RngStream(1, 0));
  const auto& s = d.strata[0];
  double diff = 0.0;
  for (std::size_t i = 0; i < s.theta_external.size(); ++i) diff += s.theta_external[i] - s.theta_rwd[i];
  EXPECT_LT(std::fabs(diff / s.theta_external.size()), 0.05);
}

TEST(SampleHierarchy, LargeScaleGivesIndependentPosteriors) {
  HierarchicalSpec spec;
  spec.strata = {{make_summary(160, 200), make_summary(40, 200), 1e3, 1e3}};
  const auto d = sample_hierarchy(spec, quick(), RngStream(2, 0));
  const auto flat = [](double) { return 0.0; };
  EXPECT_NEAR(mean(d.strata[0].theta_external), grid_posterior_mean(160, 200, flat), 0.1);
  EXPECT_NEAR(mean(d.strata[0].theta_rwd), grid_posterior_mean(40, 200, flat), 0.1);
  EXPECT_LT(d.max_rhat(), 1.05);
}

TEST(SampleHierarchy, SingleSourceMatchesQuadrature) {
  HierarchicalSpec spec;
  spec.strata = {{make_summary(12, 40), BinomialSummary{}, 1.0, 1.0}};
  const auto d = sample_hierarchy(spec, quick(), RngStream(3, 0));
  ASSERT_TRUE(d.strata[0].has_external);
  ASSERT_FALSE(d.strata[0].has_rwd);
  // Marginal prior on theta: N(0, 10^2 + tau^2) averaged over tau ~ half-normal(1).
  const auto log_prior = [](double t) {
    double s = 0.0;
    const int m = 400;
    for (int i = 0; i < m; ++i) {
      const double tau = (i + 0.5) * 8.0 / m;
      s += half_normal_pdf(tau, 1.0) * normal_pdf(t, 0.0, std::sqrt(100.0 + tau * tau)) * 8.0 / m;
    }
    return std::log(s);
  };
  EXPECT_NEAR(mean(d.strata[0].theta_external), grid_posterior_mean(12, 40, log_prior), 0.02);
}

TEST(SampleHierarchy, ExtremeCountsAndInvariants) {
  HierarchicalSpec spec;
  spec.strata = {{make_summary(0, 50), make_summary(30, 30), 0.5, 0.5},
                 {make_summary(5, 10), make_summary(4, 10), kInf, 0.5},
                 {make_summary(5, 10), make_summary(4, 10), kInf, kInf}};
  const auto d = sample_hierarchy(spec, quick(), RngStream(4, 0));
  ASSERT_EQ(d.strata.size(), 3u);
  EXPECT_FALSE(d.strata[1].has_external);
  EXPECT_TRUE(d.strata[1].has_rwd);
  EXPECT_FALSE(d.strata[2].included());
  for (const auto* v : {&d.strata[0].theta_external, &d.strata[0].theta_rwd, &d.strata[0].mu,
                        &d.strata[0].tau_external, &d.strata[0].tau_rwd}) {
    ASSERT_EQ(v->size(), d.size());
    for (double x : *v) ASSERT_TRUE(std::isfinite(x));
  }
  for (double t : d.strata[0].tau_rwd) ASSERT_GE(t, 0.0);
  EXPECT_LT(mean(d.strata[0].theta_external), mean(d.strata[0].theta_rwd));
}

TEST(SampleHierarchy, Deterministic) {
  HierarchicalSpec spec;
  spec.strata = {{make_summary(20, 50), make_summary(30, 50), 0.5, 0.5}};
  McmcConfig cfg = quick();
  const auto a = sample_hierarchy(spec, cfg, RngStream(5, 0));
  cfg.parallel_chains = true;
  const auto b = sample_hierarchy(spec, cfg, RngStream(5, 0));
  EXPECT_EQ(a.strata[0].theta_external, b.strata[0].theta_external);
  EXPECT_EQ(a.strata[0].tau_rwd, b.strata[0].tau_rwd);
}

TEST(SampleUnstratifiedMap, DegeneratePooling) {
  const std::vector<BinomialSummary> h{make_summary(30000, 100000)};
  const auto d = sample_unstratified_map(h, 1e-6, quick(), RngStream(6, 0));
  EXPECT_NEAR(mean(d.theta_star), logit(0.3), 0.02);
}

TEST(SampleUnstratifiedMap, IdenticalHistoriesCenter) {
  const std::vector<BinomialSummary> h{make_summary(30, 100), make_summary(30, 100)};
  const auto d = sample_unstratified_map(h, 0.5, quick(), RngStream(7, 0));
  EXPECT_NEAR(mean(d.theta_star), logit(0.3), 0.05);
  EXPECT_THROW(sample_unstratified_map({}, 0.5, quick(), RngStream(7, 0)), ValidationError);
}

TEST(SampleUnstratifiedMap, MatchesGridQuadrature) {
  const std::vector<BinomialSummary> h{make_summary(30, 100), make_summary(50, 100)};
  McmcConfig cfg = quick();
  cfg.iterations = 11000;
  const auto d = sample_unstratified_map(h, 0.5, cfg, RngStream(8, 0));
  // E[theta_*] = E[mu]; integrate theta_h analytically over a z-grid, then (mu, tau).
  double z = 0.0, s = 0.0;
  const int nm = 241, nt = 160, nz = 161;
  for (int i = 0; i < nm; ++i) {
    const double mu = -3.0 + 4.0 * i / (nm - 1);
    for (int j = 0; j < nt; ++j) {
      const double tau = (j + 0.5) * 2.5 / nt;
      double lw = std::log(normal_pdf(mu, 0.0, 10.0) * half_normal_pdf(tau, 0.5));
      for (const auto& g : h) {
        double inner = 0.0;
        for (int k = 0; k < nz; ++k) {
          const double zz = -8.0 + 16.0 * k / (nz - 1);
          inner += normal_pdf(zz, 0.0, 1.0) * std::exp(log_binom_lik(mu + tau * zz, g.y, g.n) + 60.0);
        }
        lw += std::log(inner);
      }
      const double w = std::exp(lw);
      z += w;
      s += w * mu;
    }
  }
  const double ref = s / z;
  EXPECT_GT(ref, logit(0.3));
  EXPECT_LT(ref, logit(0.5));
  EXPECT_NEAR(mean(d.theta_star), ref, 0.03);
}

TEST(WriteDrawsCsv, Layout) {
  HierarchicalSpec spec;
  spec.strata = {{make_summary(5, 10), BinomialSummary{}, 1.0, 1.0}};
  McmcConfig cfg;
  cfg.chains = 2;
  cfg.iterations = 5;
  cfg.burn_in = 2;
  const auto d = sample_hierarchy(spec, cfg, RngStream(9, 0));
  std::ostringstream out;
  write_draws_csv(out, d);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "chain,iteration,parameter,stratum,value");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 3 * 2 * 3);  // theta, mu, tau for 2 chains x 3 draws
}
