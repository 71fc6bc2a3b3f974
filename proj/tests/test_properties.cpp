#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "eqps/eqps.hpp"
#include "eqps/simulation.hpp"

using namespace eqps;

namespace {
double ks_statistic(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::fabs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  return d;
}

std::vector<double> thin(const std::vector<double>& v, std::size_t step) {
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); i += step) out.push_back(v[i]);
  return out;
}

double sd_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / (v.size() - 1));
}

McmcConfig chains(int c) {
  McmcConfig cfg;
  cfg.chains = c;
  cfg.iterations = 6000;
  cfg.burn_in = 1000;
  return cfg;
}
}  // namespace

// Swapping the two borrowed sources swaps their marginal posteriors.
TEST(HierarchyProperty, ExchangeSymmetry) {
  HierarchicalSpec a, b;
  a.strata = {{make_summary(30, 80), make_summary(45, 70), 0.6, 1.4}};
  b.strata = {{make_summary(45, 70), make_summary(30, 80), 1.4, 0.6}};
  const auto da = sample_hierarchy(a, chains(4), RngStream(11, 0));
  const auto db = sample_hierarchy(b, chains(4), RngStream(12, 0));
  // Thinning by 25 leaves nearly independent draws for the KS test.
  const auto x1 = thin(da.strata[0].theta_external, 25);
  const auto y1 = thin(db.strata[0].theta_rwd, 25);
  const auto x2 = thin(da.strata[0].theta_rwd, 25);
  const auto y2 = thin(db.strata[0].theta_external, 25);
  const double n = static_cast<double>(x1.size());
  const double crit = 1.628 * std::sqrt(2.0 / n);  // 1% level
  EXPECT_LT(ks_statistic(x1, y1), crit);
  EXPECT_LT(ks_statistic(x2, y2), crit);
}

TEST(HierarchyProperty, HeterogeneityMonotonicity) {
  const double scales[] = {0.1, 0.5, 2.0};
  std::vector<double> mean_sd;
  for (double k : scales) {
    double s = 0.0;
    const int seeds = 4;
    for (int seed = 0; seed < seeds; ++seed) {
      HierarchicalSpec spec;
      spec.strata = {{make_summary(12, 40), make_summary(30, 40), k, k}};
      s += sd_of(sample_hierarchy(spec, chains(2), RngStream(20 + seed, 0)).strata[0].theta_external);
    }
    mean_sd.push_back(s / seeds);
  }
  EXPECT_LT(mean_sd[0], mean_sd[1]);
  EXPECT_LT(mean_sd[1], mean_sd[2]);
}

TEST(HierarchyProperty, ChainCountInvariance) {
  HierarchicalSpec spec;
  spec.strata = {{make_summary(25, 60), make_summary(40, 60), 0.8, 0.8}};
  const auto two = sample_hierarchy(spec, chains(2), RngStream(31, 0));
  const auto five = sample_hierarchy(spec, chains(5), RngStream(32, 0));
  for (auto field : {&StratumDraws::theta_external, &StratumDraws::theta_rwd}) {
    const auto& a = two.strata[0].*field;
    const auto& b = five.strata[0].*field;
    const double se_a = sd_of(a) / std::sqrt(effective_draws(a, 2));
    const double se_b = sd_of(b) / std::sqrt(effective_draws(b, 5));
    EXPECT_LT(std::fabs(mean_of(a) - mean_of(b)), 3.0 * std::hypot(se_a, se_b));
  }
}

TEST(MixtureProperty, UpdateOrderWithManyComponents) {
  RngStream rng(41, 0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<BetaComponent> comps;
    const int k = 1 + trial % 3;
    for (int i = 0; i < k; ++i) comps.push_back({1.0 / k, 0.5 + 20.0 * rng.uniform(), 0.5 + 20.0 * rng.uniform()});
    const auto prior = robustify(comps, VagueComponent::uniform(), rng.uniform());
    const int n1 = 1 + static_cast<int>(30 * rng.uniform());
    const int n2 = 1 + static_cast<int>(30 * rng.uniform());
    const auto d1 = make_summary(static_cast<int>(n1 * rng.uniform()), n1);
    const auto d2 = make_summary(static_cast<int>(n2 * rng.uniform()), n2);
    const auto ab = posterior_update(posterior_update(prior, d1), d2);
    const auto ba = posterior_update(posterior_update(prior, d2), d1);
    const auto joint = posterior_update(prior, make_summary(d1.y + d2.y, n1 + n2));
    EXPECT_NEAR(ab.omega, ba.omega, 1e-10);
    EXPECT_NEAR(ab.omega, joint.omega, 1e-10);
    for (int i = 0; i < k; ++i) {
      EXPECT_NEAR(ab.components[i].weight, joint.components[i].weight, 1e-10);
      EXPECT_NEAR(ab.components[i].a, joint.components[i].a, 1e-12);
      EXPECT_NEAR(ab.components[i].b, joint.components[i].b, 1e-12);
    }
  }
}

// Under common random numbers p rises towards the current-data-only value as
// the vague weight grows.
TEST(EqpsProperty, SweepNonDecreasingInOmega) {
  struct Case {
    std::vector<BetaComponent> prior;
    BinomialSummary current;
  };
  const std::vector<Case> cases{
      {{{1.0, 30.0, 70.0}}, make_summary(45, 100)},
      {{{1.0, 80.0, 20.0}}, make_summary(50, 100)},
      {{{0.5, 20.0, 30.0}, {0.5, 60.0, 20.0}}, make_summary(30, 80)},
      {{{1.0, 12.0, 8.0}}, make_summary(28, 60)},
  };
  for (auto stage : {SearchStage::Prior, SearchStage::PosteriorFixedWeight, SearchStage::PosteriorUpdatedWeight}) {
    for (const auto& c : cases) {
      EqpsConfig cfg;
      cfg.stage = stage;
      cfg.lambda = 0.999;  // sweep the full grid
      RngStream rng(51, 0);
      const auto res = find_omega_eq(c.prior, c.current, cfg, rng);
      for (std::size_t g = 1; g < res.sweep.size(); ++g) {
        const double p = res.sweep[g - 1].p;
        const double se = std::sqrt(std::max(p * (1.0 - p), 1e-12) / cfg.mc_draws);
        EXPECT_GE(res.sweep[g].p, p - 2.0 * se) << "stage " << static_cast<int>(stage) << " omega "
                                                << res.sweep[g].omega;
      }
    }
  }
}

TEST(EqpsProperty, BoundaryWeightGivesVagueConjugatePosterior) {
  EqpsConfig cfg;
  cfg.lambda = 0.999999;
  for (auto cur : {make_summary(3, 50), make_summary(49, 50)}) {
    RngStream rng(61, 0);
    const auto res = find_omega_eq({{1.0, 300.0, 30.0}}, cur, cfg, rng);
    EXPECT_EQ(res.omega_eq, 1.0);
    EXPECT_EQ(res.omega_hat, 1.0);
    EXPECT_EQ(res.posterior.vague.a, cfg.vague.a + cur.y);
    EXPECT_EQ(res.posterior.vague.b, cfg.vague.b + cur.n - cur.y);
    EXPECT_DOUBLE_EQ(res.posterior.mean(), (cfg.vague.a + cur.y) / (cfg.vague.a + cfg.vague.b + cur.n));
  }
}

TEST(EqpsProperty, EssNonIncreasingInOmega) {
  const std::vector<std::vector<BetaComponent>> priors{
      {{1.0, 30.0, 70.0}}, {{0.5, 20.0, 30.0}, {0.5, 60.0, 20.0}}, {{1.0, 2.0, 2.0}}};
  for (const auto& comps : priors) {
    double last = kInf;
    for (int g = 0; g <= 100; ++g) {
      const double ess = prior_effective_sample_size(robustify(comps, VagueComponent::uniform(), g / 100.0)).value;
      EXPECT_LE(ess, last + 1e-9);
      last = ess;
    }
  }
}

TEST(EqpsProperty, StratumWeightNormalization) {
  ScenarioConfig cfg;
  cfg.set_baseline_shift(0.5);
  cfg.beta3 = 0.3;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    RngStream rng(70 + seed, 0);
    const auto ds = generate_dataset(cfg, rng);
    const auto ps = propensity_stratify(ds, 5);
    for (Arm arm : {Arm::Treatment, Arm::Control}) {
      const auto w = stratum_weights(ps.strata, ps.scales, arm);
      double share = 0.0;
      for (const auto& s : w.strata) {
        share += s.current_share;
        if (!s.no_borrow) EXPECT_EQ(s.w_external + s.w_rwd, 1.0);
      }
      EXPECT_NEAR(share, 1.0, 1e-15);
    }
  }
}

TEST(PropensityProperty, StratificationIsAPartition) {
  ScenarioConfig cfg;
  cfg.set_baseline_shift(0.5);
  RngStream rng(81, 0);
  const auto ds = generate_dataset(cfg, rng);
  const auto ps = propensity_stratify(ds, 5);
  std::array<int, 3> assigned{}, retained{};
  for (const auto& s : ps.subjects) {
    if (s.stratum) {
      ASSERT_GE(*s.stratum, 1);
      ASSERT_LE(*s.stratum, 5);
      ++assigned[static_cast<std::size_t>(s.source)];
    }
  }
  for (const auto& st : ps.strata.strata) {
    for (Source src : {Source::Current, Source::External, Source::RealWorld}) {
      retained[static_cast<std::size_t>(src)] += st.count(src);
    }
  }
  EXPECT_EQ(assigned, retained);
  EXPECT_EQ(retained[0], 2 * cfg.n_current);
  EXPECT_EQ(retained[1] + static_cast<int>(ps.strata.trimmed_external), 2 * cfg.n_external);
  EXPECT_EQ(retained[2] + static_cast<int>(ps.strata.trimmed_rwd), cfg.n_rwd);
}

TEST(SimulationProperty, MseDominatesSquaredBiasAndRerunsAgree) {
  ScenarioConfig cfg;
  cfg.n_current = cfg.n_external = cfg.n_rwd = 50;
  cfg.beta1 = 0.4;
  cfg.beta3 = cfg.beta4 = 0.5;
  std::vector<AnalysisVariant> variants(3);
  variants[0].method = Method::NoBorrow;
  variants[1].method = Method::Map;
  variants[2].method = Method::Eqps;
  SimulationOptions opt;
  opt.replicates = 6;
  opt.seed = 5;
  opt.analysis.mcmc.iterations = 2000;
  opt.analysis.mcmc.burn_in = 500;
  const auto recs = run_replicates(cfg, variants, opt);
  const double truth = true_risk_difference(cfg);
  std::vector<ScenarioSummary> sums;
  for (std::size_t v = 0; v < variants.size(); ++v) {
    sums.push_back(summarize_records(std::span<const ResultRecord>(recs).subspan(v * 6, 6), truth));
    EXPECT_GE(sums.back().mse, sums.back().bias * sums.back().bias);
  }
  std::ostringstream a, b;
  write_records_csv(a, recs, false);
  write_records_csv(b, run_replicates(cfg, variants, opt), false);
  EXPECT_EQ(a.str(), b.str());
}
