#include <gtest/gtest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>

#include "eqps/mixture.hpp"
#include "oracles.hpp"

using namespace eqps;

namespace {
double integrate01(const std::function<double(double)>& f) {
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, 0.0, 1.0, 15, 1e-12);
}

double beta_var(double a, double b) { return a * b / ((a + b) * (a + b) * (a + b + 1.0)); }
}  // namespace

TEST(Robustify, Endpoints) {
  const auto inf = robustify({{1.0, 4.0, 6.0}}, VagueComponent::uniform(), 0.0);
  EXPECT_DOUBLE_EQ(inf.density(0.3), oracle::beta_density(0.3, 4.0, 6.0));
  EXPECT_NEAR(inf.density(0.3), oracle::beta_density(0.3, 4.0, 6.0), 1e-12);
  const auto vague = robustify({{1.0, 4.0, 6.0}}, VagueComponent::jeffreys(), 1.0);
  EXPECT_NEAR(vague.density(0.3), oracle::beta_density(0.3, 0.5, 0.5), 1e-12);
  EXPECT_THROW(robustify({{1.0, 2.0, 2.0}}, VagueComponent::uniform(), 1.5), ValidationError);
  EXPECT_THROW(robustify({{0.6, 2.0, 2.0}}, VagueComponent::uniform(), 0.5), ValidationError);
  EXPECT_THROW(robustify({{1.0, -2.0, 2.0}}, VagueComponent::uniform(), 0.5), ValidationError);
}

TEST(Robustify, HalfWeightDensityAtCenter) {
  const auto m = robustify({{1.0, 2.0, 2.0}}, VagueComponent::uniform(), 0.5);
  EXPECT_NEAR(m.density(0.5), 1.25, 1e-14);
}

TEST(Robustify, DensityIntegratesToOne) {
  const auto m = robustify({{0.3, 2.0, 9.0}, {0.7, 12.0, 4.0}}, VagueComponent::uniform(), 0.2);
  EXPECT_NEAR(integrate01([&](double x) { return m.density(x); }), 1.0, 1e-6);
}

TEST(PosteriorUpdate, ConjugateSingleComponent) {
  const auto prior = robustify({{1.0, 2.5, 7.5}}, VagueComponent::uniform(), 0.0);
  const auto post = posterior_update(prior, make_summary(13, 40));
  ASSERT_EQ(post.components.size(), 1u);
  EXPECT_EQ(post.components[0].a, 15.5);
  EXPECT_EQ(post.components[0].b, 34.5);
  EXPECT_EQ(post.components[0].weight, 1.0);
  EXPECT_EQ(post.omega, 0.0);
}

TEST(PosteriorUpdate, WorkedWeightExample) {
  const auto prior = robustify({{1.0, 2.0, 2.0}}, VagueComponent::uniform(), 0.5);
  const auto post = posterior_update(prior, make_summary(1, 2));
  // f0 = 1/6 and f1 = 1/5 give 5/11.
  EXPECT_NEAR(post.omega, 5.0 / 11.0, 1e-15);
  EXPECT_NEAR(post.omega, 0.454545, 1e-6);
  EXPECT_EQ(post.vague.a, 2.0);
  EXPECT_EQ(post.vague.b, 2.0);
}

TEST(PosteriorUpdate, WeightsMatchQuadratureMarginals) {
  const std::vector<BetaComponent> comps{{0.25, 3.0, 12.0}, {0.75, 20.0, 8.0}};
  for (double omega : {0.1, 0.5, 0.9}) {
    for (auto [y, n] : {std::pair{3, 10}, std::pair{30, 50}, std::pair{0, 7}}) {
      const auto post = posterior_update(robustify(comps, VagueComponent::uniform(), omega),
                                         make_summary(y, n));
      const double f0 = oracle::beta_binomial_marginal(1.0, 1.0, y, n);
      double inf = 0.0;
      std::vector<double> fk;
      for (const auto& c : comps) {
        fk.push_back(c.weight * oracle::beta_binomial_marginal(c.a, c.b, y, n));
        inf += fk.back();
      }
      const double expected = omega * f0 / ((1.0 - omega) * inf + omega * f0);
      EXPECT_NEAR(post.omega, expected, 1e-8) << omega << " " << y << "/" << n;
      for (std::size_t k = 0; k < comps.size(); ++k) {
        EXPECT_NEAR(post.components[k].weight, fk[k] / inf, 1e-8);
      }
    }
  }
}

TEST(PosteriorUpdate, AbsorbingVagueWeight) {
  const auto post = posterior_update(robustify({{1.0, 2.0, 2.0}}, VagueComponent::uniform(), 1.0),
                                     make_summary(90, 100));
  EXPECT_EQ(post.omega, 1.0);
}

TEST(PosteriorUpdate, OrderEquivalence) {
  const auto prior = robustify({{1.0, 1.7, 3.2}}, VagueComponent::uniform(), 0.0);
  const auto two = posterior_update(posterior_update(prior, make_summary(4, 11)), make_summary(9, 20));
  const auto one = posterior_update(prior, make_summary(13, 31));
  EXPECT_EQ(two.components[0].a, one.components[0].a);
  EXPECT_EQ(two.components[0].b, one.components[0].b);
}

TEST(PosteriorUpdate, LargeCountsStayFinite) {
  const auto prior = robustify({{0.5, 30.0, 70.0}, {0.5, 70.0, 30.0}}, VagueComponent::uniform(), 0.3);
  const auto post = posterior_update(prior, make_summary(3000, 10000));
  EXPECT_TRUE(std::isfinite(post.omega));
  EXPECT_NEAR(post.components[0].weight, 1.0, 1e-12);
}

TEST(MixtureStats, Uniform) {
  const auto m = robustify({}, VagueComponent::uniform(), 1.0);
  EXPECT_DOUBLE_EQ(m.mean(), 0.5);
  EXPECT_NEAR(m.cdf(0.25), 0.25, 1e-15);
  EXPECT_THROW(m.quantile(0.0), DomainError);
  EXPECT_THROW(m.quantile(1.0), DomainError);
}

TEST(MixtureStats, SymmetricPairAndQuantileInverse) {
  const auto m = robustify({{0.5, 9.0, 1.0}, {0.5, 1.0, 9.0}}, VagueComponent::uniform(), 0.0);
  EXPECT_NEAR(m.mean(), 0.5, 1e-15);
  const auto r = robustify({{0.4, 3.0, 8.0}, {0.6, 25.0, 5.0}}, VagueComponent::uniform(), 0.15);
  for (double q : {0.01, 0.5, 0.99}) EXPECT_NEAR(r.cdf(r.quantile(q)), q, 1e-8);
  EXPECT_NEAR(r.cdf(0.4), 0.15 * 0.4 + 0.85 * (0.4 * oracle::beta_cdf(0.4, 3, 8) +
                                                0.6 * oracle::beta_cdf(0.4, 25, 5)),
              1e-10);
}

TEST(MixtureStats, SamplerMatchesAnalyticMean) {
  const auto m = robustify({{0.4, 3.0, 8.0}, {0.6, 25.0, 5.0}}, VagueComponent::uniform(), 0.15);
  RngStream rng(77, 0);
  double s = 0.0;
  const int n = 1000000;
  for (int i = 0; i < n; ++i) s += m.sample(rng);
  EXPECT_NEAR(s / n, m.mean(), 0.002);
}

TEST(EffectiveSampleSize, MomentIdentities) {
  EXPECT_NEAR(prior_effective_sample_size(robustify({{1.0, 10.0, 10.0}}, {}, 0.0)).value, 20.0, 1e-10);
  EXPECT_NEAR(prior_effective_sample_size(robustify({}, {}, 1.0)).value, 2.0, 1e-12);
  const auto mix = prior_effective_sample_size(robustify({{1.0, 10.0, 10.0}}, {}, 0.5));
  // Equal means: mixture variance is the average of the component variances.
  const double v = 0.5 * beta_var(10, 10) + 0.5 * beta_var(1, 1);
  EXPECT_NEAR(mix.value, 0.25 / v - 1.0, 1e-10);
  EXPECT_NEAR(mix.value, 4.25, 1e-10);
  EXPECT_FALSE(mix.degenerate);
}

TEST(EffectiveSampleSize, DegenerateFlag) {
  const auto m = robustify({{0.5, 1e-3, 1.0}, {0.5, 1.0, 1e-3}}, {}, 0.0);
  const auto ess = prior_effective_sample_size(m);
  EXPECT_GE(ess.value, 0.0);
  EXPECT_LT(ess.value, 0.01);
}

TEST(FitBetaMixture, SingleBetaSelectsOneComponent) {
  RngStream rng(31, 0);
  std::vector<double> s(10000);
  for (double& v : s) v = rng.beta(3, 7);
  const auto fit = fit_beta_mixture(s);
  ASSERT_EQ(fit.components.size(), 1u);
  EXPECT_NEAR(fit.components[0].mean(), 0.3, 0.02);
  EXPECT_EQ(fit.candidates.size(), 3u);
  for (const auto& c : fit.candidates) {
    EXPECT_TRUE(c.monotone);
    for (std::size_t i = 1; i < c.trace.size(); ++i) {
      EXPECT_GE(c.trace[i], c.trace[i - 1] - 1e-9 * std::fabs(c.trace[i - 1]));
    }
  }
}

TEST(FitBetaMixture, TwoWellSeparatedComponents) {
  RngStream rng(32, 0);
  std::vector<double> s(10000);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = i % 2 ? rng.beta(20, 5) : rng.beta(5, 20);
  const auto fit = fit_beta_mixture(s);
  ASSERT_EQ(fit.components.size(), 2u);
  std::vector<double> means{fit.components[0].mean(), fit.components[1].mean()};
  std::sort(means.begin(), means.end());
  EXPECT_NEAR(means[0], 0.2, 0.05);
  EXPECT_NEAR(means[1], 0.8, 0.05);
  double total = 0.0;
  for (const auto& c : fit.components) total += c.weight;
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(FitBetaMixture, BicOptionAndThinning) {
  RngStream rng(33, 0);
  std::vector<double> s(20000);
  for (double& v : s) v = rng.beta(4, 4);
  MixtureFitOptions opt;
  opt.criterion = SelectionCriterion::BIC;
  opt.max_samples = 0;
  const auto fit = fit_beta_mixture(s, opt);
  ASSERT_EQ(fit.components.size(), 1u);
  EXPECT_NEAR(fit.components[0].a, 4.0, 0.15);
  EXPECT_NEAR(fit.components[0].b, 4.0, 0.15);
}

TEST(FitBetaMixture, ErrorPaths) {
  std::vector<double> few(50, 0.3);
  EXPECT_THROW(fit_beta_mixture(few), EstimationError);
  std::vector<double> ones(200, 1.0);
  EXPECT_THROW(fit_beta_mixture(ones), EstimationError);  // clamps, then degenerate
  std::vector<double> bad(200, 0.5);
  bad[3] = 1.5;
  EXPECT_THROW(fit_beta_mixture(bad), DomainError);
  RngStream rng(1, 0);
  std::vector<double> edge(500);
  for (double& v : edge) v = rng.beta(0.3, 2.0);
  edge[0] = 0.0;
  const auto fit = fit_beta_mixture(edge);
  EXPECT_TRUE(fit.clamped);
  EXPECT_FALSE(fit.warnings.empty());
}
