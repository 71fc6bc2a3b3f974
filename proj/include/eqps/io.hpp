#pragma once

// JSON forms of configurations, mixtures, aggregate tables and analysis
// reports. Readers start from defaults, overwrite the keys present and reject
// unknown keys.

#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "eqps/comparators.hpp"
#include "eqps/data.hpp"
#include "eqps/errors.hpp"
#include "eqps/mixture.hpp"
#include "eqps/simulation.hpp"

namespace eqps {

using json = nlohmann::ordered_json;

namespace detail {

class ObjectReader {
 public:
  ObjectReader(const json& j, std::string context) : j_(j), context_(std::move(context)) {
    if (!j_.is_object()) throw ConfigError(context_ + ": expected a JSON object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  template <class T>
  void get(const char* key, T& out) {
    used_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(context_ + "." + key + ": wrong type");
    }
  }

  const json& child(const char* key) {
    used_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!used_.contains(key)) throw ConfigError(context_ + ": unknown key '" + key + "'");
    }
  }

 private:
  const json& j_;
  std::string context_;
  std::set<std::string> used_;
};

template <class E>
E parse_enum(const std::string& value, std::initializer_list<std::pair<const char*, E>> table,
             const std::string& context) {
  for (const auto& [name, e] : table) {
    if (value == name) return e;
  }
  std::string allowed;
  for (const auto& [name, e] : table) allowed += std::string(allowed.empty() ? "" : ", ") + name;
  throw ConfigError(context + ": '" + value + "' is not one of " + allowed);
}

inline std::string stage_name(SearchStage s) {
  switch (s) {
    case SearchStage::Prior: return "prior";
    case SearchStage::PosteriorFixedWeight: return "posterior";
    case SearchStage::PosteriorUpdatedWeight: return "posterior_updated";
  }
  return "?";
}

inline json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Mixtures

inline json to_json(const RobustBetaMixture& m) {
  json comps = json::array();
  for (const auto& c : m.components) comps.push_back({{"weight", c.weight}, {"a", c.a}, {"b", c.b}});
  return {{"components", comps}, {"vague", {{"a", m.vague.a}, {"b", m.vague.b}}}, {"omega", m.omega}};
}

inline RobustBetaMixture mixture_from_json(const json& j) {
  detail::ObjectReader r(j, "mixture");
  RobustBetaMixture m;
  if (r.has("components")) {
    const auto& arr = r.child("components");
    if (!arr.is_array()) throw ConfigError("mixture.components: expected an array");
    for (const auto& cj : arr) {
      detail::ObjectReader cr(cj, "mixture.components[]");
      BetaComponent c;
      cr.get("weight", c.weight);
      cr.get("a", c.a);
      cr.get("b", c.b);
      cr.finish();
      if (!(c.a > 0.0 && c.b > 0.0 && c.weight >= 0.0)) {
        throw ValidationError("mixture component needs a, b > 0 and weight >= 0");
      }
      m.components.push_back(c);
    }
  }
  if (r.has("vague")) {
    detail::ObjectReader vr(r.child("vague"), "mixture.vague");
    vr.get("a", m.vague.a);
    vr.get("b", m.vague.b);
    vr.finish();
  }
  r.get("omega", m.omega);
  r.finish();
  double total = 0.0;
  for (const auto& c : m.components) total += c.weight;
  if (!m.components.empty() && std::fabs(total - 1.0) > 1e-9) {
    throw ValidationError("mixture component weights must sum to 1");
  }
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// Aggregate tables

inline json to_json(const AggregateSummary& agg) {
  json sources = json::array();
  for (const auto& s : agg.sources) {
    json arms = json::array();
    for (const auto& a : s.arms) arms.push_back({{"arm", to_string(a.arm)}, {"n", a.n}, {"y", a.y}});
    json covs = json::array();
    for (const auto& c : s.covariates) {
      json cj = {{"name", c.name},
                 {"kind", c.kind == CovariateKind::Binary ? "binary" : "continuous"},
                 {"mean", c.mean}};
      if (c.kind == CovariateKind::Continuous) cj["sd"] = c.sd;
      covs.push_back(cj);
    }
    sources.push_back({{"source", to_string(s.source)}, {"arms", arms}, {"covariates", covs}});
  }
  return {{"sources", sources}};
}

inline AggregateSummary aggregate_from_json(const json& j) {
  detail::ObjectReader r(j, "aggregate");
  AggregateSummary agg;
  const auto& sources = r.child("sources");
  if (!sources.is_array()) throw ValidationError("aggregate.sources: expected an array");
  for (const auto& sj : sources) {
    detail::ObjectReader sr(sj, "aggregate.sources[]");
    SourceAggregate s;
    std::string name;
    sr.get("source", name);
    const auto src = parse_source(name);
    if (!src) throw ValidationError("aggregate: unknown source '" + name + "'");
    s.source = *src;
    if (sr.has("arms")) {
      for (const auto& aj : sr.child("arms")) {
        detail::ObjectReader ar(aj, "aggregate.arms[]");
        ArmAggregate a;
        std::string arm;
        ar.get("arm", arm);
        const auto parsed = parse_arm(arm);
        if (!parsed) throw ValidationError("aggregate: unknown arm '" + arm + "'");
        a.arm = *parsed;
        ar.get("n", a.n);
        ar.get("y", a.y);
        ar.finish();
        s.arms.push_back(a);
      }
    }
    if (sr.has("covariates")) {
      for (const auto& cj : sr.child("covariates")) {
        detail::ObjectReader cr(cj, "aggregate.covariates[]");
        CovariateAggregate c;
        std::string kind = "continuous";
        cr.get("name", c.name);
        cr.get("kind", kind);
        c.kind = detail::parse_enum<CovariateKind>(
            kind, {{"binary", CovariateKind::Binary}, {"continuous", CovariateKind::Continuous}},
            "aggregate.covariates.kind");
        cr.get("mean", c.mean);
        cr.get("sd", c.sd);
        cr.finish();
        s.covariates.push_back(c);
      }
    }
    sr.finish();
    agg.sources.push_back(std::move(s));
  }
  r.finish();
  validate(agg);
  return agg;
}

// ---------------------------------------------------------------------------
// Analysis configuration

inline json to_json(const AnalysisConfig& c) {
  const auto& e = c.eqps;
  const auto& m = e.mixture;
  return {
      {"strata", c.strata},
      {"mcmc",
       {{"chains", c.mcmc.chains},
        {"iterations", c.mcmc.iterations},
        {"burn_in", c.mcmc.burn_in},
        {"thin", c.mcmc.thin},
        {"target_accept", c.mcmc.target_accept}}},
      {"eqps",
       {{"lambda", e.lambda},
        {"delta", e.delta},
        {"grid_step", e.grid_step},
        {"mc_draws", e.mc_draws},
        {"stage", detail::stage_name(e.stage)},
        {"continuity", e.continuity == ContinuityMode::Half ? "half" : "strict"},
        {"vague", {{"a", e.vague.a}, {"b", e.vague.b}}}}},
      {"mixture",
       {{"k_max", m.k_max},
        {"criterion", m.criterion == SelectionCriterion::AIC ? "aic" : "bic"},
        {"max_iterations", m.max_iterations},
        {"tolerance", m.tolerance},
        {"min_weight", m.min_weight},
        {"max_samples", m.max_samples}}},
      {"map_tau_scale", c.map_tau_scale},
      {"mu_prior_sd", c.mu_prior_sd},
      {"rmap_omega", c.rmap_omega},
      {"eb", {{"thresholds", c.eb.thresholds}, {"weights", c.eb.weights}}},
      {"decision_draws", c.decision_draws},
      {"decision_threshold", c.decision_threshold},
      {"rhat_threshold", c.rhat_threshold},
  };
}

inline void read_into(const json& j, AnalysisConfig& c) {
  detail::ObjectReader r(j, "analysis");
  r.get("strata", c.strata);
  if (r.has("mcmc")) {
    detail::ObjectReader mr(r.child("mcmc"), "analysis.mcmc");
    mr.get("chains", c.mcmc.chains);
    mr.get("iterations", c.mcmc.iterations);
    mr.get("burn_in", c.mcmc.burn_in);
    mr.get("thin", c.mcmc.thin);
    mr.get("target_accept", c.mcmc.target_accept);
    mr.finish();
  }
  if (r.has("eqps")) {
    auto& e = c.eqps;
    detail::ObjectReader er(r.child("eqps"), "analysis.eqps");
    er.get("lambda", e.lambda);
    er.get("delta", e.delta);
    er.get("grid_step", e.grid_step);
    er.get("mc_draws", e.mc_draws);
    std::string stage = detail::stage_name(e.stage);
    er.get("stage", stage);
    e.stage = detail::parse_enum<SearchStage>(
        stage,
        {{"prior", SearchStage::Prior},
         {"posterior", SearchStage::PosteriorFixedWeight},
         {"posterior_updated", SearchStage::PosteriorUpdatedWeight}},
        "analysis.eqps.stage");
    std::string continuity = e.continuity == ContinuityMode::Half ? "half" : "strict";
    er.get("continuity", continuity);
    e.continuity = detail::parse_enum<ContinuityMode>(
        continuity, {{"half", ContinuityMode::Half}, {"strict", ContinuityMode::Strict}},
        "analysis.eqps.continuity");
    if (er.has("vague")) {
      const auto& vj = er.child("vague");
      if (vj.is_string()) {
        e.vague = detail::parse_enum<VagueComponent>(
            vj.get<std::string>(),
            {{"uniform", VagueComponent::uniform()}, {"jeffreys", VagueComponent::jeffreys()}},
            "analysis.eqps.vague");
      } else {
        detail::ObjectReader vr(vj, "analysis.eqps.vague");
        vr.get("a", e.vague.a);
        vr.get("b", e.vague.b);
        vr.finish();
      }
    }
    er.finish();
  }
  if (r.has("mixture")) {
    auto& m = c.eqps.mixture;
    detail::ObjectReader mr(r.child("mixture"), "analysis.mixture");
    mr.get("k_max", m.k_max);
    std::string crit = m.criterion == SelectionCriterion::AIC ? "aic" : "bic";
    mr.get("criterion", crit);
    m.criterion = detail::parse_enum<SelectionCriterion>(
        crit, {{"aic", SelectionCriterion::AIC}, {"bic", SelectionCriterion::BIC}},
        "analysis.mixture.criterion");
    mr.get("max_iterations", m.max_iterations);
    mr.get("tolerance", m.tolerance);
    mr.get("min_weight", m.min_weight);
    mr.get("max_samples", m.max_samples);
    mr.finish();
  }
  r.get("map_tau_scale", c.map_tau_scale);
  r.get("mu_prior_sd", c.mu_prior_sd);
  r.get("rmap_omega", c.rmap_omega);
  if (r.has("eb")) {
    detail::ObjectReader br(r.child("eb"), "analysis.eb");
    br.get("thresholds", c.eb.thresholds);
    br.get("weights", c.eb.weights);
    br.finish();
  }
  r.get("decision_draws", c.decision_draws);
  r.get("decision_threshold", c.decision_threshold);
  r.get("rhat_threshold", c.rhat_threshold);
  r.finish();
  c.validate();
}

// ---------------------------------------------------------------------------
// Scenario configuration

inline json to_json(const ScenarioConfig& s) {
  json covs = json::array();
  for (const auto& c : s.covariates) {
    covs.push_back({{"name", c.name},
                    {"kind", c.kind == CovariateKind::Binary ? "binary" : "continuous"},
                    {"mean", c.mean},
                    {"sd", c.sd}});
  }
  return {{"n_current", s.n_current}, {"n_external", s.n_external}, {"n_rwd", s.n_rwd},
          {"beta0", s.beta0},         {"beta1", s.beta1},           {"beta2", s.beta2},
          {"beta3", s.beta3},         {"beta4", s.beta4},           {"beta_rwd", s.beta_rwd},
          {"beta_ext", s.beta_ext},   {"covariates", covs}};
}

inline void read_into(const json& j, ScenarioConfig& s) {
  detail::ObjectReader r(j, "scenario");
  r.get("n_current", s.n_current);
  r.get("n_external", s.n_external);
  r.get("n_rwd", s.n_rwd);
  r.get("beta0", s.beta0);
  r.get("beta1", s.beta1);
  r.get("beta2", s.beta2);
  r.get("beta3", s.beta3);
  r.get("beta4", s.beta4);
  r.get("beta_rwd", s.beta_rwd);
  r.get("beta_ext", s.beta_ext);
  if (r.has("covariates")) {
    s.covariates.clear();
    for (const auto& cj : r.child("covariates")) {
      detail::ObjectReader cr(cj, "scenario.covariates[]");
      CovariateSpec c;
      std::string kind = "continuous";
      cr.get("name", c.name);
      cr.get("kind", kind);
      c.kind = detail::parse_enum<CovariateKind>(
          kind, {{"binary", CovariateKind::Binary}, {"continuous", CovariateKind::Continuous}},
          "scenario.covariates.kind");
      cr.get("mean", c.mean);
      cr.get("sd", c.sd);
      cr.finish();
      s.covariates.push_back(c);
    }
  }
  r.finish();
  s.validate();
}

// ---------------------------------------------------------------------------
// Whole-run configuration

struct CaseStudyConfig {
  std::vector<double> scalings{1.0, 2.0, 4.0};
  std::vector<Method> methods{Method::NoBorrow, Method::Map, Method::EbRMap, Method::PsMap,
                              Method::Eqps};
};

struct SampleSizeConfig {
  SampleSizeSearch search;
  double beta1 = 0.5;
  std::vector<double> shift_levels{0.0};
  std::vector<double> heterogeneity{0.0, 0.2, 0.4};
  std::vector<double> lambdas{0.8};
  std::vector<double> deltas{0.1};
  Method method = Method::Eqps;
};

struct RunConfig {
  std::uint64_t seed = 20240521;
  int replicates = 500;
  int threads = 1;
  AnalysisConfig analysis = AnalysisConfig::desk();
  ScenarioConfig scenario = ScenarioConfig::desk();
  GridConfig grid;
  CurveConfig curve;
  SampleSizeConfig sample_size;
  CaseStudyConfig case_study;

  RunConfig() {
    const double levels[] = {-0.8, -0.6, -0.4, -0.2, 0.0, 0.2, 0.4, 0.6, 0.8};
    curve.points = CurveConfig::diagonal(levels);
    curve.lambdas = {0.7, 0.8, 0.9};
    curve.deltas = {0.1, 0.15, 0.2};
  }

  static RunConfig preset(const std::string& name) {
    RunConfig c;
    if (name == "desk") return c;
    if (name == "full" || name == "paper") {
      c.analysis = AnalysisConfig::full();
      c.scenario = ScenarioConfig::full();
      c.replicates = 1000;
      return c;
    }
    throw ConfigError("unknown preset '" + name + "' (expected desk or full)");
  }
};

inline json methods_json(const std::vector<Method>& ms) {
  json a = json::array();
  for (Method m : ms) a.push_back(to_string(m));
  return a;
}

inline std::vector<Method> methods_from_json(const json& j, const std::string& ctx) {
  if (!j.is_array()) throw ConfigError(ctx + ": expected an array of method names");
  std::vector<Method> out;
  for (const auto& v : j) {
    if (!v.is_string()) throw ConfigError(ctx + ": method names must be strings");
    auto m = parse_method(v.get<std::string>());
    if (!m) throw ConfigError(ctx + ": unknown method '" + v.get<std::string>() + "'");
    out.push_back(*m);
  }
  return out;
}

inline json to_json(const RunConfig& c) {
  json points = json::array();
  for (const auto& p : c.curve.points) points.push_back({p.beta3, p.beta4});
  const auto& ss = c.sample_size;
  return {
      {"seed", c.seed},
      {"replicates", c.replicates},
      {"threads", c.threads},
      {"analysis", to_json(c.analysis)},
      {"scenario", to_json(c.scenario)},
      {"grid",
       {{"shift_levels", c.grid.shift_levels},
        {"heterogeneity", c.grid.heterogeneity},
        {"lambdas", c.grid.lambdas},
        {"deltas", c.grid.deltas},
        {"methods", methods_json(c.grid.methods)}}},
      {"curve", {{"points", points}, {"lambdas", c.curve.lambdas}, {"deltas", c.curve.deltas}}},
      {"sample_size",
       {{"target_power", ss.search.target_power},
        {"n_min", ss.search.n_min},
        {"n_max", ss.search.n_max},
        {"linear_step", ss.search.linear_step},
        {"replicates", ss.search.replicates},
        {"beta1", ss.beta1},
        {"shift_levels", ss.shift_levels},
        {"heterogeneity", ss.heterogeneity},
        {"lambdas", ss.lambdas},
        {"deltas", ss.deltas},
        {"method", to_string(ss.method)}}},
      {"case_study",
       {{"scalings", c.case_study.scalings}, {"methods", methods_json(c.case_study.methods)}}},
  };
}

inline void read_into(const json& j, RunConfig& c) {
  detail::ObjectReader r(j, "config");
  r.get("seed", c.seed);
  r.get("replicates", c.replicates);
  r.get("threads", c.threads);
  if (r.has("analysis")) read_into(r.child("analysis"), c.analysis);
  if (r.has("scenario")) read_into(r.child("scenario"), c.scenario);
  if (r.has("grid")) {
    detail::ObjectReader g(r.child("grid"), "grid");
    g.get("shift_levels", c.grid.shift_levels);
    g.get("heterogeneity", c.grid.heterogeneity);
    g.get("lambdas", c.grid.lambdas);
    g.get("deltas", c.grid.deltas);
    if (g.has("methods")) c.grid.methods = methods_from_json(g.child("methods"), "grid.methods");
    g.finish();
  }
  if (r.has("curve")) {
    detail::ObjectReader cr(r.child("curve"), "curve");
    if (cr.has("points")) {
      c.curve.points.clear();
      for (const auto& p : cr.child("points")) {
        if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
          throw ConfigError("curve.points: each point is [beta3, beta4]");
        }
        c.curve.points.push_back({p[0].get<double>(), p[1].get<double>()});
      }
    }
    cr.get("lambdas", c.curve.lambdas);
    cr.get("deltas", c.curve.deltas);
    cr.finish();
  }
  if (r.has("sample_size")) {
    auto& ss = c.sample_size;
    detail::ObjectReader sr(r.child("sample_size"), "sample_size");
    sr.get("target_power", ss.search.target_power);
    sr.get("n_min", ss.search.n_min);
    sr.get("n_max", ss.search.n_max);
    sr.get("linear_step", ss.search.linear_step);
    sr.get("replicates", ss.search.replicates);
    sr.get("beta1", ss.beta1);
    sr.get("shift_levels", ss.shift_levels);
    sr.get("heterogeneity", ss.heterogeneity);
    sr.get("lambdas", ss.lambdas);
    sr.get("deltas", ss.deltas);
    std::string method = to_string(ss.method);
    sr.get("method", method);
    const auto m = parse_method(method);
    if (!m) throw ConfigError("sample_size.method: unknown method '" + method + "'");
    ss.method = *m;
    sr.finish();
    ss.search.validate();
  }
  if (r.has("case_study")) {
    detail::ObjectReader cs(r.child("case_study"), "case_study");
    cs.get("scalings", c.case_study.scalings);
    if (cs.has("methods")) {
      c.case_study.methods = methods_from_json(cs.child("methods"), "case_study.methods");
    }
    cs.finish();
  }
  r.finish();
  if (c.replicates < 1) throw ConfigError("replicates must be at least 1");
  if (c.threads < 1) throw ConfigError("threads must be at least 1");
  c.grid.base = c.scenario;
  c.grid.validate();
  c.curve.base = c.scenario;
}

inline json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path + ": invalid JSON (" + e.what() + ")");
  }
}

// ---------------------------------------------------------------------------
// Analysis report

inline json to_json(const StratumWeights& w) {
  json arr = json::array();
  for (std::size_t s = 0; s < w.strata.size(); ++s) {
    const auto& x = w.strata[s];
    arr.push_back({{"stratum", s + 1},
                   {"n_current", x.n_current},
                   {"n_external", x.n_external},
                   {"n_rwd", x.n_rwd},
                   {"eps_external", detail::finite_or_null(x.eps_external)},
                   {"eps_rwd", detail::finite_or_null(x.eps_rwd)},
                   {"w_external", x.w_external},
                   {"w_rwd", x.w_rwd},
                   {"current_share", x.current_share},
                   {"effective_share", x.effective_share},
                   {"no_borrow", x.no_borrow}});
  }
  return arr;
}

inline json to_json(const ArmPosterior& a) {
  json j = {{"arm", to_string(a.arm)},
            {"current", {{"y", a.current.y}, {"n", a.current.n}}},
            {"omega", a.omega},
            {"prior", to_json(a.prior)},
            {"posterior", to_json(a.posterior)},
            {"posterior_mean", a.posterior.mean()},
            {"posterior_sd", a.posterior.sd()},
            {"prior_ess", a.ess_prior.value},
            {"prior_ess_degenerate", a.ess_prior.degenerate},
            {"max_rhat", a.max_rhat},
            {"empty_borrow", a.empty_borrow}};
  if (a.box_p) j["box_p_value"] = *a.box_p;
  if (a.eqps) {
    const auto& e = *a.eqps;
    j["omega_eq"] = e.omega_eq;
    j["consistency_p"] = e.consistency.value;
    j["consistency_se"] = e.consistency.se;
    j["omega_hat"] = e.omega_hat;
  }
  if (!a.weights.strata.empty()) j["strata"] = to_json(a.weights);
  j["warnings"] = a.warnings;
  return j;
}

inline json to_json(const TrialAnalysis& t) {
  return {{"method", to_string(t.method)},
          {"treatment", to_json(t.treatment)},
          {"control", to_json(t.control)},
          {"risk_difference_mean", t.rd_mean},
          {"prob_superior", t.decision.prob_superior},
          {"prob_superior_se", t.decision.se},
          {"success", t.decision.success},
          {"max_rhat", t.max_rhat},
          {"diagnostic_failure", t.diagnostic_failure}};
}

}  // namespace eqps
