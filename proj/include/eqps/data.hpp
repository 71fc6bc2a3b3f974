#pragma once

// Subject-level and aggregate representations of the three data sources.

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "eqps/errors.hpp"
#include "eqps/numerics.hpp"

namespace eqps {

enum class Source { Current, External, RealWorld };
enum class Arm { Treatment, Control };

inline constexpr std::array<Source, 3> kAllSources = {Source::Current, Source::External,
                                                      Source::RealWorld};

/// Source indicator (Z1, Z2): real-world (1,0), external trial (0,1), current trial (0,0).
struct SourceIndicator {
  int z1 = 0;
  int z2 = 0;
  friend bool operator==(const SourceIndicator&, const SourceIndicator&) = default;
};

constexpr SourceIndicator indicator(Source s) {
  switch (s) {
    case Source::RealWorld: return {1, 0};
    case Source::External: return {0, 1};
    case Source::Current: break;
  }
  return {0, 0};
}

inline std::string to_string(Source s) {
  switch (s) {
    case Source::Current: return "current";
    case Source::External: return "external";
    case Source::RealWorld: return "rwd";
  }
  return "?";
}

inline std::string to_string(Arm a) { return a == Arm::Treatment ? "treatment" : "control"; }

namespace detail {
inline std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end || s.empty()) return std::nullopt;
  return v;
}

// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}
}  // namespace detail

inline std::optional<Source> parse_source(std::string_view token) {
  const auto t = detail::lower(detail::trim(token));
  if (t == "current") return Source::Current;
  if (t == "external") return Source::External;
  if (t == "rwd") return Source::RealWorld;
  return std::nullopt;
}

inline std::optional<Arm> parse_arm(std::string_view token) {
  const auto t = detail::lower(detail::trim(token));
  if (t == "treatment") return Arm::Treatment;
  if (t == "control") return Arm::Control;
  return std::nullopt;
}

struct Subject {
  Source source = Source::Current;
  Arm arm = Arm::Treatment;
  std::vector<double> covariates;
  int outcome = 0;
  std::optional<double> propensity;
  std::optional<int> stratum;  // 1-based
};

/// Responder count y out of n.
struct BinomialSummary {
  int y = 0;
  int n = 0;

  bool empty() const noexcept { return n == 0; }
  double p() const {
    if (n == 0) throw ValidationError("response rate of an empty summary");
    return static_cast<double>(y) / n;
  }
  bool has_logit() const noexcept { return n > 0 && y > 0 && y < n; }
  double theta() const {
    if (!has_logit()) throw DomainError("log-odds undefined unless 0 < y < n");
    return logit(p());
  }
  BinomialSummary& operator+=(const BinomialSummary& o) {
    y += o.y;
    n += o.n;
    return *this;
  }
  friend bool operator==(const BinomialSummary&, const BinomialSummary&) = default;
};

inline BinomialSummary make_summary(int y, int n) {
  if (n < 0 || y < 0 || y > n) throw ValidationError("binomial summary requires 0 <= y <= n");
  return {y, n};
}

/// A validated subject table. Covariate names come from the CSV header.
struct Dataset {
  std::vector<std::string> covariate_names;
  std::vector<Subject> subjects;

  std::size_t covariate_count() const noexcept { return covariate_names.size(); }
};

inline void validate_subject(const Subject& s, std::size_t covariate_count, std::size_t row) {
  if (s.source == Source::RealWorld && s.arm != Arm::Treatment) {
    throw ParseError("real-world subjects must be in the treatment arm", row);
  }
  if (s.outcome != 0 && s.outcome != 1) throw ParseError("outcome must be 0 or 1", row);
  if (s.covariates.size() != covariate_count) {
    throw ParseError("expected " + std::to_string(covariate_count) + " covariates, found " +
                         std::to_string(s.covariates.size()),
                     row);
  }
  for (double v : s.covariates) {
    if (!std::isfinite(v)) throw ParseError("covariate values must be finite", row);
  }
}

/// Column names for the fixed fields; every other column is a covariate.
struct ColumnMap {
  std::string source = "source";
  std::string arm = "arm";
  std::string outcome = "outcome";
};

inline Dataset parse_subjects(std::istream& in, const ColumnMap& columns = {}) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty subject file", 0);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_csv_line(line);
  std::optional<std::size_t> src_col;
  std::optional<std::size_t> arm_col;
  std::optional<std::size_t> out_col;
  std::vector<std::size_t> cov_cols;
  Dataset ds;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const auto name = std::string(header[i]);
    if (name == columns.source) {
      src_col = i;
    } else if (name == columns.arm) {
      arm_col = i;
    } else if (name == columns.outcome) {
      out_col = i;
    } else {
      if (name.empty()) throw ParseError("empty column name in header", 1);
      cov_cols.push_back(i);
      ds.covariate_names.push_back(name);
    }
  }
  if (!src_col || !arm_col || !out_col) {
    throw ParseError("header must contain source, arm and outcome columns", 1);
  }

  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != header.size()) {
      throw ParseError("expected " + std::to_string(header.size()) + " fields, found " +
                           std::to_string(fields.size()),
                       row);
    }
    Subject s;
    const auto src = parse_source(fields[*src_col]);
    if (!src) throw ParseError("unknown source '" + std::string(fields[*src_col]) + "'", row);
    const auto arm = parse_arm(fields[*arm_col]);
    if (!arm) throw ParseError("unknown arm '" + std::string(fields[*arm_col]) + "'", row);
    s.source = *src;
    s.arm = *arm;
    const auto outcome = detail::parse_double(fields[*out_col]);
    if (!outcome || (*outcome != 0.0 && *outcome != 1.0)) {
      throw ParseError("outcome must be 0 or 1", row);
    }
    s.outcome = static_cast<int>(*outcome);
    for (std::size_t c : cov_cols) {
      if (fields[c].empty()) throw ParseError("missing covariate '" + std::string(header[c]) + "'", row);
      const auto v = detail::parse_double(fields[c]);
      if (!v) throw ParseError("non-numeric covariate '" + std::string(header[c]) + "'", row);
      s.covariates.push_back(*v);
    }
    validate_subject(s, cov_cols.size(), row);
    ds.subjects.push_back(std::move(s));
  }
  return ds;
}

inline Dataset load_subjects(const std::string& path, const ColumnMap& columns = {}) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open subject file '" + path + "'", 0);
  return parse_subjects(in, columns);
}

inline void write_subjects(std::ostream& out, const Dataset& ds) {
  out << "source,arm,outcome";
  for (const auto& n : ds.covariate_names) out << ',' << n;
  out << '\n';
  for (const auto& s : ds.subjects) {
    out << to_string(s.source) << ',' << to_string(s.arm) << ',' << s.outcome;
    for (double v : s.covariates) out << ',' << detail::format_double(v);
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Summaries

struct SubjectFilter {
  std::optional<Source> source;
  std::optional<Arm> arm;
  std::optional<int> stratum;
};

inline BinomialSummary summarize(std::span<const Subject> subjects, const SubjectFilter& f = {}) {
  BinomialSummary out;
  for (const auto& s : subjects) {
    if (f.source && s.source != *f.source) continue;
    if (f.arm && s.arm != *f.arm) continue;
    if (f.stratum) {
      if (!s.stratum) throw ValidationError("summarize by stratum needs assigned strata");
      if (*s.stratum != *f.stratum) continue;
    }
    out.n += 1;
    out.y += s.outcome;
  }
  return out;
}

struct SummaryRow {
  Source source;
  Arm arm;
  int stratum = 0;  // 0 when not grouped by stratum
  BinomialSummary summary;
};

/// Exact counts for every (source, arm[, stratum]) group present in the data.
inline std::vector<SummaryRow> summary_table(std::span<const Subject> subjects, bool by_stratum) {
  std::map<std::tuple<int, int, int>, BinomialSummary> groups;
  for (const auto& s : subjects) {
    int st = 0;
    if (by_stratum) {
      if (!s.stratum) throw ValidationError("summary by stratum needs assigned strata");
      st = *s.stratum;
    }
    auto& g = groups[{static_cast<int>(s.source), static_cast<int>(s.arm), st}];
    g.n += 1;
    g.y += s.outcome;
  }
  std::vector<SummaryRow> rows;
  for (const auto& [key, summ] : groups) {
    rows.push_back({static_cast<Source>(std::get<0>(key)), static_cast<Arm>(std::get<1>(key)),
                    std::get<2>(key), summ});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Aggregate tables

enum class CovariateKind { Binary, Continuous };

struct CovariateAggregate {
  std::string name;
  CovariateKind kind = CovariateKind::Continuous;
  double mean = 0.0;  // proportion for binary covariates
  double sd = 0.0;    // continuous only
};

struct ArmAggregate {
  Arm arm = Arm::Treatment;
  int n = 0;
  int y = 0;
};

struct SourceAggregate {
  Source source = Source::Current;
  std::vector<ArmAggregate> arms;
  std::vector<CovariateAggregate> covariates;
};

/// Published marginal statistics for each source.
struct AggregateSummary {
  std::vector<SourceAggregate> sources;

  const SourceAggregate* find(Source s) const {
    for (const auto& src : sources) {
      if (src.source == s) return &src;
    }
    return nullptr;
  }
};

inline void validate(const AggregateSummary& agg) {
  if (agg.sources.empty()) throw ValidationError("aggregate table has no sources");
  std::optional<std::vector<std::string>> names;
  for (const auto& src : agg.sources) {
    std::vector<std::string> these;
    for (const auto& c : src.covariates) these.push_back(c.name);
    if (names && *names != these) {
      throw ValidationError("all sources must list the same covariates in the same order");
    }
    names = these;
    for (const auto& arm : src.arms) {
      if (arm.n <= 0) throw ValidationError("aggregate arm size must be positive");
      if (arm.y < 0 || arm.y > arm.n) throw ValidationError("aggregate responders out of range");
      if (src.source == Source::RealWorld && arm.arm != Arm::Treatment) {
        throw ValidationError("real-world source can only hold a treatment arm");
      }
    }
    for (const auto& c : src.covariates) {
      if (c.kind == CovariateKind::Binary && !(c.mean >= 0.0 && c.mean <= 1.0)) {
        throw ValidationError("binary covariate '" + c.name + "' proportion outside [0, 1]");
      }
      if (c.kind == CovariateKind::Continuous && !(c.sd > 0.0)) {
        throw ValidationError("continuous covariate '" + c.name + "' needs sd > 0");
      }
    }
  }
}

enum class OutcomeDraw {
  Bernoulli,   // each outcome ~ Bernoulli(y / n)
  ExactCount,  // exactly y responders, randomly placed
};

/// Reconstructs a subject table from marginal statistics. Covariates are drawn
/// independently; outcomes ignore covariates.
inline Dataset simulate_from_aggregate(const AggregateSummary& agg, RngStream& rng,
                                       OutcomeDraw mode = OutcomeDraw::Bernoulli) {
  validate(agg);
  Dataset ds;
  for (const auto& c : agg.sources.front().covariates) ds.covariate_names.push_back(c.name);
  for (const auto& src : agg.sources) {
    for (const auto& arm : src.arms) {
      std::vector<int> outcomes(static_cast<std::size_t>(arm.n), 0);
      if (mode == OutcomeDraw::ExactCount) {
        std::fill(outcomes.begin(), outcomes.begin() + arm.y, 1);
        shuffle(outcomes, rng);
      } else {
        const double p = static_cast<double>(arm.y) / arm.n;
        for (auto& o : outcomes) o = rng.bernoulli(p) ? 1 : 0;
      }
      for (int i = 0; i < arm.n; ++i) {
        Subject s;
        s.source = src.source;
        s.arm = arm.arm;
        s.outcome = outcomes[static_cast<std::size_t>(i)];
        for (const auto& c : src.covariates) {
          s.covariates.push_back(c.kind == CovariateKind::Binary
                                     ? (rng.bernoulli(c.mean) ? 1.0 : 0.0)
                                     : rng.normal(c.mean, c.sd));
        }
        ds.subjects.push_back(std::move(s));
      }
    }
  }
  return ds;
}

}  // namespace eqps
