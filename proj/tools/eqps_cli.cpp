// Command-line front end: analyze, simulate, weights-curve, sample-size,
// case-study and plot.

#include <openssl/evp.h>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "eqps/comparators.hpp"
#include "eqps/data.hpp"
#include "eqps/errors.hpp"
#include "eqps/io.hpp"
#include "eqps/simulation.hpp"
#include "eqps/svg.hpp"
#include "eqps/version.hpp"

namespace fs = std::filesystem;
using eqps::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitDiagnostic = 3;

class DiagnosticFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw std::runtime_error("SHA-256 failed");
  }
  EVP_MD_CTX_free(ctx);
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) {
    out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return out.str();
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw eqps::ValidationError("cannot open " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Writes via a temporary file and rename so readers never see partial output.
void write_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw eqps::ValidationError("cannot write " + tmp.string());
    out << content;
    if (!out) throw eqps::ValidationError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

struct Options {
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 0;
  std::string out_dir;
  std::string preset = "desk";
  std::string methods;
  std::string config_path;
  int replicates = 0;
  bool strict = false;
  bool print_config = false;
  bool timing = false;
  bool records = false;
  bool quiet = false;
};

class Run {
 public:
  Run(const Options& opt, std::string command) : opt_(opt), command_(std::move(command)) {
    started_ = utc_now();
    cfg_ = eqps::RunConfig::preset(opt.preset);
    if (!opt.config_path.empty()) {
      config_file_hash_ = sha256_hex(read_file(opt.config_path));
      eqps::read_into(eqps::load_json(opt.config_path), cfg_);
    }
    if (opt.seed_set) cfg_.seed = opt.seed;
    if (opt.threads > 0) cfg_.threads = opt.threads;
    if (opt.replicates > 0) cfg_.replicates = opt.replicates;
    if (!opt.methods.empty()) {
      const auto ms = eqps::parse_method_list(opt.methods);
      cfg_.grid.methods = ms;
      cfg_.case_study.methods = ms;
    }
    out_dir_ = opt.out_dir;
    if (out_dir_.empty()) {
      const char* env = std::getenv("EQPS_OUT_DIR");
      out_dir_ = env && *env ? env : "out";
    }
  }

  eqps::RunConfig& config() { return cfg_; }
  const fs::path& out_dir() const { return out_dir_; }

  eqps::SimulationOptions simulation_options() const {
    eqps::SimulationOptions s;
    s.replicates = cfg_.replicates;
    s.seed = cfg_.seed;
    s.threads = cfg_.threads;
    s.analysis = cfg_.analysis;
    return s;
  }

  void progress(const std::string& msg) const {
    if (!opt_.quiet) std::cerr << "[" << command_ << "] " << msg << std::endl;
  }

  void emit(const std::string& name, const std::string& content) {
    const fs::path p = out_dir_ / name;
    write_atomic(p, content);
    outputs_.emplace_back(name, content);
  }

  void finish() {
    json outs = json::array();
    for (const auto& [name, content] : outputs_) {
      outs.push_back({{"path", name}, {"sha256", sha256_hex(content)}, {"bytes", content.size()}});
    }
    const std::string effective = eqps::to_json(cfg_).dump();
    json m = {{"tool", "eqps"},
              {"version", eqps::kVersion},
              {"command", command_},
              {"config_hash", config_file_hash_.empty() ? sha256_hex(effective) : config_file_hash_},
              {"effective_config_hash", sha256_hex(effective)},
              {"seed", cfg_.seed},
              {"started", started_},
              {"finished", utc_now()},
              {"outputs", outs}};
    write_atomic(out_dir_ / "manifest.json", m.dump(2) + "\n");
    progress("wrote " + std::to_string(outputs_.size()) + " files to " + out_dir_.string());
  }

 private:
  Options opt_;
  std::string command_;
  eqps::RunConfig cfg_;
  fs::path out_dir_;
  std::string started_;
  std::string config_file_hash_;
  std::vector<std::pair<std::string, std::string>> outputs_;
};

// ---------------------------------------------------------------------------
// Subcommands

int cmd_analyze(const Options& opt, const std::vector<std::string>& data_files,
                const std::string& aggregate, bool dump_draws) {
  Run run(opt, "analyze");
  auto& cfg = run.config();
  eqps::Dataset ds;
  if (!aggregate.empty()) {
    if (!data_files.empty()) throw eqps::ConfigError("give either --data or --aggregate, not both");
    ds = eqps::reconstruct_subjects(eqps::aggregate_from_json(eqps::load_json(aggregate)), cfg.seed);
  } else {
    if (data_files.empty()) throw eqps::ConfigError("analyze needs --data or --aggregate");
    for (const auto& f : data_files) {
      auto part = eqps::load_subjects(f);
      if (ds.subjects.empty() && ds.covariate_names.empty()) {
        ds.covariate_names = part.covariate_names;
      } else if (part.covariate_names != ds.covariate_names) {
        throw eqps::ValidationError(f + ": covariate columns differ from the first data file");
      }
      for (auto& s : part.subjects) ds.subjects.push_back(std::move(s));
    }
  }
  const auto methods =
      opt.methods.empty() ? std::vector<eqps::Method>{eqps::Method::Eqps} : eqps::parse_method_list(opt.methods);
  eqps::TrialAnalyzer analyzer(ds, cfg.analysis, eqps::RngStream(cfg.seed, 4));
  json reports = json::array();
  bool diag_fail = false;
  bool stratified = false;
  for (auto m : methods) {
    run.progress("method " + eqps::to_string(m));
    const auto a = analyzer.run(m);
    reports.push_back(eqps::to_json(a));
    diag_fail = diag_fail || a.diagnostic_failure;
    stratified = stratified || m == eqps::Method::Eqps || m == eqps::Method::PsMap;
    std::cout << std::left << std::setw(9) << eqps::to_string(m) << " Pr(theta_t > theta_c) = "
              << std::setprecision(4) << a.decision.prob_superior
              << (a.decision.success ? "  success" : "  no success") << "  RD = " << a.rd_mean
              << "  omega_t = " << a.treatment.omega << "  omega_c = " << a.control.omega
              << "  max R-hat = " << a.max_rhat << "\n";
    for (const auto& w : a.warnings) std::cout << "  warning: " << w << "\n";
  }
  json report = {{"version", eqps::kVersion},
                 {"seed", cfg.seed},
                 {"config", eqps::to_json(cfg.analysis)},
                 {"analyses", reports}};
  run.emit("report.json", report.dump(2) + "\n");
  if (stratified) {
    std::ostringstream s;
    eqps::write_stratum_report(s, analyzer.stratification());
    run.emit("strata.csv", s.str());
  }
  if (dump_draws && stratified) {
    std::ostringstream s;
    eqps::write_draws_csv(s, analyzer.hierarchy_draws(eqps::Arm::Treatment));
    run.emit("draws_treatment.csv", s.str());
    std::ostringstream c;
    eqps::write_draws_csv(c, analyzer.hierarchy_draws(eqps::Arm::Control));
    run.emit("draws_control.csv", c.str());
  }
  run.finish();
  if (diag_fail) {
    std::cerr << "warning: R-hat above " << cfg.analysis.rhat_threshold << "\n";
    if (opt.strict) throw DiagnosticFailure("MCMC convergence diagnostics failed");
  }
  return kExitOk;
}

int cmd_simulate(const Options& opt) {
  Run run(opt, "simulate");
  auto& cfg = run.config();
  const auto res = eqps::run_grid(cfg.grid, run.simulation_options(),
                                  [&](const std::string& m) { run.progress(m); });
  std::ostringstream s;
  eqps::write_summary_csv(s, res.summaries);
  run.emit("summary.csv", s.str());
  if (opt.records) {
    std::ostringstream r;
    eqps::write_records_csv(r, res.records, opt.timing);
    run.emit("records.csv", r.str());
  }
  int n_fail = 0;
  for (const auto& x : res.summaries) n_fail += x.n_fail;
  run.finish();
  if (n_fail > 0) std::cerr << "warning: " << n_fail << " replicate analyses failed\n";
  return kExitOk;
}

int cmd_weights_curve(const Options& opt) {
  Run run(opt, "weights-curve");
  auto& cfg = run.config();
  const auto rows = eqps::weight_curve(cfg.curve, run.simulation_options(),
                                       [&](const std::string& m) { run.progress(m); });
  std::ostringstream s;
  eqps::write_curve_csv(s, rows);
  run.emit("curve.csv", s.str());
  run.finish();
  return kExitOk;
}

int cmd_sample_size(const Options& opt) {
  Run run(opt, "sample-size");
  auto& cfg = run.config();
  const auto& ss = cfg.sample_size;
  auto sim = run.simulation_options();
  std::vector<eqps::SampleSizeRow> rows;
  for (double shift : ss.shift_levels) {
    for (double het : ss.heterogeneity) {
      eqps::ScenarioConfig sc = cfg.scenario;
      sc.beta1 = ss.beta1;
      sc.set_baseline_shift(shift);
      sc.beta3 = sc.beta4 = het;
      eqps::AnalysisVariant ref{"noborrow", eqps::Method::NoBorrow, cfg.analysis.eqps};
      run.progress("shift=" + eqps::detail::format_double(shift) + " het=" + eqps::detail::format_double(het) +
                   " reference");
      const auto reference = eqps::required_sample_size(sc, ref, ss.search, sim);
      for (double lambda : ss.lambdas) {
        for (double delta : ss.deltas) {
          eqps::AnalysisVariant v;
          v.method = ss.method;
          v.eqps = cfg.analysis.eqps;
          v.eqps.lambda = lambda;
          v.eqps.delta = delta;
          v.scenario = eqps::scenario_label(shift, het, lambda, delta);
          run.progress(v.scenario);
          eqps::SampleSizeRow row;
          row.method = ss.method == eqps::Method::NoBorrow
                           ? reference
                           : eqps::required_sample_size(sc, v, ss.search, sim);
          row.reference = reference;
          row.shift = shift;
          row.heterogeneity = het;
          row.lambda = lambda;
          row.delta = delta;
          rows.push_back(row);
        }
      }
    }
  }
  std::ostringstream s;
  eqps::write_samplesize_csv(s, rows);
  run.emit("samplesize.csv", s.str());
  run.finish();
  return kExitOk;
}

int cmd_case_study(const Options& opt, const std::string& aggregate) {
  Run run(opt, "case-study");
  auto& cfg = run.config();
  if (aggregate.empty()) throw eqps::ConfigError("case-study needs --aggregate");
  const auto agg = eqps::aggregate_from_json(eqps::load_json(aggregate));
  const auto res = eqps::case_study(agg, cfg.case_study.scalings, cfg.case_study.methods,
                                    cfg.analysis, cfg.seed);
  std::ostringstream s;
  eqps::write_case_study_csv(s, res.rows);
  run.emit("case_study.csv", s.str());
  std::ostringstream d;
  d << "scaling,method,x,density\n";
  for (std::size_t i = 0; i < res.rows.size(); ++i) {
    const auto dens = eqps::risk_difference_density(res.analyses[i]);
    for (std::size_t g = 0; g < dens.grid.size(); ++g) {
      d << eqps::detail::format_double(res.rows[i].scaling) << ',' << res.rows[i].method << ','
        << eqps::detail::format_double(dens.grid[g]) << ','
        << eqps::detail::format_double(dens.density[g]) << '\n';
    }
  }
  run.emit("case_study_density.csv", d.str());
  json reports = json::array();
  for (std::size_t i = 0; i < res.rows.size(); ++i) {
    auto j = eqps::to_json(res.analyses[i]);
    j["rwd_scaling"] = res.rows[i].scaling;
    reports.push_back(j);
  }
  run.emit("case_study_report.json", json{{"analyses", reports}}.dump(2) + "\n");
  for (const auto& r : res.rows) {
    std::cout << "x" << r.scaling << " " << std::left << std::setw(9) << r.method
              << " RD = " << std::setprecision(4) << r.rd_mean << " (sd " << r.rd_sd
              << ")  Pr = " << r.prob_superior << "\n";
  }
  run.finish();
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Plotting

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t col(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw eqps::ValidationError("CSV lacks column '" + name + "'");
  }
  double num(std::size_t r, std::size_t c) const {
    const auto v = eqps::detail::parse_double(rows[r][c]);
    if (!v) throw eqps::ParseError("not a number: '" + rows[r][c] + "'", r + 2);
    return *v;
  }
};

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw eqps::ValidationError("cannot open " + path);
  CsvTable t;
  std::string line;
  if (!std::getline(in, line) || eqps::detail::trim(line).empty()) {
    throw eqps::ValidationError(path + ": empty CSV");
  }
  for (auto f : eqps::detail::split_csv_line(line)) t.header.emplace_back(eqps::detail::trim(f));
  while (std::getline(in, line)) {
    if (eqps::detail::trim(line).empty()) continue;
    std::vector<std::string> row;
    for (auto f : eqps::detail::split_csv_line(line)) row.emplace_back(eqps::detail::trim(f));
    if (row.size() != t.header.size()) {
      throw eqps::ParseError("expected " + std::to_string(t.header.size()) + " fields", t.rows.size() + 2);
    }
    t.rows.push_back(std::move(row));
  }
  if (t.rows.empty()) throw eqps::ValidationError(path + ": CSV has no data rows");
  return t;
}

std::string render(const eqps::svg::Chart& c) {
  std::ostringstream s;
  eqps::svg::write(s, c);
  return s.str();
}

int cmd_plot(const Options& opt, const std::vector<std::string>& inputs) {
  Run run(opt, "plot");
  if (inputs.empty()) throw eqps::ConfigError("plot needs at least one --input CSV");
  for (const auto& path : inputs) {
    const auto t = read_csv(path);
    const std::string stem = fs::path(path).stem().string();
    auto has = [&](const char* c) { return std::find(t.header.begin(), t.header.end(), c) != t.header.end(); };
    if (has("mean_weight")) {
      // One panel per delta; one line per lambda; x = beta3.
      const auto cx = t.col("beta3"), cl = t.col("lambda"), cd = t.col("delta"), cw = t.col("mean_weight");
      std::map<std::string, std::map<std::string, eqps::svg::Series>> panels;
      for (std::size_t r = 0; r < t.rows.size(); ++r) {
        auto& s = panels[t.rows[r][cd]][t.rows[r][cl]];
        s.label = "lambda=" + t.rows[r][cl];
        s.x.push_back(t.num(r, cx));
        s.y.push_back(t.num(r, cw));
      }
      for (auto& [delta, lines] : panels) {
        eqps::svg::Chart c;
        c.title = "Borrowing weight, delta=" + delta;
        c.x_label = "heterogeneity (beta3)";
        c.y_label = "mean 1 - omega_Eq";
        for (auto& [l, s] : lines) c.series.push_back(s);
        run.emit(stem + "_delta_" + delta + ".svg", render(c));
      }
    } else if (has("ratio")) {
      const auto cx = t.col("heterogeneity"), cl = t.col("lambda"), cd = t.col("delta"), cr = t.col("ratio");
      std::map<std::string, std::map<std::string, eqps::svg::Series>> panels;
      for (std::size_t r = 0; r < t.rows.size(); ++r) {
        auto& s = panels[t.rows[r][cd]][t.rows[r][cl]];
        s.label = "lambda=" + t.rows[r][cl];
        s.x.push_back(t.num(r, cx));
        s.y.push_back(t.num(r, cr));
      }
      for (auto& [delta, lines] : panels) {
        eqps::svg::Chart c;
        c.title = "Relative sample size, delta=" + delta;
        c.x_label = "heterogeneity";
        c.y_label = "N method / N no borrowing";
        for (auto& [l, s] : lines) c.series.push_back(s);
        run.emit(stem + "_delta_" + delta + ".svg", render(c));
      }
    } else if (has("density")) {
      const auto cs = t.col("scaling"), cm = t.col("method"), cx = t.col("x"), cd = t.col("density");
      std::map<std::string, std::map<std::string, eqps::svg::Series>> panels;
      for (std::size_t r = 0; r < t.rows.size(); ++r) {
        auto& s = panels[t.rows[r][cs]][t.rows[r][cm]];
        s.label = t.rows[r][cm];
        s.x.push_back(t.num(r, cx));
        s.y.push_back(t.num(r, cd));
      }
      for (auto& [scaling, lines] : panels) {
        eqps::svg::Chart c;
        c.title = "Posterior of theta_t - theta_c, real-world data x" + scaling;
        c.x_label = "risk difference";
        c.y_label = "density";
        c.reference_x = 0.25;
        for (auto& [m, s] : lines) c.series.push_back(s);
        run.emit(stem + "_x" + scaling + ".svg", render(c));
      }
    } else {
      throw eqps::ValidationError(path + ": unrecognised CSV schema");
    }
  }
  run.finish();
  return kExitOk;
}

int cmd_verify(const std::string& manifest_path) {
  const auto m = eqps::load_json(manifest_path);
  if (!m.contains("outputs") || !m["outputs"].is_array()) {
    throw eqps::ValidationError(manifest_path + ": not a run manifest");
  }
  const fs::path dir = fs::path(manifest_path).parent_path();
  int bad = 0;
  for (const auto& o : m["outputs"]) {
    const std::string name = o.at("path").get<std::string>();
    const fs::path p = dir / name;
    if (!fs::exists(p)) {
      std::cout << "MISSING  " << name << "\n";
      ++bad;
      continue;
    }
    const bool ok = sha256_hex(read_file(p)) == o.at("sha256").get<std::string>();
    std::cout << (ok ? "OK       " : "MISMATCH ") << name << "\n";
    bad += ok ? 0 : 1;
  }
  if (bad > 0) throw eqps::ValidationError(std::to_string(bad) + " output(s) failed verification");
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Propensity-stratified, equivalence-weighted robust MAP borrowing"};
  app.set_version_flag("--version", std::string(eqps::kVersion));
  app.require_subcommand(0, 1);
  Options opt;
  std::string verify_path;
  app.add_option("--verify", verify_path, "Re-hash the outputs listed in a run manifest");

  auto common = [&](CLI::App* sub) {
    sub->add_option_function<std::uint64_t>(
        "--seed", [&](const std::uint64_t& s) { opt.seed = s; opt.seed_set = true; }, "Master seed");
    sub->add_option("--threads", opt.threads, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--out-dir", opt.out_dir, "Output directory (default $EQPS_OUT_DIR or ./out)");
    sub->add_option("--preset", opt.preset, "Scale preset")->check(CLI::IsMember({"desk", "full", "paper"}));
    sub->add_option("--config", opt.config_path, "JSON configuration file")->check(CLI::ExistingFile);
    sub->add_option("--methods", opt.methods, "Comma-separated methods: noborrow,map,rmap,ebrmap,psmap,eqps");
    sub->add_flag("--strict", opt.strict, "Exit 3 when MCMC diagnostics fail");
    sub->add_flag("--print-config", opt.print_config, "Print the effective configuration and exit");
    sub->add_flag("--quiet", opt.quiet, "No progress messages");
  };

  std::vector<std::string> data_files;
  std::string aggregate;
  bool dump_draws = false;
  auto* analyze = app.add_subcommand("analyze", "Analyse one trial with external and real-world data");
  common(analyze);
  analyze->add_option("--data", data_files, "Subject CSV file(s)");
  analyze->add_option("--aggregate", aggregate, "Aggregate JSON to reconstruct subjects from");
  analyze->add_flag("--dump-draws", dump_draws, "Write hierarchical-model draws");

  auto* simulate = app.add_subcommand("simulate", "Operating characteristics over the scenario grid");
  common(simulate);
  simulate->add_option("--replicates", opt.replicates, "Replicates per scenario")->check(CLI::PositiveNumber);
  simulate->add_flag("--records", opt.records, "Also write per-replicate records.csv");
  simulate->add_flag("--timing", opt.timing, "Include runtimes in records.csv");

  auto* curve = app.add_subcommand("weights-curve", "Mean borrowing weight versus heterogeneity");
  common(curve);
  curve->add_option("--replicates", opt.replicates, "Replicates per point")->check(CLI::PositiveNumber);

  auto* ssize = app.add_subcommand("sample-size", "Required current-trial sample size");
  common(ssize);

  std::string case_aggregate;
  auto* cstudy = app.add_subcommand("case-study", "Aggregate-data case study with real-world scaling");
  common(cstudy);
  cstudy->add_option("--aggregate", case_aggregate, "Aggregate JSON")->required();

  std::vector<std::string> plot_inputs;
  auto* plot = app.add_subcommand("plot", "SVG plots from curve, sample-size or density CSVs");
  common(plot);
  plot->add_option("--input", plot_inputs, "CSV input(s)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (!verify_path.empty()) return cmd_verify(verify_path);
    if (app.get_subcommands().empty()) {
      std::cout << app.help();
      return kExitValidation;
    }
    if (opt.print_config) {
      Run run(opt, "print-config");
      std::cout << eqps::to_json(run.config()).dump(2) << "\n";
      return kExitOk;
    }
    if (analyze->parsed()) return cmd_analyze(opt, data_files, aggregate, dump_draws);
    if (simulate->parsed()) return cmd_simulate(opt);
    if (curve->parsed()) return cmd_weights_curve(opt);
    if (ssize->parsed()) return cmd_sample_size(opt);
    if (cstudy->parsed()) return cmd_case_study(opt, case_aggregate);
    if (plot->parsed()) return cmd_plot(opt, plot_inputs);
  } catch (const DiagnosticFailure& e) {
    std::cerr << "diagnostic failure: " << e.what() << "\n";
    return kExitDiagnostic;
  } catch (const eqps::EstimationError& e) {
    std::cerr << "estimation failure: " << e.what() << "\n";
    return kExitDiagnostic;
  } catch (const eqps::ConvergenceError& e) {
    std::cerr << "convergence failure: " << e.what() << "\n";
    return kExitDiagnostic;
  } catch (const eqps::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const eqps::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const eqps::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const eqps::DomainError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
