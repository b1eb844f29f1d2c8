// ebcal: weights, estimates, simulation grids and oracle reports from the
// command line.
//
// Exit status: 0 success, 2 validation error, 3 solver non-convergence,
// 4 I/O error.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "ebcal/basis_parser.hpp"
#include "ebcal/estimators.hpp"
#include "ebcal/io.hpp"
#include "ebcal/report.hpp"
#include "ebcal/scenario.hpp"
#include "ebcal/simulation.hpp"
#include "ebcal/theory.hpp"

namespace fs = std::filesystem;
using namespace ebcal;

namespace {

struct RunConfig {
  std::string source;
  std::string target_summary;
  std::string scenario;
  std::string out;
  std::string methods;
  std::string basis;
  std::string treatment = "A";
  std::string outcome = "Y";
  std::string format = "table";
  std::optional<std::uint64_t> seed;
  std::optional<int> replicates;
  int jobs = 1;
  int points = 16;
  double tol = 1e-10;
  int max_iter = 200;
  bool normalize = true;
  bool percent = false;
};

std::vector<Method> parse_methods(const std::string& text, const std::vector<Method>& fallback) {
  if (text.empty()) return fallback;
  std::vector<Method> out;
  for (auto tok : detail::split(text, ',')) {
    tok = detail::trim(tok);
    if (tok.empty()) continue;
    auto m = parse_method(tok);
    if (!m) throw Error(ErrorCode::InvalidArgument, "unknown method '" + std::string(tok) + "'");
    out.push_back(*m);
  }
  if (out.empty()) throw Error(ErrorCode::InvalidArgument, "method list is empty");
  return out;
}

ReportOptions report_options(const RunConfig& cfg) {
  auto f = parse_format(cfg.format);
  if (!f) throw Error(ErrorCode::InvalidArgument, "format must be table, json or csv");
  return {*f, cfg.percent};
}

std::string extension(ReportFormat f) {
  switch (f) {
    case ReportFormat::Json: return ".json";
    case ReportFormat::Csv: return ".csv";
    default: return ".txt";
  }
}

void require_file(const std::string& path, const char* flag) {
  if (path.empty()) throw Error(ErrorCode::InvalidArgument, std::string(flag) + " is required");
  if (!fs::is_regular_file(path)) throw Error(ErrorCode::Io, "cannot read '" + path + "'");
}

void check_out_dir(const RunConfig& cfg) {
  if (!cfg.out.empty() && !fs::is_directory(cfg.out))
    throw Error(ErrorCode::Io, "output directory '" + cfg.out + "' does not exist");
}

// Writes every (name, text) pair; all texts are rendered before any file is
// touched.
void deliver(const RunConfig& cfg, const std::vector<std::pair<std::string, std::string>>& files) {
  if (cfg.out.empty()) {
    for (const auto& [name, text] : files) std::cout << text;
    return;
  }
  for (const auto& [name, text] : files) emit_report(fs::path(cfg.out) / name, text);
}

EstimatorOptions estimator_options(const RunConfig& cfg) {
  if (!(cfg.tol > 0)) throw Error(ErrorCode::InvalidArgument, "--tol must be positive");
  if (cfg.max_iter < 1) throw Error(ErrorCode::InvalidArgument, "--max-iter must be at least 1");
  EstimatorOptions opt;
  opt.solver.tolerance = cfg.tol;
  opt.solver.max_iterations = cfg.max_iter;
  opt.solver.normalize = cfg.normalize;
  return opt;
}

struct Inputs {
  SourceSample sample;
  BasisSpec spec;
  RawTargetSummary target;
};

Inputs load_inputs(const RunConfig& cfg) {
  require_file(cfg.source, "--source");
  require_file(cfg.target_summary, "--target-summary");
  if (cfg.basis.empty()) throw Error(ErrorCode::InvalidArgument, "--basis is required");
  SourceSample sample = load_source_csv(cfg.source, {cfg.treatment, cfg.outcome, {}});
  BasisSpec spec = parse_basis(cfg.basis, sample.info(), &sample.X());
  RawTargetSummary target = load_target_summary(cfg.target_summary, spec, sample.info());
  return {std::move(sample), std::move(spec), std::move(target)};
}

int run_weights(const RunConfig& cfg) {
  check_out_dir(cfg);
  const auto methods = parse_methods(cfg.methods, {Method::Extended});
  if (methods.size() != 1) throw Error(ErrorCode::InvalidArgument, "weights takes exactly one method");
  Inputs in = load_inputs(cfg);
  WeightSet w = compute_weights(methods[0], in.sample, in.spec, in.target.values, estimator_options(cfg));
  deliver(cfg, {{"weights.csv", render_weights_csv(in.sample, w)}});
  return 0;
}

int run_estimate(const RunConfig& cfg) {
  check_out_dir(cfg);
  const auto methods = parse_methods(cfg.methods, comparison_methods());
  const ReportOptions ro = report_options(cfg);
  Inputs in = load_inputs(cfg);
  const EstimatorOptions opt = estimator_options(cfg);
  std::vector<EstimateReport> reports;
  for (Method m : methods) reports.push_back(estimate(m, in.sample, in.spec, in.target.values, opt));
  deliver(cfg, {{"estimates" + extension(ro.format), render_estimates(reports, ro)}});
  return 0;
}

std::vector<ScenarioConfig> load_scenarios(const RunConfig& cfg) {
  if (cfg.scenario.empty()) throw Error(ErrorCode::InvalidArgument, "--scenario is required");
  if (cfg.scenario == "builtin") return builtin_grid();
  require_file(cfg.scenario, "--scenario");
  auto configs = scenarios_from_json(read_json_file(cfg.scenario));
  if (!cfg.basis.empty())
    for (auto& c : configs) {
      c.basis = cfg.basis;
      (void)c.basis_spec();
    }
  return configs;
}

int run_simulate(const RunConfig& cfg) {
  check_out_dir(cfg);
  const auto methods = parse_methods(cfg.methods, comparison_methods());
  const ReportOptions ro = report_options(cfg);
  if (cfg.jobs < 1) throw Error(ErrorCode::InvalidArgument, "--jobs must be at least 1");
  if (cfg.replicates && *cfg.replicates < 1) throw Error(ErrorCode::InvalidArgument, "--replicates must be at least 1");
  auto configs = load_scenarios(cfg);
  GridOptions go;
  go.jobs = cfg.jobs;
  go.master_seed = cfg.seed;
  go.replicates = cfg.replicates;
  go.quadrature_points = cfg.points;
  go.estimator = estimator_options(cfg);
  auto results = run_grid(configs, methods, go);
  std::vector<std::pair<std::string, std::string>> files{{"grid" + extension(ro.format), render_grid(results, ro)}};
  if (!cfg.out.empty()) files.emplace_back("quantiles.csv", render_quantiles_csv(results));
  deliver(cfg, files);
  return 0;
}

int run_oracle(const RunConfig& cfg) {
  check_out_dir(cfg);
  const ReportOptions ro = report_options(cfg);
  auto configs = load_scenarios(cfg);
  std::string text;
  for (const auto& c : configs) {
    AsymptoticReport r = asymptotic_variance(truth_from_scenario(c), c.basis_spec(), scenario_grid(c, cfg.points));
    text += render_oracle(c.name, r, ro);
  }
  deliver(cfg, {{"oracle" + extension(ro.format), text}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Entropy-balancing calibration of a source sample to target summaries"};
  app.require_subcommand(1);
  RunConfig cfg;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--out", cfg.out, "Output directory (stdout when omitted)");
    sub->add_option("--format", cfg.format, "table, json or csv")->check(CLI::IsMember({"table", "json", "csv"}));
    sub->add_option("--methods", cfg.methods, "Comma list of ipw, ipw_et, ebal, proposed");
    sub->add_option("--basis", cfg.basis, "Basis, e.g. \"H:const,x1,x2;G:x3\"");
    sub->add_option("--tol", cfg.tol, "Dual gradient tolerance");
    sub->add_option("--max-iter", cfg.max_iter, "Newton iteration limit");
    sub->add_flag("--normalize,!--no-normalize", cfg.normalize, "Rescale weights to sum to n within each arm");
  };
  auto add_data = [&](CLI::App* sub) {
    sub->add_option("--source", cfg.source, "Source CSV");
    sub->add_option("--target-summary", cfg.target_summary, "Target summary JSON");
    sub->add_option("--treatment", cfg.treatment, "Treatment column");
    sub->add_option("--outcome", cfg.outcome, "Outcome column");
  };
  auto add_scenario = [&](CLI::App* sub) {
    sub->add_option("--scenario", cfg.scenario, "Scenario JSON, or 'builtin' for the built-in grid");
    sub->add_option("--points", cfg.points, "Gauss-Legendre points per dimension");
  };

  auto* weights = app.add_subcommand("weights", "Per-row weights as CSV");
  add_common(weights);
  add_data(weights);
  auto* est = app.add_subcommand("estimate", "Weighted ATE estimates");
  add_common(est);
  add_data(est);
  auto* sim = app.add_subcommand("simulate", "Monte Carlo scenario grid");
  add_common(sim);
  add_scenario(sim);
  sim->add_option("--seed", cfg.seed, "Master seed overriding the scenario seeds");
  sim->add_option("--jobs", cfg.jobs, "Worker threads")->default_val(1);
  sim->add_option("--replicates", cfg.replicates, "Replicates per scenario");
  sim->add_flag("--percent", cfg.percent, "Report bias, RMSE and SD times 100");
  auto* orc = app.add_subcommand("oracle", "Asymptotic variance report");
  add_common(orc);
  add_scenario(orc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*weights) return run_weights(cfg);
    if (*est) return run_estimate(cfg);
    if (*sim) return run_simulate(cfg);
    if (*orc) return run_oracle(cfg);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
