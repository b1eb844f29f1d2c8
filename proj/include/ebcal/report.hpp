#pragma once

// Text renderings of estimate, grid and oracle results. Every renderer is a
// pure function of its inputs, so identical results give identical bytes.

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ebcal/estimators.hpp"
#include "ebcal/io.hpp"
#include "ebcal/simulation.hpp"
#include "ebcal/theory.hpp"

namespace ebcal {

inline constexpr int kReportSchemaVersion = 1;

enum class ReportFormat { Table, Json, Csv };

inline std::optional<ReportFormat> parse_format(std::string_view s) {
  if (s == "table") return ReportFormat::Table;
  if (s == "json") return ReportFormat::Json;
  if (s == "csv") return ReportFormat::Csv;
  return std::nullopt;
}

struct ReportOptions {
  ReportFormat format = ReportFormat::Table;
  bool percent = false;  // bias, RMSE and SD multiplied by 100
};

namespace detail {

inline nlohmann::json number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

inline nlohmann::json vector_json(const Eigen::VectorXd& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(number(v[i]));
  return a;
}

inline std::string fixed(double v, int precision = 6) {
  if (!std::isfinite(v)) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

inline std::string csv_number(double v) { return std::isfinite(v) ? format_double(v) : std::string("NA"); }

/// Left-aligned first column, right-aligned rest.
inline std::string render_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size());
  for (std::size_t j = 0; j < header.size(); ++j) width[j] = header[j].size();
  for (const auto& r : rows)
    for (std::size_t j = 0; j < r.size(); ++j) width[j] = std::max(width[j], r[j].size());
  auto line = [&](const std::vector<std::string>& cells) {
    std::string s;
    for (std::size_t j = 0; j < cells.size(); ++j) {
      const std::string pad(width[j] - cells[j].size(), ' ');
      if (j) s += "  ";
      s += j == 0 ? cells[j] + pad : pad + cells[j];
    }
    while (!s.empty() && s.back() == ' ') s.pop_back();
    return s + "\n";
  };
  std::string out = line(header);
  std::size_t total = 0;
  for (auto w : width) total += w;
  out += std::string(total + 2 * (width.size() - 1), '-') + "\n";
  for (const auto& r : rows) out += line(r);
  return out;
}

inline std::string render_csv(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t j = 0; j < cells.size(); ++j) out += (j ? "," : "") + csv_field(cells[j]);
    out += "\n";
  };
  line(header);
  for (const auto& r : rows) line(r);
  return out;
}

inline std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

}  // namespace detail

/// One row per estimate: tau-hat, ESS per arm and solver status.
inline std::string render_estimates(const std::vector<EstimateReport>& reports, const ReportOptions& opt = {}) {
  if (reports.empty()) throw Error(ErrorCode::InvalidArgument, "no estimates to report");
  if (opt.format == ReportFormat::Json) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : reports)
      rows.push_back({{"method", method_label(r.method)},
                      {"tau", detail::number(r.tau)},
                      {"ess_treated", detail::number(r.diagnostics.ess_treated)},
                      {"ess_control", detail::number(r.diagnostics.ess_control)},
                      {"weight_min", detail::number(r.diagnostics.min)},
                      {"weight_max", detail::number(r.diagnostics.max)},
                      {"iterations", r.solver_iterations},
                      {"gradient_norm", detail::number(r.gradient_norm)},
                      {"converged", r.converged}});
    return detail::dump({{"schema", "ebcal.estimates"}, {"version", kReportSchemaVersion}, {"estimates", rows}});
  }
  const std::vector<std::string> header{"method", "tau", "ess_treated", "ess_control", "w_min",
                                        "w_max",  "iterations", "grad_norm", "status"};
  std::vector<std::vector<std::string>> rows;
  const bool csv = opt.format == ReportFormat::Csv;
  for (const auto& r : reports) {
    auto num = [&](double v) { return csv ? detail::csv_number(v) : detail::fixed(v); };
    char grad[32];
    std::snprintf(grad, sizeof grad, "%.3g", r.gradient_norm);
    rows.push_back({method_label(r.method), num(r.tau), num(r.diagnostics.ess_treated), num(r.diagnostics.ess_control),
                    num(r.diagnostics.min), num(r.diagnostics.max), std::to_string(r.solver_iterations),
                    csv ? detail::csv_number(r.gradient_norm) : std::string(grad),
                    r.converged ? "converged" : "not_converged"});
  }
  return csv ? detail::render_csv(header, rows) : detail::render_table(header, rows);
}

/// One row per (scenario, method). The JSON form also carries boxplot
/// quantiles and every per-replicate error for external plotting.
inline std::string render_grid(const std::vector<ScenarioResult>& results, const ReportOptions& opt = {}) {
  if (results.empty()) throw Error(ErrorCode::InvalidArgument, "no scenarios to report");
  for (const auto& s : results)
    if (s.methods.empty()) throw Error(ErrorCode::InvalidArgument, "scenario '" + s.config.name + "' has no methods");
  const double scale = opt.percent ? 100.0 : 1.0;
  if (opt.format == ReportFormat::Json) {
    nlohmann::json scen = nlohmann::json::array();
    for (const auto& s : results) {
      nlohmann::json methods = nlohmann::json::array();
      for (const auto& m : s.methods) {
        nlohmann::json errors = nlohmann::json::array();
        for (double e : m.errors) errors.push_back(detail::number(e));
        nlohmann::json outliers = nlohmann::json::array();
        for (double e : m.box.outliers) outliers.push_back(detail::number(e));
        methods.push_back({{"method", method_label(m.method)},
                           {"bias", detail::number(scale * m.bias)},
                           {"rmse", detail::number(scale * m.rmse)},
                           {"sd", detail::number(scale * m.sd)},
                           {"failures", m.failures},
                           {"successes", m.successes},
                           {"quantiles",
                            {{"min", m.box.min},
                             {"q1", m.box.q1},
                             {"median", m.box.median},
                             {"q3", m.box.q3},
                             {"max", m.box.max},
                             {"lower_whisker", m.box.lower_whisker},
                             {"upper_whisker", m.box.upper_whisker},
                             {"outliers", outliers}}},
                           {"errors", errors}});
      }
      scen.push_back({{"scenario", s.config.name},
                      {"config", to_json(s.config)},
                      {"tau_star", detail::number(s.tau_star)},
                      {"ns_min", s.ns_min},
                      {"ns_max", s.ns_max},
                      {"ns_mean", s.ns_mean},
                      {"redraws", s.redraws},
                      {"methods", methods}});
    }
    return detail::dump({{"schema", "ebcal.grid"},
                         {"version", kReportSchemaVersion},
                         {"scale", scale},
                         {"scenarios", scen}});
  }
  const bool csv = opt.format == ReportFormat::Csv;
  const std::vector<std::string> header{"scenario", "method", "tau_star", "bias", "rmse", "sd", "failures", "ns_mean"};
  std::vector<std::vector<std::string>> rows;
  for (const auto& s : results)
    for (const auto& m : s.methods) {
      auto num = [&](double v, int p) { return csv ? detail::csv_number(v) : detail::fixed(v, p); };
      rows.push_back({s.config.name, method_label(m.method), num(s.tau_star, 4), num(scale * m.bias, opt.percent ? 2 : 4),
                      num(scale * m.rmse, opt.percent ? 2 : 4), num(scale * m.sd, opt.percent ? 2 : 4),
                      std::to_string(m.failures), num(s.ns_mean, 1)});
    }
  return csv ? detail::render_csv(header, rows) : detail::render_table(header, rows);
}

/// Long-format boxplot records: scenario, method, statistic, value.
inline std::string render_quantiles_csv(const std::vector<ScenarioResult>& results) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& s : results)
    for (const auto& m : s.methods) {
      const auto& b = m.box;
      const std::pair<const char*, double> stats[] = {{"min", b.min},
                                                      {"q1", b.q1},
                                                      {"median", b.median},
                                                      {"q3", b.q3},
                                                      {"max", b.max},
                                                      {"lower_whisker", b.lower_whisker},
                                                      {"upper_whisker", b.upper_whisker}};
      for (const auto& [k, v] : stats) rows.push_back({s.config.name, method_label(m.method), k, detail::csv_number(v)});
      for (double o : b.outliers) rows.push_back({s.config.name, method_label(m.method), "outlier", detail::csv_number(o)});
    }
  return detail::render_csv({"scenario", "method", "statistic", "value"}, rows);
}

inline std::string render_oracle(const std::string& name, const AsymptoticReport& r, const ReportOptions& opt = {}) {
  if (opt.format == ReportFormat::Json) {
    return detail::dump({{"schema", "ebcal.oracle"},
                         {"version", kReportSchemaVersion},
                         {"scenario", name},
                         {"hypothesis_holds", r.hypothesis_holds},
                         {"lambda0_star", detail::vector_json(r.lambda0_star)},
                         {"lambda_pi", detail::vector_json(r.lambda_pi)},
                         {"gamma_pi", detail::vector_json(r.gamma_pi)},
                         {"rtilde_mean", detail::number(r.rtilde_mean)},
                         {"rho_bar", detail::number(r.rho_bar)},
                         {"tau_star", detail::number(r.tau_star)},
                         {"v1", detail::number(r.v1)},
                         {"v2", detail::number(r.v2)},
                         {"v3", detail::number(r.v3)},
                         {"total", detail::number(r.total)},
                         {"bound", detail::number(r.bound)},
                         {"gap", detail::number(r.gap)},
                         {"conditions",
                          {{"a", to_string(r.conditions.a)},
                           {"b", to_string(r.conditions.b)},
                           {"c", to_string(r.conditions.c)}}}});
  }
  const bool csv = opt.format == ReportFormat::Csv;
  auto num = [&](double v) { return csv ? detail::csv_number(v) : detail::fixed(v); };
  std::vector<std::vector<std::string>> rows{
      {"hypothesis_holds", r.hypothesis_holds ? "yes" : "no"},
      {"tau_star", num(r.tau_star)},
      {"rho_bar", num(r.rho_bar)},
      {"rtilde_mean", num(r.rtilde_mean)},
      {"v1", num(r.v1)},
      {"v2", num(r.v2)},
      {"v3", num(r.v3)},
      {"total", num(r.total)},
      {"bound", num(r.bound)},
      {"gap", num(r.gap)},
      {"condition_a", std::string(to_string(r.conditions.a))},
      {"condition_b", std::string(to_string(r.conditions.b))},
      {"condition_c", std::string(to_string(r.conditions.c))},
  };
  if (csv) return detail::render_csv({"quantity", "value"}, rows);
  return name + "\n" + detail::render_table({"quantity", "value"}, rows);
}

/// Per-row weights with the producing method as provenance.
inline std::string render_weights_csv(const SourceSample& sample, const WeightSet& w) {
  if (w.w.size() != sample.size()) throw Error(ErrorCode::LengthMismatch, "weights are not aligned with the sample");
  std::vector<std::vector<std::string>> rows;
  for (Eigen::Index i = 0; i < w.w.size(); ++i)
    rows.push_back({std::to_string(i + 1), std::to_string(sample.A()[i]), format_double(w.w[i]),
                    std::string(to_string(w.method))});
  return detail::render_csv({"row", "arm", "weight", "method"}, rows);
}

inline void emit_report(const std::filesystem::path& path, const std::string& text) { write_file_atomic(path, text); }

}  // namespace ebcal
