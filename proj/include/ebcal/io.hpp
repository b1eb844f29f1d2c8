#pragma once

// CSV source data, JSON target summaries and atomic file output.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "ebcal/basis.hpp"
#include "ebcal/basis_parser.hpp"
#include "ebcal/error.hpp"

namespace ebcal {

struct SourceSchema {
  std::string treatment = "A";
  std::string outcome = "Y";
  std::vector<std::string> covariates;  // empty: every other column
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  for (auto& f : out) f = std::string(trim(f));
  return out;
}

inline std::optional<double> parse_number(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

inline bool is_non_finite_token(std::string_view s) {
  std::string t(trim(s));
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (!t.empty() && (t[0] == '+' || t[0] == '-')) t.erase(0, 1);
  return t == "nan" || t == "inf" || t == "infinity" || t == "na";
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

inline std::string cell_label(std::size_t row, const std::string& column) {
  return "row " + std::to_string(row) + ", column '" + column + "'";
}

}  // namespace detail

/// 17 significant digits: parses back to the identical double.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Reads a header-led CSV. Covariate columns whose cells are not all numeric
/// are treated as categorical: levels are sorted and stored as codes 0..L-1.
/// Rows are numbered from 1 (the first data row) in error messages.
inline SourceSample load_source_csv(const std::filesystem::path& path, const SourceSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::InvalidArgument, "'" + path.string() + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_csv_line(line);
  auto column_of = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw Error(ErrorCode::MissingColumn, "column '" + name + "' not found in header");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t a_col = column_of(schema.treatment);
  const std::size_t y_col = column_of(schema.outcome);
  std::vector<std::string> cov_names = schema.covariates;
  if (cov_names.empty())
    for (std::size_t j = 0; j < header.size(); ++j)
      if (j != a_col && j != y_col) cov_names.push_back(header[j]);
  std::vector<std::size_t> cov_cols;
  for (const auto& name : cov_names) cov_cols.push_back(column_of(name));

  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (fields.size() != header.size())
      throw Error(ErrorCode::InvalidArgument, "row " + std::to_string(rows.size() + 1) + " has " +
                                                  std::to_string(fields.size()) + " fields, header has " +
                                                  std::to_string(header.size()));
    rows.push_back(std::move(fields));
  }
  if (rows.empty()) throw Error(ErrorCode::InvalidArgument, "'" + path.string() + "' has no data rows");

  const auto n = static_cast<Eigen::Index>(rows.size());
  Eigen::VectorXi A(n);
  Eigen::VectorXd Y(n);
  Eigen::MatrixXd X(n, static_cast<Eigen::Index>(cov_cols.size()));
  CovariateInfo info;
  info.names = cov_names;
  info.levels.resize(cov_cols.size());

  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    const auto row_no = static_cast<std::size_t>(i) + 1;
    const auto a = detail::parse_number(r[a_col]);
    if (!a || (*a != 0.0 && *a != 1.0))
      throw Error(ErrorCode::NonBinaryTreatment, detail::cell_label(row_no, schema.treatment) + " holds '" +
                                                     r[a_col] + "', expected 0 or 1");
    A[i] = static_cast<int>(*a);
    const auto y = detail::parse_number(r[y_col]);
    if (!y || !std::isfinite(*y))
      throw Error(ErrorCode::NonFiniteValue, detail::cell_label(row_no, schema.outcome) +
                                                 (r[y_col].empty() ? " is empty" : " holds '" + r[y_col] + "'"));
    Y[i] = *y;
  }

  for (std::size_t k = 0; k < cov_cols.size(); ++k) {
    const std::size_t c = cov_cols[k];
    bool numeric = true;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& cell = rows[i][c];
      if (cell.empty()) throw Error(ErrorCode::NonFiniteValue, detail::cell_label(i + 1, cov_names[k]) + " is empty");
      if (detail::is_non_finite_token(cell))
        throw Error(ErrorCode::NonFiniteValue, detail::cell_label(i + 1, cov_names[k]) + " holds '" + cell + "'");
      if (!detail::parse_number(cell)) numeric = false;
    }
    if (numeric) {
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const double v = *detail::parse_number(rows[i][c]);
        if (!std::isfinite(v))
          throw Error(ErrorCode::NonFiniteValue, detail::cell_label(i + 1, cov_names[k]) + " is not finite");
        X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = v;
      }
      continue;
    }
    std::set<std::string> seen;
    for (const auto& r : rows) seen.insert(r[c]);
    info.levels[k].assign(seen.begin(), seen.end());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto it = std::find(info.levels[k].begin(), info.levels[k].end(), rows[i][c]);
      X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
          static_cast<double>(it - info.levels[k].begin());
    }
  }
  return SourceSample(std::move(X), std::move(A), std::move(Y), std::move(info));
}

/// Writes text to `path` through a sibling temporary file, so a failure never
/// leaves a partial file behind.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path parent = path.has_parent_path() ? path.parent_path() : fs::path(".");
  std::error_code ec;
  if (!fs::is_directory(parent, ec))
    throw Error(ErrorCode::Io, "output directory '" + parent.string() + "' does not exist");
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write '" + path.string() + "'");
    out << content;
    out.flush();
    if (!out) {
      out.close();
      fs::remove(tmp, ec);
      throw Error(ErrorCode::Io, "write to '" + path.string() + "' failed");
    }
  }
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error(ErrorCode::Io, "cannot move output into '" + path.string() + "'");
  }
}

/// CSV text of a sample; categorical columns are written as their labels.
inline std::string source_csv_text(const SourceSample& s, const SourceSchema& schema = {}) {
  std::ostringstream os;
  os << detail::csv_field(schema.treatment) << ',' << detail::csv_field(schema.outcome);
  for (Eigen::Index j = 0; j < s.covariates(); ++j) os << ',' << detail::csv_field(s.info().name(static_cast<int>(j)));
  os << '\n';
  const auto& levels = s.info().levels;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    os << s.A()[i] << ',' << format_double(s.Y()[i]);
    for (Eigen::Index j = 0; j < s.covariates(); ++j) {
      const bool categorical = static_cast<std::size_t>(j) < levels.size() && !levels[j].empty();
      os << ',';
      if (categorical) os << detail::csv_field(s.info().level(static_cast<int>(j), s.X()(i, j)));
      else os << format_double(s.X()(i, j));
    }
    os << '\n';
  }
  return os.str();
}

inline void write_source_csv(const std::filesystem::path& path, const SourceSample& s, const SourceSchema& schema = {}) {
  write_file_atomic(path, source_csv_text(s, schema));
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, "'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

/// Target means of the H terms in basis order.
struct RawTargetSummary {
  Eigen::VectorXd values;
  std::vector<std::string> names;
  std::optional<double> n_t;
};

/// Matches {"term": mean, ..., "n_t": count} to the H terms by name. The
/// constant may be omitted; when present it must equal 1.
inline RawTargetSummary target_summary_from_json(const nlohmann::json& j, const BasisSpec& spec,
                                                 const CovariateInfo& info) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "target summary must be a JSON object");
  RawTargetSummary out;
  out.names = spec.h_names(info);
  out.values = Eigen::VectorXd::Zero(spec.h_size());
  out.values[0] = 1.0;
  std::vector<bool> found(out.names.size(), false);
  found[0] = true;
  auto valid = [&] {
    std::string s;
    for (const auto& n : out.names) s += (s.empty() ? "" : ", ") + n;
    return s;
  };
  for (const auto& [key, value] : j.items()) {
    if (key == "n_t") {
      if (!value.is_number() || value.get<double>() <= 0)
        throw Error(ErrorCode::InvalidArgument, "n_t must be a positive number");
      out.n_t = value.get<double>();
      continue;
    }
    auto it = std::find(out.names.begin(), out.names.end(), key);
    if (it == out.names.end())
      throw Error(ErrorCode::UnknownTerm, "summary term '" + key + "' is not in H; valid names: " + valid());
    if (!value.is_number()) throw Error(ErrorCode::InvalidArgument, "summary term '" + key + "' is not a number");
    const auto k = static_cast<std::size_t>(it - out.names.begin());
    const double v = value.get<double>();
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, "summary term '" + key + "' is not finite");
    if (k == 0 && v != 1.0) throw Error(ErrorCode::ConstantTermNotOne, "constant term summary must equal 1");
    out.values[static_cast<Eigen::Index>(k)] = v;
    found[k] = true;
  }
  for (std::size_t k = 0; k < found.size(); ++k)
    if (!found[k]) throw Error(ErrorCode::MissingTerm, "summary lacks H term '" + out.names[k] + "'");
  return out;
}

inline RawTargetSummary load_target_summary(const std::filesystem::path& path, const BasisSpec& spec,
                                            const CovariateInfo& info = {}) {
  return target_summary_from_json(read_json_file(path), spec, info);
}

/// Process exit status for a library error: 2 validation, 3 solver
/// non-convergence, 4 I/O.
inline int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonConverged: return 3;
    case ErrorCode::Io: return 4;
    default: return 2;
  }
}

}  // namespace ebcal
