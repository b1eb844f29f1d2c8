#pragma once

// Covariate-function sets H (target-summarised terms) and G (extra
// treated/control balance terms), their evaluation on source data and the
// standardization that the dual solver works in.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ebcal/error.hpp"

namespace ebcal {

enum class TermKind { Constant, Identity, Power, Indicator, Product, Custom };

/// Closed registry of scalar transforms usable in custom terms.
enum class Transform { Log1p, ExpClip, Abs };

inline constexpr double kExpClipBound = 20.0;

inline std::string_view to_string(Transform t) {
  switch (t) {
    case Transform::Log1p: return "log1p";
    case Transform::ExpClip: return "expclip";
    case Transform::Abs: return "abs";
  }
  return "?";
}

inline std::optional<Transform> transform_from_string(std::string_view name) {
  if (name == "log1p") return Transform::Log1p;
  if (name == "expclip") return Transform::ExpClip;
  if (name == "abs") return Transform::Abs;
  return std::nullopt;
}

inline double apply_transform(Transform t, double x) {
  switch (t) {
    case Transform::Log1p: return std::log1p(x);
    case Transform::ExpClip: return std::exp(std::clamp(x, -kExpClipBound, kExpClipBound));
    case Transform::Abs: return std::abs(x);
  }
  return x;
}

struct Term {
  TermKind kind = TermKind::Constant;
  int var = -1;
  int var2 = -1;         // second factor of a Product
  int degree = 1;        // Power only, >= 2
  double category = 0;   // Indicator only
  Transform transform = Transform::Abs;  // Custom only

  static Term constant() { return {}; }
  static Term identity(int v) { return {TermKind::Identity, v}; }
  static Term power(int v, int d) { return {TermKind::Power, v, -1, d}; }
  static Term indicator(int v, double category) {
    return {TermKind::Indicator, v, -1, 1, category};
  }
  static Term product(int a, int b) { return {TermKind::Product, std::min(a, b), std::max(a, b)}; }
  static Term custom(Transform t, int v) { return {TermKind::Custom, v, -1, 1, 0, t}; }

  bool operator==(const Term& o) const {
    if (kind != o.kind) return false;
    switch (kind) {
      case TermKind::Constant: return true;
      case TermKind::Identity: return var == o.var;
      case TermKind::Power: return var == o.var && degree == o.degree;
      case TermKind::Indicator: return var == o.var && category == o.category;
      case TermKind::Product: return var == o.var && var2 == o.var2;
      case TermKind::Custom: return var == o.var && transform == o.transform;
    }
    return false;
  }

  int max_var() const { return std::max(var, var2); }

  double evaluate(std::span<const double> x) const {
    switch (kind) {
      case TermKind::Constant: return 1.0;
      case TermKind::Identity: return x[var];
      case TermKind::Power: return std::pow(x[var], degree);
      case TermKind::Indicator: return x[var] == category ? 1.0 : 0.0;
      case TermKind::Product: return x[var] * x[var2];
      case TermKind::Custom: return apply_transform(transform, x[var]);
    }
    return 0.0;
  }
};

/// Column names plus, for categorical columns, the level labels behind the
/// integer codes stored in X.
struct CovariateInfo {
  std::vector<std::string> names;
  std::vector<std::vector<std::string>> levels;

  std::string name(int var) const {
    if (var >= 0 && static_cast<std::size_t>(var) < names.size()) return names[var];
    return "x" + std::to_string(var + 1);
  }

  std::string level(int var, double code) const {
    if (var >= 0 && static_cast<std::size_t>(var) < levels.size() && !levels[var].empty()) {
      auto idx = static_cast<std::size_t>(code);
      if (code >= 0 && idx < levels[var].size() && static_cast<double>(idx) == code)
        return levels[var][idx];
    }
    std::ostringstream os;
    os << code;
    return os.str();
  }
};

inline std::string term_name(const Term& t, const CovariateInfo& info) {
  switch (t.kind) {
    case TermKind::Constant: return "const";
    case TermKind::Identity: return info.name(t.var);
    case TermKind::Power: return info.name(t.var) + "^" + std::to_string(t.degree);
    case TermKind::Indicator: return info.name(t.var) + "==" + info.level(t.var, t.category);
    case TermKind::Product: return info.name(t.var) + "*" + info.name(t.var2);
    case TermKind::Custom:
      return std::string(to_string(t.transform)) + "(" + info.name(t.var) + ")";
  }
  return "?";
}

/// Ordered H and G term lists. H always starts with the single constant term.
class BasisSpec {
 public:
  BasisSpec(std::vector<Term> h_terms, std::vector<Term> g_terms = {})
      : h_(std::move(h_terms)), g_(std::move(g_terms)) {
    if (h_.empty() || h_.front().kind != TermKind::Constant)
      throw Error(ErrorCode::InvalidArgument, "the first H term must be the constant");
    auto is_const = [](const Term& t) { return t.kind == TermKind::Constant; };
    if (std::count_if(h_.begin(), h_.end(), is_const) != 1 || std::any_of(g_.begin(), g_.end(), is_const))
      throw Error(ErrorCode::InvalidArgument, "exactly one constant term is allowed and it must be H-side");
    std::vector<Term> all(h_);
    all.insert(all.end(), g_.begin(), g_.end());
    for (std::size_t i = 0; i < all.size(); ++i) {
      const Term& t = all[i];
      if (t.kind == TermKind::Power && t.degree < 2)
        throw Error(ErrorCode::InvalidArgument, "power terms need degree >= 2");
      if (t.kind != TermKind::Constant && t.var < 0)
        throw Error(ErrorCode::IndexOutOfRange, "negative covariate index");
      if (t.kind == TermKind::Product && t.var2 < 0)
        throw Error(ErrorCode::IndexOutOfRange, "negative covariate index");
      for (std::size_t j = 0; j < i; ++j)
        if (all[j] == t) throw Error(ErrorCode::InvalidArgument, "duplicate basis term");
    }
  }

  /// H = (1, x_k for k in h_vars), G = (x_k for k in g_vars).
  static BasisSpec linear(std::span<const int> h_vars, std::span<const int> g_vars) {
    std::vector<Term> h{Term::constant()};
    std::vector<Term> g;
    for (int v : h_vars) h.push_back(Term::identity(v));
    for (int v : g_vars) g.push_back(Term::identity(v));
    return BasisSpec(std::move(h), std::move(g));
  }

  const std::vector<Term>& h_terms() const { return h_; }
  const std::vector<Term>& g_terms() const { return g_; }
  int h_size() const { return static_cast<int>(h_.size()); }
  int g_size() const { return static_cast<int>(g_.size()); }

  int max_var() const {
    int m = -1;
    for (const auto& t : h_) m = std::max(m, t.max_var());
    for (const auto& t : g_) m = std::max(m, t.max_var());
    return m;
  }

  BasisSpec without_g() const { return BasisSpec(h_, {}); }

  std::vector<std::string> h_names(const CovariateInfo& info) const {
    std::vector<std::string> out;
    for (const auto& t : h_) out.push_back(term_name(t, info));
    return out;
  }
  std::vector<std::string> g_names(const CovariateInfo& info) const {
    std::vector<std::string> out;
    for (const auto& t : g_) out.push_back(term_name(t, info));
    return out;
  }

 private:
  std::vector<Term> h_;
  std::vector<Term> g_;
};

/// Indicator terms for every level of a categorical column except the first
/// (reference) level.
inline std::vector<Term> expand_categorical(int var, std::span<const double> categories) {
  std::vector<Term> out;
  for (std::size_t i = 1; i < categories.size(); ++i) out.push_back(Term::indicator(var, categories[i]));
  return out;
}

/// Individual-level source data. Rows with A == 1 form S1, the rest S0.
class SourceSample {
 public:
  SourceSample(Eigen::MatrixXd X, Eigen::VectorXi A, Eigen::VectorXd Y, CovariateInfo info = {})
      : X_(std::move(X)), A_(std::move(A)), Y_(std::move(Y)), info_(std::move(info)) {
    if (A_.size() != X_.rows() || Y_.size() != X_.rows())
      throw Error(ErrorCode::LengthMismatch, "X, A and Y must have the same number of rows");
    if (!X_.allFinite() || !Y_.allFinite())
      throw Error(ErrorCode::NonFiniteValue, "source sample contains non-finite values");
    for (Eigen::Index i = 0; i < A_.size(); ++i) {
      if (A_[i] == 1) treated_.push_back(i);
      else if (A_[i] == 0) control_.push_back(i);
      else throw Error(ErrorCode::NonBinaryTreatment, "treatment must be 0 or 1 (row " + std::to_string(i) + ")");
    }
    if (treated_.empty() || control_.empty())
      throw Error(ErrorCode::EmptyArm, "both treatment arms must be non-empty");
    if (info_.names.empty())
      for (Eigen::Index j = 0; j < X_.cols(); ++j) info_.names.push_back("x" + std::to_string(j + 1));
  }

  const Eigen::MatrixXd& X() const { return X_; }
  const Eigen::VectorXi& A() const { return A_; }
  const Eigen::VectorXd& Y() const { return Y_; }
  const CovariateInfo& info() const { return info_; }
  const std::vector<Eigen::Index>& treated() const { return treated_; }
  const std::vector<Eigen::Index>& control() const { return control_; }
  Eigen::Index size() const { return X_.rows(); }
  Eigen::Index covariates() const { return X_.cols(); }

  SourceSample with_outcome(Eigen::VectorXd Y) const { return SourceSample(X_, A_, std::move(Y), info_); }
  SourceSample with_treatment(Eigen::VectorXi A) const { return SourceSample(X_, std::move(A), Y_, info_); }

 private:
  Eigen::MatrixXd X_;
  Eigen::VectorXi A_;
  Eigen::VectorXd Y_;
  CovariateInfo info_;
  std::vector<Eigen::Index> treated_;
  std::vector<Eigen::Index> control_;
};

/// Affine map z = (raw - center) / scale applied to one basis column.
struct ColumnScaling {
  double center = 0.0;
  double scale = 1.0;
};

struct DesignMatrices {
  Eigen::MatrixXd H;
  Eigen::MatrixXd G;
  std::vector<ColumnScaling> h_scaling;
  std::vector<ColumnScaling> g_scaling;
  std::vector<std::string> h_names;
  std::vector<std::string> g_names;
  bool standardized = false;

  Eigen::Index rows() const { return H.rows(); }
  int h_size() const { return static_cast<int>(H.cols()); }
  int g_size() const { return static_cast<int>(G.cols()); }
};

struct TargetSummary {
  Eigen::VectorXd values;
  std::optional<double> n_t;
};

/// Raw (unstandardized) term values, one row per row of X.
inline Eigen::MatrixXd evaluate_terms(std::span<const Term> terms, const Eigen::MatrixXd& X) {
  Eigen::MatrixXd out(X.rows(), static_cast<Eigen::Index>(terms.size()));
  std::vector<double> row(static_cast<std::size_t>(X.cols()));
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (Eigen::Index j = 0; j < X.cols(); ++j) row[j] = X(i, j);
    for (std::size_t k = 0; k < terms.size(); ++k) out(i, static_cast<Eigen::Index>(k)) = terms[k].evaluate(row);
  }
  return out;
}

struct BasisOptions {
  bool standardize = true;
  bool allow_absent_categories = false;
};

namespace detail {

inline void check_terms(std::span<const Term> terms, const Eigen::MatrixXd& X, bool allow_absent) {
  for (const auto& t : terms) {
    if (t.max_var() >= X.cols())
      throw Error(ErrorCode::IndexOutOfRange,
                  "covariate index " + std::to_string(t.max_var()) + " >= " + std::to_string(X.cols()));
    if (t.kind == TermKind::Indicator && !allow_absent && !(X.col(t.var).array() == t.category).any())
      throw Error(ErrorCode::InvalidArgument, "indicator category absent from data");
  }
}

inline std::vector<ColumnScaling> standardize_columns(Eigen::MatrixXd& M, std::span<const Term> terms,
                                                      bool standardize, const std::vector<std::string>& names) {
  std::vector<ColumnScaling> scaling(static_cast<std::size_t>(M.cols()));
  const double n = static_cast<double>(M.rows());
  for (Eigen::Index k = 0; k < M.cols(); ++k) {
    if (terms[k].kind == TermKind::Constant) continue;
    const double mean = M.col(k).mean();
    const double sd = std::sqrt((M.col(k).array() - mean).square().sum() / n);
    if (!(sd > 1e-12 * std::max(1.0, std::abs(mean))))
      throw Error(ErrorCode::DegenerateBasisTerm, "zero-variance basis column '" + names[k] + "'");
    if (!standardize) continue;
    scaling[k] = {mean, sd};
    M.col(k) = (M.col(k).array() - mean) / sd;
  }
  return scaling;
}

}  // namespace detail

inline DesignMatrices evaluate_basis(const BasisSpec& spec, const SourceSample& sample,
                                     const BasisOptions& options = {}) {
  detail::check_terms(spec.h_terms(), sample.X(), options.allow_absent_categories);
  detail::check_terms(spec.g_terms(), sample.X(), options.allow_absent_categories);
  DesignMatrices d;
  d.h_names = spec.h_names(sample.info());
  d.g_names = spec.g_names(sample.info());
  d.H = evaluate_terms(spec.h_terms(), sample.X());
  d.G = evaluate_terms(spec.g_terms(), sample.X());
  if (!d.H.allFinite() || !d.G.allFinite())
    throw Error(ErrorCode::NonFiniteValue, "basis evaluation produced non-finite values");
  d.h_scaling = detail::standardize_columns(d.H, spec.h_terms(), options.standardize, d.h_names);
  d.g_scaling = detail::standardize_columns(d.G, spec.g_terms(), options.standardize, d.g_names);
  d.standardized = options.standardize;
  return d;
}

/// Maps raw target means of the H terms into the design's coordinates.
inline TargetSummary align_target_summary(const BasisSpec& spec, const Eigen::VectorXd& raw,
                                          const DesignMatrices& design,
                                          std::optional<double> n_t = std::nullopt) {
  if (raw.size() != spec.h_size() || raw.size() != design.h_size())
    throw Error(ErrorCode::LengthMismatch, "target summary has " + std::to_string(raw.size()) +
                                               " entries, basis has " + std::to_string(spec.h_size()) +
                                               " H terms");
  if (raw[0] != 1.0) throw Error(ErrorCode::ConstantTermNotOne, "constant term summary must equal 1");
  if (!raw.allFinite()) throw Error(ErrorCode::NonFiniteValue, "target summary is not finite");
  TargetSummary out{raw, n_t};
  for (Eigen::Index k = 1; k < raw.size(); ++k) {
    const auto& s = design.h_scaling[static_cast<std::size_t>(k)];
    out.values[k] = (raw[k] - s.center) / s.scale;
  }
  return out;
}

struct RankReport {
  int rank = 0;
  int columns = 0;
  double condition_number = 0.0;
  Eigen::VectorXd singular_values;
  bool deficient = false;
};

inline constexpr double kRankTolerance = 1e-10;

/// Numerical rank of [H | G]; QR first so the SVD only sees a small square
/// factor.
inline RankReport check_design_rank(const DesignMatrices& design) {
  Eigen::MatrixXd M(design.rows(), design.h_size() + design.g_size());
  M << design.H, design.G;
  RankReport r;
  r.columns = static_cast<int>(M.cols());
  if (M.cols() == 0) return r;
  Eigen::MatrixXd R;
  if (M.rows() > M.cols()) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(M);
    R = qr.matrixQR().topRows(M.cols()).triangularView<Eigen::Upper>();
  } else {
    R = M;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(R);
  Eigen::VectorXd s = Eigen::VectorXd::Zero(M.cols());
  s.head(svd.singularValues().size()) = svd.singularValues();
  r.singular_values = s;
  const double smax = s.maxCoeff();
  r.rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (smax > 0 && s[i] / smax >= kRankTolerance) ++r.rank;
  const double smin = s.minCoeff();
  r.condition_number = smin > 0 ? smax / smin : std::numeric_limits<double>::infinity();
  r.deficient = r.rank < r.columns;
  return r;
}

}  // namespace ebcal
