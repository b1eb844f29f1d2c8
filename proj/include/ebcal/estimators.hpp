#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ebcal/basis.hpp"
#include "ebcal/dual_solver.hpp"
#include "ebcal/error.hpp"

namespace ebcal {

struct LogisticOptions {
  int max_iterations = 100;
  double tolerance = 1e-8;
  double separation_norm = 1e3;
};

struct LogisticModel {
  Eigen::VectorXd coefficients;  // intercept first
  Eigen::VectorXd propensity;
  int iterations = 0;
  double score_norm = 0.0;
  bool converged = false;
};

namespace detail {

inline double logistic_loglik(const Eigen::VectorXd& eta, const Eigen::VectorXi& A) {
  double ll = 0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) ll += A[i] * eta[i] - log1pexp(eta[i]);
  return ll;
}

inline Eigen::VectorXd logistic(const Eigen::VectorXd& eta) {
  return eta.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

}  // namespace detail

/// Maximum-likelihood logistic regression of A on (1, Z) by IRLS with step
/// halving on the log-likelihood.
inline LogisticModel fit_logistic_irls(const Eigen::VectorXi& A, const Eigen::MatrixXd& Z,
                                       const LogisticOptions& opt = {}) {
  const Eigen::Index n = Z.rows();
  if (A.size() != n) throw Error(ErrorCode::LengthMismatch, "treatment and regressors differ in length");
  const Eigen::Index treated = (A.array() == 1).count();
  if (treated == 0 || treated == n) throw Error(ErrorCode::EmptyArm, "both treatment arms must be non-empty");
  Eigen::MatrixXd X(n, Z.cols() + 1);
  X << Eigen::VectorXd::Ones(n), Z;
  Eigen::VectorXd a = A.cast<double>();

  LogisticModel m;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(X.cols());
  Eigen::VectorXd eta = X * beta;
  double ll = detail::logistic_loglik(eta, A);
  Eigen::VectorXd p = detail::logistic(eta);
  Eigen::VectorXd score = X.transpose() * (a - p);
  int iter = 0;
  for (; iter < opt.max_iterations; ++iter) {
    if (score.lpNorm<Eigen::Infinity>() <= opt.tolerance) break;
    Eigen::VectorXd v = (p.array() * (1.0 - p.array())).matrix();
    Eigen::MatrixXd info = X.transpose() * (X.array().colwise() * v.array()).matrix();
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    Eigen::VectorXd step = ldlt.solve(score);
    if (ldlt.info() != Eigen::Success || !step.allFinite()) step = score;
    double t = 1.0;
    bool moved = false;
    while (t > 1e-10) {
      Eigen::VectorXd trial = beta + t * step;
      Eigen::VectorXd eta_t = X * trial;
      const double ll_t = detail::logistic_loglik(eta_t, A);
      if (ll_t >= ll - 1e-12 * std::abs(ll)) {
        beta = std::move(trial);
        eta = std::move(eta_t);
        ll = ll_t;
        moved = true;
        break;
      }
      t *= 0.5;
    }
    p = detail::logistic(eta);
    score = X.transpose() * (a - p);
    if (!moved || beta.norm() > opt.separation_norm) break;
  }
  m.coefficients = beta;
  m.propensity = p;
  m.iterations = iter;
  m.score_norm = score.lpNorm<Eigen::Infinity>();
  m.converged = m.score_norm <= opt.tolerance;

  // Perfect classification: every fitted probability of the observed label is
  // numerically one.
  double worst = 1.0;
  for (Eigen::Index i = 0; i < n; ++i) worst = std::min(worst, A[i] == 1 ? p[i] : 1.0 - p[i]);
  if (beta.norm() > opt.separation_norm || worst > 1.0 - 1e-8)
    throw Error(ErrorCode::SeparationDetected, "logistic coefficients diverge (norm " +
                                                   std::to_string(beta.norm()) + "); arms are separated");
  if (!m.converged)
    throw Error(ErrorCode::NonConverged, "logistic regression did not converge (score sup-norm " +
                                             std::to_string(m.score_norm) + ")");
  return m;
}

inline LogisticModel fit_logistic_irls(const SourceSample& sample, const std::vector<int>& columns,
                                       const LogisticOptions& opt = {}) {
  for (int c : columns)
    if (c < 0 || c >= sample.covariates()) throw Error(ErrorCode::IndexOutOfRange, "regressor column out of range");
  return fit_logistic_irls(sample.A(), sample.X()(Eigen::all, columns), opt);
}

struct WeightDiagnostics {
  double min = 0.0;
  double max = 0.0;
  double ess_treated = 0.0;
  double ess_control = 0.0;
};

struct EstimateReport {
  Method method = Method::Extended;
  double tau = std::numeric_limits<double>::quiet_NaN();
  WeightDiagnostics diagnostics;
  int solver_iterations = 0;
  double gradient_norm = 0.0;
  bool converged = true;
  WeightSet weights;
};

inline double effective_sample_size(const Eigen::VectorXd& w, const std::vector<Eigen::Index>& rows) {
  double s = 0, s2 = 0;
  for (Eigen::Index i : rows) {
    s += w[i];
    s2 += w[i] * w[i];
  }
  return s2 > 0 ? s * s / s2 : 0.0;
}

/// Weighted difference of arm means after rescaling each arm's weights to sum
/// to n.
inline EstimateReport estimate_weighted_ate(const SourceSample& sample, const WeightSet& weights) {
  if (weights.w.size() != sample.size())
    throw Error(ErrorCode::LengthMismatch, "weights are not aligned with the sample");
  if (!(weights.w.array() > 0).all() || !weights.w.allFinite())
    throw Error(ErrorCode::InvalidArgument, "weights must be positive and finite");
  Arms arms = Arms::of(sample);
  EstimateReport r;
  r.method = weights.method;
  r.weights = weights;
  detail::normalize_arms(r.weights.w, arms);
  r.weights.normalized = true;
  const auto& w = r.weights.w;
  const auto& Y = sample.Y();
  double t1 = 0, t0 = 0;
  for (Eigen::Index i : arms.treated) t1 += w[i] * Y[i];
  for (Eigen::Index i : arms.control) t0 += w[i] * Y[i];
  const double n = static_cast<double>(sample.size());
  r.tau = (t1 - t0) / n;
  r.diagnostics = {w.minCoeff(), w.maxCoeff(), effective_sample_size(w, arms.treated),
                   effective_sample_size(w, arms.control)};
  return r;
}

struct EstimatorOptions {
  SolverOptions solver{.normalize = true};
  BasisOptions basis;
  LogisticOptions logistic;
  std::optional<std::vector<int>> ipw_regressors;  // default: every covariate
  bool clip_propensity = false;
  double clip_low = 0.01;
  double clip_high = 0.99;
};

namespace detail {

inline Eigen::VectorXd inverse_propensity(const SourceSample& sample, const EstimatorOptions& opt,
                                          LogisticModel* model_out = nullptr) {
  std::vector<int> cols;
  if (opt.ipw_regressors) {
    cols = *opt.ipw_regressors;
  } else {
    for (int j = 0; j < sample.covariates(); ++j) cols.push_back(j);
  }
  LogisticModel m = fit_logistic_irls(sample, cols, opt.logistic);
  Eigen::VectorXd inv(sample.size());
  for (Eigen::Index i = 0; i < sample.size(); ++i) {
    double p = m.propensity[i];
    if (opt.clip_propensity) p = std::clamp(p, opt.clip_low, opt.clip_high);
    inv[i] = sample.A()[i] == 1 ? 1.0 / p : 1.0 / (1.0 - p);
  }
  if (model_out) *model_out = std::move(m);
  return inv;
}

inline EstimateReport report_from_solve(const SourceSample& sample, const SolveResult& r) {
  EstimateReport rep = estimate_weighted_ate(sample, r.weights);
  rep.solver_iterations = r.dual.iterations;
  rep.gradient_norm = r.dual.gradient_norm;
  rep.converged = r.dual.converged;
  return rep;
}

}  // namespace detail

/// Inverse propensity weights from a logistic fit; no target adjustment.
inline EstimateReport estimate_ipw(const SourceSample& sample, const EstimatorOptions& opt = {}) {
  LogisticModel m;
  WeightSet ws{detail::inverse_propensity(sample, opt, &m), false, Method::Ipw};
  EstimateReport r = estimate_weighted_ate(sample, ws);
  r.solver_iterations = m.iterations;
  r.gradient_norm = m.score_norm;
  return r;
}

/// Whole-sample exponential-tilting calibration times inverse propensity.
inline EstimateReport estimate_ipw_et(const SourceSample& sample, const BasisSpec& spec,
                                      const Eigen::VectorXd& raw_target, const EstimatorOptions& opt = {}) {
  const BasisSpec h_only = spec.without_g();
  DesignMatrices design = evaluate_basis(h_only, sample, opt.basis);
  TargetSummary target = align_target_summary(h_only, raw_target, design);
  SolverOptions so = opt.solver;
  so.normalize = false;
  SolveResult cal = solve_et_calibration(design, target, so);
  Eigen::VectorXd inv = detail::inverse_propensity(sample, opt);
  WeightSet ws{(cal.weights.w.array() * inv.array()).matrix(), false, Method::IpwEt};
  EstimateReport r = estimate_weighted_ate(sample, ws);
  r.solver_iterations = cal.dual.iterations;
  r.gradient_norm = cal.dual.gradient_norm;
  return r;
}

/// Per-arm calibration of H to the target means (G ignored).
inline EstimateReport estimate_ebal(const SourceSample& sample, const BasisSpec& spec,
                                    const Eigen::VectorXd& raw_target, const EstimatorOptions& opt = {}) {
  const BasisSpec h_only = spec.without_g();
  DesignMatrices design = evaluate_basis(h_only, sample, opt.basis);
  TargetSummary target = align_target_summary(h_only, raw_target, design);
  return detail::report_from_solve(sample, solve_ebal_h_only(design, target, Arms::of(sample), opt.solver));
}

/// Per-arm calibration of H plus treated/control balance of G.
inline EstimateReport estimate_extended(const SourceSample& sample, const BasisSpec& spec,
                                        const Eigen::VectorXd& raw_target, const EstimatorOptions& opt = {}) {
  DesignMatrices design = evaluate_basis(spec, sample, opt.basis);
  TargetSummary target = align_target_summary(spec, raw_target, design);
  EstimateReport r = detail::report_from_solve(sample, solve_extended(design, target, Arms::of(sample), opt.solver));
  r.method = Method::Extended;
  r.weights.method = Method::Extended;
  return r;
}

/// Table label of a comparison method.
inline std::string method_label(Method m) {
  switch (m) {
    case Method::Ipw: return "IPW";
    case Method::IpwEt: return "IPW+ET";
    case Method::EbalHOnly: return "EBAL";
    case Method::Extended: return "proposed";
    default: return std::string(to_string(m));
  }
}

/// Accepts ipw, ipw_et (or ipw+et), ebal, proposed (or extended).
inline std::optional<Method> parse_method(std::string_view name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "ipw") return Method::Ipw;
  if (s == "ipw_et" || s == "ipw+et") return Method::IpwEt;
  if (s == "ebal") return Method::EbalHOnly;
  if (s == "proposed" || s == "extended") return Method::Extended;
  return std::nullopt;
}

/// Unit-level weights of a comparison method before the per-arm rescaling
/// that estimate() applies. Solver weights follow opt.solver.normalize.
inline WeightSet compute_weights(Method method, const SourceSample& sample, const BasisSpec& spec,
                                 const Eigen::VectorXd& raw_target, const EstimatorOptions& opt = {}) {
  switch (method) {
    case Method::Ipw: return {detail::inverse_propensity(sample, opt), false, Method::Ipw};
    case Method::IpwEt: {
      const BasisSpec h_only = spec.without_g();
      DesignMatrices design = evaluate_basis(h_only, sample, opt.basis);
      SolverOptions so = opt.solver;
      so.normalize = false;
      SolveResult cal = solve_et_calibration(design, align_target_summary(h_only, raw_target, design), so);
      Eigen::VectorXd inv = detail::inverse_propensity(sample, opt);
      return {(cal.weights.w.array() * inv.array()).matrix(), false, Method::IpwEt};
    }
    case Method::EbalHOnly: {
      const BasisSpec h_only = spec.without_g();
      DesignMatrices design = evaluate_basis(h_only, sample, opt.basis);
      return solve_ebal_h_only(design, align_target_summary(h_only, raw_target, design), Arms::of(sample), opt.solver)
          .weights;
    }
    case Method::Extended: {
      DesignMatrices design = evaluate_basis(spec, sample, opt.basis);
      WeightSet w =
          solve_extended(design, align_target_summary(spec, raw_target, design), Arms::of(sample), opt.solver).weights;
      w.method = Method::Extended;
      return w;
    }
    default: break;
  }
  throw Error(ErrorCode::InvalidArgument, "method " + std::string(to_string(method)) + " is not an ATE estimator");
}

/// Dispatch on the four comparison methods.
inline EstimateReport estimate(Method method, const SourceSample& sample, const BasisSpec& spec,
                               const Eigen::VectorXd& raw_target, const EstimatorOptions& opt = {}) {
  switch (method) {
    case Method::Ipw: return estimate_ipw(sample, opt);
    case Method::IpwEt: return estimate_ipw_et(sample, spec, raw_target, opt);
    case Method::EbalHOnly: return estimate_ebal(sample, spec, raw_target, opt);
    case Method::Extended: return estimate_extended(sample, spec, raw_target, opt);
    default: break;
  }
  throw Error(ErrorCode::InvalidArgument, "method " + std::string(to_string(method)) + " is not an ATE estimator");
}

}  // namespace ebcal
