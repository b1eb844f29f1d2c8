#pragma once

// Population-level quantities of the extended balancing estimator, evaluated
// on a deterministic integration grid given the full data-generating truth:
// the limiting density ratio r~(x), projections onto Span{H} and Span{G-perp}
// under the r~-weighted source law, and the three-term asymptotic variance
// with the efficiency bound it is compared against.

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ebcal/basis.hpp"
#include "ebcal/dual_solver.hpp"
#include "ebcal/error.hpp"
#include "ebcal/quadrature.hpp"

namespace ebcal {

using CovariateFunction = std::function<double(std::span<const double>)>;

/// logit pi(x) = lambda_pi' H(x) + gamma_pi' G(x), raw term units.
struct LogisticDecomposition {
  Eigen::VectorXd lambda_pi;
  Eigen::VectorXd gamma_pi;
};

struct TruthFunctions {
  CovariateFunction propensity;     // pi(x)
  CovariateFunction participation;  // rho(x)
  CovariateFunction mu0;
  CovariateFunction mu1;
  CovariateFunction sigma0_sq;
  CovariateFunction sigma1_sq;
  std::optional<LogisticDecomposition> decomposition;  // detected numerically when empty

  double tau(std::span<const double> x) const { return mu1(x) - mu0(x); }
  double baseline(std::span<const double> x) const { return 0.5 * (mu1(x) + mu0(x)); }
};

enum class ConditionStatus { Holds, Fails };

inline std::string_view to_string(ConditionStatus s) { return s == ConditionStatus::Holds ? "holds" : "fails"; }

/// Truth tabulated on grid nodes.
struct TruthOnGrid {
  Eigen::VectorXd weight;  // probability weight of each node under the covariate law
  Eigen::VectorXd pi, rho, mu0, mu1, s0, s1;
  Eigen::MatrixXd H, G;  // raw basis values
  double rho_bar = 0.0;

  Eigen::VectorXd tau() const { return mu1 - mu0; }
  Eigen::VectorXd m() const { return 0.5 * (mu1 + mu0); }

  /// Node weights of the conditional law given S = 1 (sum to one).
  Eigen::VectorXd source_measure() const { return (weight.array() * rho.array()).matrix() / rho_bar; }
  /// Node weights of the conditional law given S = 0.
  Eigen::VectorXd target_measure() const {
    return (weight.array() * (1.0 - rho.array())).matrix() / (1.0 - rho_bar);
  }
};

inline TruthOnGrid tabulate(const TruthFunctions& truth, const BasisSpec& spec, const Grid& grid) {
  if (spec.max_var() >= grid.dim()) throw Error(ErrorCode::IndexOutOfRange, "basis references a covariate beyond the grid");
  const Eigen::Index m = grid.size();
  TruthOnGrid t;
  t.weight = grid.weights;
  t.pi.resize(m);
  t.rho.resize(m);
  t.mu0.resize(m);
  t.mu1.resize(m);
  t.s0.resize(m);
  t.s1.resize(m);
  std::vector<double> row(static_cast<std::size_t>(grid.dim()));
  for (Eigen::Index k = 0; k < m; ++k) {
    for (Eigen::Index j = 0; j < grid.dim(); ++j) row[j] = grid.nodes(k, j);
    t.pi[k] = truth.propensity(row);
    t.rho[k] = truth.participation(row);
    t.mu0[k] = truth.mu0(row);
    t.mu1[k] = truth.mu1(row);
    t.s0[k] = truth.sigma0_sq(row);
    t.s1[k] = truth.sigma1_sq(row);
  }
  t.H = evaluate_terms(spec.h_terms(), grid.nodes);
  t.G = evaluate_terms(spec.g_terms(), grid.nodes);
  t.rho_bar = grid.weights.dot(t.rho);
  return t;
}

/// Weighted least-squares fit of f on the columns of B; returns coefficients
/// and the largest absolute residual over nodes with positive weight.
inline std::pair<Eigen::VectorXd, double> fit_in_span(const Eigen::VectorXd& f, const Eigen::MatrixXd& B,
                                                      const Eigen::VectorXd& measure) {
  if (B.cols() == 0) return {Eigen::VectorXd(), f.cwiseAbs().maxCoeff()};
  Eigen::MatrixXd gram = B.transpose() * (B.array().colwise() * measure.array()).matrix();
  Eigen::VectorXd rhs = B.transpose() * (f.array() * measure.array()).matrix();
  Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  const Eigen::VectorXd d = ldlt.vectorD();
  if (ldlt.info() != Eigen::Success || d.minCoeff() <= 1e-12 * d.cwiseAbs().maxCoeff())
    throw Error(ErrorCode::SingularGram, "weighted Gram matrix is singular");
  Eigen::VectorXd coef = ldlt.solve(rhs);
  double worst = 0;
  Eigen::VectorXd resid = f - B * coef;
  for (Eigen::Index k = 0; k < f.size(); ++k)
    if (measure[k] > 0) worst = std::max(worst, std::abs(resid[k]));
  return {coef, worst};
}

inline constexpr double kSpanTolerance = 1e-8;

/// Recovers (lambda_pi, gamma_pi) when logit pi is exactly linear in (H, G).
inline std::optional<LogisticDecomposition> detect_logistic_decomposition(const TruthOnGrid& t) {
  Eigen::VectorXd logit = (t.pi.array() / (1.0 - t.pi.array())).log().matrix();
  Eigen::MatrixXd B(t.H.rows(), t.H.cols() + t.G.cols());
  B << t.H, t.G;
  auto [coef, resid] = fit_in_span(logit, B, t.weight);
  if (resid > kSpanTolerance * std::max(1.0, logit.cwiseAbs().maxCoeff())) return std::nullopt;
  return LogisticDecomposition{coef.head(t.H.cols()), coef.tail(t.G.cols())};
}

struct LimitingDual {
  Eigen::VectorXd lambda0_star;
  LogisticDecomposition decomposition;
  int iterations = 0;
  double residual_norm = 0.0;

  /// Limits of the finite-sample dual (lambda1, lambda0, gamma).
  Eigen::VectorXd lambda1_limit() const { return lambda0_star - decomposition.lambda_pi; }
  Eigen::VectorXd gamma_limit() const { return -0.5 * decomposition.gamma_pi; }
};

struct OracleOptions {
  double tolerance = 1e-12;
  int max_iterations = 100;
};

/// Solves E[r~(X) H(X) | S=1] = E[H(X) | S=0] for lambda0*. Requires logit pi
/// to be linear in (H, G).
inline LimitingDual solve_limiting_dual(const TruthOnGrid& t, std::optional<LogisticDecomposition> decomposition,
                                        const OracleOptions& opt = {}) {
  if (!decomposition) decomposition = detect_logistic_decomposition(t);
  if (!decomposition)
    throw Error(ErrorCode::HypothesisViolated, "logit of the propensity score is not linear in (H, G)");
  const auto& dec = *decomposition;
  // r~(x) = c(x) exp(lambda0' H) with c(x) = exp(gamma_pi' G / 2) / (1 + exp(lambda_pi' H + gamma_pi' G)).
  Eigen::VectorXd lin = t.H * dec.lambda_pi;
  Eigen::VectorXd g_part = t.G.cols() ? Eigen::VectorXd(t.G * dec.gamma_pi) : Eigen::VectorXd::Zero(t.H.rows());
  lin += g_part;
  Eigen::VectorXd source = t.source_measure();
  TiltingProblem p;
  p.Z = t.H;
  p.log_base.resize(t.H.rows());
  for (Eigen::Index k = 0; k < t.H.rows(); ++k) {
    const double logc = 0.5 * g_part[k] - detail::log1pexp(lin[k]);
    p.log_base[k] = source[k] > 0 ? std::log(source[k]) + logc : -std::numeric_limits<double>::infinity();
  }
  p.target = t.H.transpose() * t.target_measure();
  p.n = 1.0;
  SolverOptions so;
  so.tolerance = opt.tolerance;
  so.max_iterations = opt.max_iterations;
  so.score_cap = 700.0;
  TiltingSolution sol = solve_tilting(p, so);
  LimitingDual out{sol.theta, dec, sol.diag.iterations, sol.gradient.size() ? sol.gradient.lpNorm<Eigen::Infinity>()
                                                                            : std::numeric_limits<double>::infinity()};
  if (!(out.residual_norm <= 1e-8))
    throw Error(ErrorCode::NonConverged, "limiting dual did not converge (residual " +
                                             std::to_string(out.residual_norm) + ")");
  return out;
}

/// Coefficients of a projection plus its values on the grid.
struct Projection {
  Eigen::VectorXd coefficients;
  Eigen::VectorXd values;
};

/// L2 projection of f onto Span{columns of B} with node weights `measure`.
inline Projection project(const Eigen::VectorXd& f, const Eigen::MatrixXd& B, const Eigen::VectorXd& measure) {
  if (B.cols() == 0) return {Eigen::VectorXd(), Eigen::VectorXd::Zero(f.size())};
  auto [coef, resid] = fit_in_span(f, B, measure);
  (void)resid;
  return {coef, B * coef};
}

struct Conditions {
  ConditionStatus a = ConditionStatus::Fails;  // mu_a in Span{H}
  ConditionStatus b = ConditionStatus::Fails;  // logit pi in Span{H,G} and r~ is the true density ratio
  ConditionStatus c = ConditionStatus::Fails;  // logit pi in Span{H,G} and tau in Span{H}
};

struct AsymptoticReport {
  bool hypothesis_holds = false;  // logit pi linear in (H, G)
  Eigen::VectorXd lambda0_star;
  Eigen::VectorXd lambda_pi;
  Eigen::VectorXd gamma_pi;
  Eigen::VectorXd rtilde;  // on grid nodes
  double rtilde_mean = 0.0;  // E[r~ | S = 1]
  double rho_bar = 0.0;
  double tau_star = 0.0;
  double v1 = 0.0;
  double v2 = 0.0;
  double v3 = 0.0;
  double total = 0.0;
  double bound = 0.0;
  double gap = 0.0;
  Conditions conditions;
};

/// The evaluation engine behind asymptotic_variance(); exposes r~ and the two
/// projections for inspection and testing.
class TheoryOracle {
 public:
  TheoryOracle(const TruthFunctions& truth, const BasisSpec& spec, const Grid& grid, const OracleOptions& opt = {})
      : t_(tabulate(truth, spec, grid)) {
    auto dec = truth.decomposition ? truth.decomposition : detect_logistic_decomposition(t_);
    if (dec) {
      limit_ = solve_limiting_dual(t_, dec, opt);
      Eigen::VectorXd lin = t_.H * dec->lambda_pi;
      Eigen::VectorXd g_part = t_.G.cols() ? Eigen::VectorXd(t_.G * dec->gamma_pi) : Eigen::VectorXd::Zero(lin.size());
      lin += g_part;
      rtilde_.resize(lin.size());
      for (Eigen::Index k = 0; k < lin.size(); ++k)
        rtilde_[k] = std::exp(t_.H.row(k).dot(limit_->lambda0_star) + 0.5 * g_part[k] - detail::log1pexp(lin[k]));
    } else {
      rtilde_ = population_treated_ratio(opt);
    }
    measure_ = (t_.source_measure().array() * rtilde_.array()).matrix();
    if (t_.G.cols()) {
      Eigen::MatrixXd gh(t_.G.rows(), t_.G.cols());
      for (Eigen::Index j = 0; j < t_.G.cols(); ++j) gh.col(j) = project(t_.G.col(j), t_.H, measure_).values;
      g_perp_ = t_.G - gh;
    } else {
      g_perp_.resize(t_.H.rows(), 0);
    }
  }

  const TruthOnGrid& tabulated() const { return t_; }
  bool hypothesis_holds() const { return limit_.has_value(); }
  const std::optional<LimitingDual>& limiting_dual() const { return limit_; }
  const Eigen::VectorXd& rtilde() const { return rtilde_; }
  /// Node weights of p_s(x) r~(x).
  const Eigen::VectorXd& tilted_measure() const { return measure_; }
  const Eigen::MatrixXd& g_perp() const { return g_perp_; }

  Projection project_h(const Eigen::VectorXd& f) const { return project(f, t_.H, measure_); }
  Projection project_g_perp(const Eigen::VectorXd& f) const { return project(f, g_perp_, measure_); }
  Projection project_h_plus_g(const Eigen::VectorXd& f) const {
    Eigen::MatrixXd B(t_.H.rows(), t_.H.cols() + t_.G.cols());
    B << t_.H, t_.G;
    return project(f, B, measure_);
  }

  double tau_star() const { return t_.target_measure().dot(t_.tau()); }

  AsymptoticReport report() const {
    AsymptoticReport r;
    r.hypothesis_holds = hypothesis_holds();
    if (limit_) {
      r.lambda0_star = limit_->lambda0_star;
      r.lambda_pi = limit_->decomposition.lambda_pi;
      r.gamma_pi = limit_->decomposition.gamma_pi;
    }
    r.rtilde = rtilde_;
    r.rtilde_mean = t_.source_measure().dot(rtilde_);
    r.rho_bar = t_.rho_bar;
    r.tau_star = tau_star();

    const auto& w = t_.weight;
    const Eigen::ArrayXd rho = t_.rho.array();
    const Eigen::ArrayXd pi = t_.pi.array();
    const Eigen::ArrayXd r2 = rtilde_.array().square();
    const Eigen::ArrayXd noise = t_.s1.array() / pi + t_.s0.array() / (1.0 - pi);
    const double rb = t_.rho_bar;
    const Eigen::VectorXd tau = t_.tau();

    r.v1 = w.dot((rho * r2 * noise).matrix()) / (rb * rb);
    const Eigen::ArrayXd dev_h = project_h(tau).values.array() - r.tau_star;
    r.v2 = w.dot(((1.0 - rho) * dev_h.square()).matrix()) / ((1.0 - rb) * (1.0 - rb));
    const Eigen::ArrayXd pm = project_g_perp(t_.m()).values.array();
    const Eigen::ArrayXd e1 = t_.mu1.array() - project_h(t_.mu1).values.array() - pm;
    const Eigen::ArrayXd e0 = t_.mu0.array() - project_h(t_.mu0).values.array() - pm;
    r.v3 = w.dot((rho * r2 * (e1.square() / pi + e0.square() / (1.0 - pi))).matrix()) / (rb * rb);
    r.total = r.v1 + r.v2 + r.v3;

    const Eigen::ArrayXd dev = tau.array() - r.tau_star;
    r.bound = (w.dot(((1.0 - rho).square() / rho * noise).matrix()) + w.dot(((1.0 - rho) * dev.square()).matrix())) /
              ((1.0 - rb) * (1.0 - rb));
    r.gap = r.total - r.bound;
    r.conditions = conditions();
    return r;
  }

  Conditions conditions() const {
    Conditions c;
    auto in_span = [&](const Eigen::VectorXd& f, const Eigen::MatrixXd& B) {
      auto [coef, resid] = fit_in_span(f, B, t_.weight);
      return resid <= kSpanTolerance * std::max(1.0, f.cwiseAbs().maxCoeff());
    };
    const auto held = [](bool v) { return v ? ConditionStatus::Holds : ConditionStatus::Fails; };
    c.a = held(in_span(t_.mu0, t_.H) && in_span(t_.mu1, t_.H));
    if (limit_) {
      c.c = held(in_span(t_.tau(), t_.H));
      // True target/source density ratio: rho_bar (1 - rho(x)) / ((1 - rho_bar) rho(x)).
      Eigen::ArrayXd ratio = t_.rho_bar * (1.0 - t_.rho.array()) / ((1.0 - t_.rho_bar) * t_.rho.array());
      const double rel = ((rtilde_.array() - ratio).abs() / ratio).maxCoeff();
      c.b = held(rel <= 1e-6);
    }
    return c;
  }

 private:
  // Without a logistic decomposition, r~ is taken as pi(x) times the treated
  // weight function of the population extended dual.
  Eigen::VectorXd population_treated_ratio(const OracleOptions& opt) const {
    const Eigen::Index m = t_.H.rows();
    const Eigen::Index kh = t_.H.cols();
    const Eigen::Index kg = t_.G.cols();
    TiltingProblem p;
    p.Z = Eigen::MatrixXd::Zero(2 * m, 2 * kh + kg);
    p.log_base.resize(2 * m);
    Eigen::VectorXd source = t_.source_measure();
    for (Eigen::Index k = 0; k < m; ++k) {
      p.Z.row(k).head(kh) = t_.H.row(k);
      p.Z.row(m + k).segment(kh, kh) = t_.H.row(k);
      if (kg) {
        p.Z.row(k).tail(kg) = t_.G.row(k);
        p.Z.row(m + k).tail(kg) = -t_.G.row(k);
      }
      const double ls = source[k] > 0 ? std::log(source[k]) : -std::numeric_limits<double>::infinity();
      p.log_base[k] = ls + std::log(t_.pi[k]);
      p.log_base[m + k] = ls + std::log1p(-t_.pi[k]);
    }
    Eigen::VectorXd eh = t_.H.transpose() * t_.target_measure();
    p.target.resize(2 * kh + kg);
    p.target << eh, eh, Eigen::VectorXd::Zero(kg);
    p.n = 1.0;
    SolverOptions so;
    so.tolerance = opt.tolerance;
    so.max_iterations = opt.max_iterations;
    so.score_cap = 700.0;
    TiltingSolution sol = solve_tilting(p, so);
    if (!(sol.gradient.size() && sol.gradient.lpNorm<Eigen::Infinity>() <= 1e-8))
      throw Error(ErrorCode::NonConverged, "population extended dual did not converge");
    Eigen::VectorXd out(m);
    for (Eigen::Index k = 0; k < m; ++k)
      out[k] = t_.pi[k] * std::exp(t_.H.row(k).dot(sol.theta.head(kh)) +
                                   (kg ? t_.G.row(k).dot(sol.theta.tail(kg)) : 0.0));
    return out;
  }

  TruthOnGrid t_;
  std::optional<LimitingDual> limit_;
  Eigen::VectorXd rtilde_;
  Eigen::VectorXd measure_;
  Eigen::MatrixXd g_perp_;
};

inline LimitingDual solve_limiting_dual(const TruthFunctions& truth, const BasisSpec& spec, const Grid& grid,
                                        const OracleOptions& opt = {}) {
  return solve_limiting_dual(tabulate(truth, spec, grid), truth.decomposition, opt);
}

inline AsymptoticReport asymptotic_variance(const TruthFunctions& truth, const BasisSpec& spec, const Grid& grid,
                                            const OracleOptions& opt = {}) {
  return TheoryOracle(truth, spec, grid, opt).report();
}

}  // namespace ebcal
