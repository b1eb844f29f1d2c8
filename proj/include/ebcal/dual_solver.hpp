#pragma once

// Entropy-balancing weights through the unconstrained convex dual.
//
// Every weighting problem handled here has the shape
//
//   min_w  sum_i w_i log(w_i / q_i)   s.t.  (1/n) sum_i w_i z_i = b
//
// whose dual is  min_theta (1/n) sum_i q_i exp(theta' z_i) - theta' b  and whose
// solution is  w_i = q_i exp(theta' z_i).  The extended problem stacks
// theta = (lambda1, lambda0, gamma) with z_i = (H_i, 0, G_i) on treated rows
// and z_i = (0, H_i, -G_i) on control rows.

#include <cmath>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "ebcal/basis.hpp"
#include "ebcal/error.hpp"

namespace ebcal {

enum class Method { Extended, EbalHOnly, JoseyTwoStep, EtCalibration, AttEbal, Ipw, IpwEt };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::Extended: return "EXTENDED";
    case Method::EbalHOnly: return "EBAL_H_ONLY";
    case Method::JoseyTwoStep: return "JOSEY_TWO_STEP";
    case Method::EtCalibration: return "ET_CALIBRATION";
    case Method::AttEbal: return "ATT_EBAL";
    case Method::Ipw: return "IPW";
    case Method::IpwEt: return "IPW_ET";
  }
  return "?";
}

struct SolverOptions {
  double tolerance = 1e-10;
  int max_iterations = 200;
  double score_cap = 30.0;
  double armijo = 1e-4;
  double backtrack = 0.5;
  bool normalize = false;
  bool check_rank = true;
};

struct DualSolution {
  Eigen::VectorXd lambda1;
  Eigen::VectorXd lambda0;
  Eigen::VectorXd gamma;
  int iterations = 0;
  double gradient_norm = std::numeric_limits<double>::infinity();
  bool converged = false;
  double objective = std::numeric_limits<double>::quiet_NaN();
  double max_score = 0.0;
  std::vector<double> objective_history;
};

struct WeightSet {
  Eigen::VectorXd w;
  bool normalized = false;
  Method method = Method::Extended;
};

struct SolveResult {
  DualSolution dual;
  WeightSet weights;
  Eigen::VectorXd residuals;  // balance residuals in the design's coordinates
};

/// Raised when Newton stops short of the tolerance; carries the last iterate.
class NonConvergence : public Error {
 public:
  NonConvergence(const std::string& message, SolveResult partial)
      : Error(ErrorCode::NonConverged, message), partial_(std::move(partial)) {}
  const SolveResult& partial() const { return partial_; }

 private:
  SolveResult partial_;
};

/// Row index sets of the two arms; n is the full source size.
struct Arms {
  std::vector<Eigen::Index> treated;
  std::vector<Eigen::Index> control;
  Eigen::Index n = 0;

  static Arms of(const SourceSample& s) { return {s.treated(), s.control(), s.size()}; }

  static Arms from_treatment(const Eigen::VectorXi& A) {
    Arms a;
    a.n = A.size();
    for (Eigen::Index i = 0; i < A.size(); ++i) (A[i] == 1 ? a.treated : a.control).push_back(i);
    return a;
  }
};

/// Generic exponential-tilting dual.
struct TiltingProblem {
  Eigen::MatrixXd Z;
  Eigen::VectorXd log_base;  // empty means q_i = 1
  Eigen::VectorXd target;
  double n = 1.0;
};

struct DualEvaluation {
  double value = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;
  Eigen::VectorXd weights;
  double max_score = 0.0;
  bool capped = false;
};

inline DualEvaluation evaluate_tilting(const TiltingProblem& p, const Eigen::VectorXd& theta, double score_cap,
                                       bool with_hessian) {
  DualEvaluation e;
  Eigen::VectorXd score = p.Z * theta;
  if (p.log_base.size() > 0) score += p.log_base;
  e.max_score = score.size() ? score.maxCoeff() : 0.0;
  if (!(e.max_score <= score_cap)) {
    e.capped = true;
    e.value = std::numeric_limits<double>::infinity();
    return e;
  }
  e.weights = score.array().exp().matrix();
  e.value = e.weights.sum() / p.n - theta.dot(p.target);
  e.gradient = p.Z.transpose() * e.weights / p.n - p.target;
  if (with_hessian) e.hessian = p.Z.transpose() * (p.Z.array().colwise() * e.weights.array()).matrix() / p.n;
  return e;
}

struct TiltingSolution {
  Eigen::VectorXd theta;
  Eigen::VectorXd weights;
  Eigen::VectorXd gradient;
  DualSolution diag;  // parameter blocks left empty; filled by callers
};

/// Damped Newton from theta = 0 with Armijo backtracking. Falls back to the
/// steepest-descent direction whenever the Hessian solve fails.
inline TiltingSolution solve_tilting(const TiltingProblem& p, const SolverOptions& opt) {
  const Eigen::Index d = p.Z.cols();
  TiltingSolution out;
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(d);
  DualEvaluation cur = evaluate_tilting(p, theta, opt.score_cap, true);
  if (cur.capped) {
    out.theta = theta;
    out.diag.max_score = cur.max_score;
    out.diag.iterations = 0;
    return out;
  }
  auto& diag = out.diag;
  diag.objective_history.push_back(cur.value);
  int iter = 0;
  for (; iter < opt.max_iterations; ++iter) {
    if (cur.gradient.lpNorm<Eigen::Infinity>() <= opt.tolerance) break;

    Eigen::VectorXd dir;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(cur.hessian);
    bool newton = false;
    if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
      dir = -ldlt.solve(cur.gradient);
      newton = dir.allFinite() && dir.dot(cur.gradient) < 0;
    }
    if (!newton) dir = -cur.gradient;

    bool accepted = false;
    for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
      if (attempt == 1) {
        if (!newton) break;
        dir = -cur.gradient;
      }
      const double slope = dir.dot(cur.gradient);
      const double gnorm = cur.gradient.norm();
      double t = 1.0;
      while (t > 1e-14) {
        Eigen::VectorXd trial = theta + t * dir;
        DualEvaluation next = evaluate_tilting(p, trial, opt.score_cap, false);
        if (!next.capped) {
          const bool armijo = next.value <= cur.value + opt.armijo * t * slope;
          // Near the optimum the objective change drops below rounding; a
          // strict gradient decrease then decides.
          const bool flat = std::abs(next.value - cur.value) <= 1e-13 * std::max(1.0, std::abs(cur.value)) &&
                            next.gradient.norm() < gnorm;
          if (armijo || flat) {
            theta = std::move(trial);
            cur = evaluate_tilting(p, theta, opt.score_cap, true);
            accepted = true;
            break;
          }
        }
        t *= opt.backtrack;
      }
    }
    diag.objective_history.push_back(cur.value);
    if (!accepted) break;
  }
  diag.iterations = iter;
  diag.gradient_norm = cur.gradient.lpNorm<Eigen::Infinity>();
  diag.objective = cur.value;
  diag.max_score = cur.max_score;
  diag.converged = diag.gradient_norm <= opt.tolerance && cur.max_score < opt.score_cap;
  out.theta = theta;
  out.weights = cur.weights;
  out.gradient = cur.gradient;
  return out;
}

namespace detail {

/// log(1 + e^x) without overflow.
inline double log1pexp(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline Eigen::MatrixXd stack_arm_blocks(const DesignMatrices& design, const Arms& arms) {
  const int kh = design.h_size();
  const int kg = design.g_size();
  Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(design.rows(), 2 * kh + kg);
  for (Eigen::Index i : arms.treated) {
    Z.row(i).head(kh) = design.H.row(i);
    if (kg) Z.row(i).tail(kg) = design.G.row(i);
  }
  for (Eigen::Index i : arms.control) {
    Z.row(i).segment(kh, kh) = design.H.row(i);
    if (kg) Z.row(i).tail(kg) = -design.G.row(i);
  }
  return Z;
}

inline void check_inputs(const DesignMatrices& design, const TargetSummary& target, const Arms& arms) {
  if (target.values.size() != design.h_size())
    throw Error(ErrorCode::LengthMismatch, "target summary length does not match H");
  if (arms.n != design.rows())
    throw Error(ErrorCode::LengthMismatch, "arm index sets do not match the design");
  if (arms.treated.empty() || arms.control.empty())
    throw Error(ErrorCode::EmptyArm, "both treatment arms must be non-empty");
}

inline DesignMatrices drop_g(const DesignMatrices& design) {
  DesignMatrices d = design;
  d.G.resize(design.rows(), 0);
  d.g_scaling.clear();
  d.g_names.clear();
  return d;
}

inline DesignMatrices rows_of(const DesignMatrices& design, const std::vector<Eigen::Index>& rows) {
  DesignMatrices d;
  d.H = design.H(rows, Eigen::all);
  d.G = design.G(rows, Eigen::all);
  return d;
}

inline void check_rank(const DesignMatrices& design, const Arms& arms) {
  if (check_design_rank(design).deficient)
    throw Error(ErrorCode::RankDeficient, "[H | G] is rank deficient on the source sample");
  for (const auto* rows : {&arms.treated, &arms.control}) {
    DesignMatrices arm = rows_of(design, *rows);
    arm.G.resize(arm.H.rows(), 0);
    if (check_design_rank(arm).deficient)
      throw Error(ErrorCode::RankDeficient, "H is rank deficient within a treatment arm");
  }
}

inline void normalize_arms(Eigen::VectorXd& w, const Arms& arms) {
  const double n = static_cast<double>(arms.n);
  for (const auto* rows : {&arms.treated, &arms.control}) {
    double s = 0;
    for (Eigen::Index i : *rows) s += w[i];
    for (Eigen::Index i : *rows) w[i] *= n / s;
  }
}

inline SolveResult finish(TiltingSolution&& sol, Method method, const Arms& arms, const SolverOptions& opt,
                          Eigen::VectorXd weights) {
  SolveResult r;
  r.dual = std::move(sol.diag);
  r.residuals = sol.gradient;
  r.weights.w = std::move(weights);
  r.weights.method = method;
  if (opt.normalize && r.weights.w.size() > 0) {
    normalize_arms(r.weights.w, arms);
    r.weights.normalized = true;
  }
  if (!r.dual.converged) {
    std::string msg = std::string(to_string(method)) + " dual did not converge after " +
                      std::to_string(r.dual.iterations) + " iterations (gradient sup-norm " +
                      std::to_string(r.dual.gradient_norm) + ")";
    if (r.dual.max_score >= opt.score_cap) msg += "; scores reached the cap, weak overlap or infeasible target";
    throw NonConvergence(msg, std::move(r));
  }
  return r;
}

}  // namespace detail

/// Value, gradient and Hessian of the extended dual at (lambda1, lambda0, gamma).
/// The gradient is ordered (lambda1, lambda0, gamma) and equals the balance
/// residuals of the primal constraints.
inline DualEvaluation dual_objective(const Eigen::VectorXd& lambda1, const Eigen::VectorXd& lambda0,
                                     const Eigen::VectorXd& gamma, const DesignMatrices& design,
                                     const TargetSummary& target, const Arms& arms, double score_cap = 30.0) {
  detail::check_inputs(design, target, arms);
  if (lambda1.size() != design.h_size() || lambda0.size() != design.h_size() || gamma.size() != design.g_size())
    throw Error(ErrorCode::LengthMismatch, "dual parameter dimensions do not match the design");
  TiltingProblem p;
  p.Z = detail::stack_arm_blocks(design, arms);
  p.target.resize(p.Z.cols());
  p.target << target.values, target.values, Eigen::VectorXd::Zero(design.g_size());
  p.n = static_cast<double>(design.rows());
  Eigen::VectorXd theta(p.Z.cols());
  theta << lambda1, lambda0, gamma;
  return evaluate_tilting(p, theta, score_cap, true);
}

/// Constraint residuals of the extended problem for an arbitrary weight vector:
/// per-arm H calibration blocks followed by the G treated-minus-control block.
inline Eigen::VectorXd balance_residuals(const DesignMatrices& design, const TargetSummary& target,
                                         const Arms& arms, const Eigen::VectorXd& w) {
  const double n = static_cast<double>(design.rows());
  const int kh = design.h_size();
  const int kg = design.g_size();
  Eigen::VectorXd r = Eigen::VectorXd::Zero(2 * kh + kg);
  for (Eigen::Index i : arms.treated) {
    r.head(kh) += w[i] * design.H.row(i).transpose();
    if (kg) r.tail(kg) += w[i] * design.G.row(i).transpose();
  }
  for (Eigen::Index i : arms.control) {
    r.segment(kh, kh) += w[i] * design.H.row(i).transpose();
    if (kg) r.tail(kg) -= w[i] * design.G.row(i).transpose();
  }
  r /= n;
  r.head(kh) -= target.values;
  r.segment(kh, kh) -= target.values;
  return r;
}

inline SolveResult solve_extended(const DesignMatrices& design, const TargetSummary& target, const Arms& arms,
                                  const SolverOptions& opt = {}) {
  detail::check_inputs(design, target, arms);
  if (opt.check_rank) detail::check_rank(design, arms);
  const int kh = design.h_size();
  const int kg = design.g_size();
  TiltingProblem p;
  p.Z = detail::stack_arm_blocks(design, arms);
  p.target.resize(p.Z.cols());
  p.target << target.values, target.values, Eigen::VectorXd::Zero(kg);
  p.n = static_cast<double>(design.rows());
  TiltingSolution sol = solve_tilting(p, opt);
  sol.diag.lambda1 = sol.theta.head(kh);
  sol.diag.lambda0 = sol.theta.segment(kh, kh);
  sol.diag.gamma = sol.theta.tail(kg);
  Eigen::VectorXd w = sol.weights;
  return detail::finish(std::move(sol), kg ? Method::Extended : Method::EbalHOnly, arms, opt, std::move(w));
}

/// Per-arm calibration of H only (the extended problem with G empty).
inline SolveResult solve_ebal_h_only(const DesignMatrices& design, const TargetSummary& target, const Arms& arms,
                                     const SolverOptions& opt = {}) {
  SolveResult r = solve_extended(detail::drop_g(design), target, arms, opt);
  r.weights.method = Method::EbalHOnly;
  return r;
}

/// Whole-sample calibration q_i = exp(beta' H_i) of the source to the target
/// means, ignoring treatment. beta is reported in lambda1.
inline SolveResult solve_et_calibration(const DesignMatrices& design, const TargetSummary& target,
                                        const SolverOptions& opt = {}) {
  if (target.values.size() != design.h_size())
    throw Error(ErrorCode::LengthMismatch, "target summary length does not match H");
  if (opt.check_rank) {
    DesignMatrices h_only;
    h_only.H = design.H;
    h_only.G.resize(design.rows(), 0);
    if (check_design_rank(h_only).deficient) throw Error(ErrorCode::RankDeficient, "H is rank deficient");
  }
  TiltingProblem p{design.H, {}, target.values, static_cast<double>(design.rows())};
  TiltingSolution sol = solve_tilting(p, opt);
  sol.diag.lambda1 = sol.theta;
  Eigen::VectorXd w = sol.weights;
  SolverOptions no_norm = opt;
  no_norm.normalize = false;
  Arms all;
  all.n = design.rows();
  SolveResult r = detail::finish(std::move(sol), Method::EtCalibration, all, no_norm, std::move(w));
  if (opt.normalize) {
    r.weights.w *= static_cast<double>(design.rows()) / r.weights.w.sum();
    r.weights.normalized = true;
  }
  return r;
}

/// Second step of the two-step procedure: minimise sum w log(w / q) subject to
/// each arm's H averages matching rhs.
inline SolveResult solve_josey_second_step(const DesignMatrices& design, const Eigen::VectorXd& q,
                                           const Eigen::VectorXd& rhs, const Arms& arms,
                                           const SolverOptions& opt = {}) {
  if (q.size() != design.rows()) throw Error(ErrorCode::LengthMismatch, "base weights do not match the design");
  if (!(q.array() > 0).all()) throw Error(ErrorCode::InvalidArgument, "base weights must be positive");
  TargetSummary t{rhs, std::nullopt};
  DesignMatrices h_only = detail::drop_g(design);
  detail::check_inputs(h_only, t, arms);
  if (opt.check_rank) detail::check_rank(h_only, arms);
  const int kh = design.h_size();
  TiltingProblem p;
  p.Z = detail::stack_arm_blocks(h_only, arms);
  p.log_base = q.array().log().matrix();
  p.target.resize(2 * kh);
  p.target << rhs, rhs;
  p.n = static_cast<double>(design.rows());
  TiltingSolution sol = solve_tilting(p, opt);
  sol.diag.lambda1 = sol.theta.head(kh);
  sol.diag.lambda0 = sol.theta.tail(kh);
  sol.diag.gamma.resize(0);
  Eigen::VectorXd w = sol.weights;
  return detail::finish(std::move(sol), Method::JoseyTwoStep, arms, opt, std::move(w));
}

/// Two-step procedure: whole-sample calibration, then per-arm calibration to
/// the q-weighted source averages. The reported lambdas are the combined
/// tilts (beta + alpha_a) so they are comparable with solve_ebal_h_only.
inline SolveResult solve_josey_two_step(const DesignMatrices& design, const TargetSummary& target, const Arms& arms,
                                        const SolverOptions& opt = {}) {
  SolverOptions inner = opt;
  inner.normalize = false;
  SolveResult step1 = solve_et_calibration(design, target, inner);
  const Eigen::VectorXd& q = step1.weights.w;
  Eigen::VectorXd rhs = design.H.transpose() * q / static_cast<double>(design.rows());
  SolveResult r = solve_josey_second_step(design, q, rhs, arms, opt);
  r.dual.lambda1 += step1.dual.lambda1;
  r.dual.lambda0 += step1.dual.lambda1;
  r.dual.iterations += step1.dual.iterations;
  r.residuals = balance_residuals(detail::drop_g(design), target, arms, r.weights.w);
  return r;
}

/// ATT entropy balancing: control weights reproducing the treated-arm means of
/// the H columns with (1/n) sum_{S0} w = 1. Treated rows get n / |S1|.
inline SolveResult solve_att_ebal(const DesignMatrices& design, const Arms& arms, const SolverOptions& opt = {}) {
  if (arms.treated.empty() || arms.control.empty())
    throw Error(ErrorCode::EmptyArm, "both treatment arms must be non-empty");
  if (arms.n != design.rows()) throw Error(ErrorCode::LengthMismatch, "arm index sets do not match the design");
  const double n = static_cast<double>(design.rows());
  Eigen::MatrixXd Hc = design.H(arms.control, Eigen::all);
  Eigen::VectorXd target = design.H(arms.treated, Eigen::all).colwise().mean().transpose();
  target[0] = 1.0;
  if (opt.check_rank) {
    DesignMatrices c;
    c.H = Hc;
    c.G.resize(Hc.rows(), 0);
    if (check_design_rank(c).deficient) throw Error(ErrorCode::RankDeficient, "control-arm H is rank deficient");
  }
  TiltingProblem p{Hc, {}, target, n};
  TiltingSolution sol = solve_tilting(p, opt);
  sol.diag.lambda0 = sol.theta;
  Eigen::VectorXd w(design.rows());
  const double treated_w = n / static_cast<double>(arms.treated.size());
  for (Eigen::Index i : arms.treated) w[i] = treated_w;
  for (std::size_t k = 0; k < arms.control.size(); ++k)
    w[arms.control[k]] = sol.weights.size() ? sol.weights[static_cast<Eigen::Index>(k)] : 1.0;
  return detail::finish(std::move(sol), Method::AttEbal, arms, opt, std::move(w));
}

/// Re-expresses dual parameters solved on a standardized design in raw term
/// units, so that exp(lambda' H_raw +/- gamma' G_raw) reproduces the weights.
inline DualSolution to_raw_coordinates(const DualSolution& s, const DesignMatrices& design) {
  DualSolution r = s;
  double g_offset = 0.0;
  for (Eigen::Index j = 0; j < s.gamma.size(); ++j) {
    const auto& sc = design.g_scaling[static_cast<std::size_t>(j)];
    r.gamma[j] = s.gamma[j] / sc.scale;
    g_offset += s.gamma[j] * sc.center / sc.scale;
  }
  auto convert = [&](Eigen::VectorXd& lam, double sign) {
    if (lam.size() == 0) return;
    double offset = sign * g_offset;
    for (Eigen::Index k = 1; k < lam.size(); ++k) {
      const auto& sc = design.h_scaling[static_cast<std::size_t>(k)];
      offset += lam[k] * sc.center / sc.scale;
      lam[k] /= sc.scale;
    }
    lam[0] -= offset;
  };
  convert(r.lambda1, 1.0);
  convert(r.lambda0, -1.0);
  return r;
}

}  // namespace ebcal
