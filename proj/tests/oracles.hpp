#pragma once

// Reference computations that share no code with the library solvers.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

/// Minimizes sum_i (w_i log w_i - w_i) subject to C w = b by infeasible-start
/// Newton on the KKT system, with a backtracking search on the KKT residual.
/// Returns an empty vector when it fails to reach `tol`.
inline Eigen::VectorXd entropy_primal(const Eigen::MatrixXd& C, const Eigen::VectorXd& b, double tol = 1e-13,
                                      int max_iter = 500) {
  const Eigen::Index n = C.cols(), m = C.rows();
  Eigen::VectorXd w = Eigen::VectorXd::Ones(n);
  Eigen::VectorXd nu = Eigen::VectorXd::Zero(m);
  auto residual = [&](const Eigen::VectorXd& w_, const Eigen::VectorXd& nu_) {
    Eigen::VectorXd r(n + m);
    r.head(n) = w_.array().log().matrix() + C.transpose() * nu_;
    r.tail(m) = C * w_ - b;
    return r;
  };
  for (int it = 0; it < max_iter; ++it) {
    Eigen::VectorXd r = residual(w, nu);
    if (r.lpNorm<Eigen::Infinity>() <= tol) return w;
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n + m, n + m);
    K.topLeftCorner(n, n) = w.cwiseInverse().asDiagonal();
    K.topRightCorner(n, m) = C.transpose();
    K.bottomLeftCorner(m, n) = C;
    Eigen::VectorXd step = K.fullPivLu().solve(-r);
    Eigen::VectorXd dw = step.head(n), dnu = step.tail(m);
    double t = 1.0;
    while ((w + t * dw).minCoeff() <= 0) t *= 0.5;
    const double r0 = r.norm();
    while (t > 1e-16 && residual(w + t * dw, nu + t * dnu).norm() > (1 - 0.01 * t) * r0) t *= 0.5;
    if (t <= 1e-16) break;
    w += t * dw;
    nu += t * dnu;
  }
  return residual(w, nu).lpNorm<Eigen::Infinity>() <= 1e-9 ? w : Eigen::VectorXd();
}

/// Constraint matrix of the extended problem in the layout
/// [treated H calibration; control H calibration; G treated-minus-control].
inline void extended_constraints(const Eigen::MatrixXd& H, const Eigen::MatrixXd& G, const Eigen::VectorXi& A,
                                 const Eigen::VectorXd& target, Eigen::MatrixXd& C, Eigen::VectorXd& b) {
  const Eigen::Index n = H.rows(), kh = H.cols(), kg = G.cols();
  C = Eigen::MatrixXd::Zero(2 * kh + kg, n);
  b = Eigen::VectorXd::Zero(2 * kh + kg);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double inv_n = 1.0 / static_cast<double>(n);
    if (A[i] == 1) {
      C.col(i).head(kh) = H.row(i).transpose() * inv_n;
      C.col(i).tail(kg) = G.row(i).transpose() * inv_n;
    } else {
      C.col(i).segment(kh, kh) = H.row(i).transpose() * inv_n;
      C.col(i).tail(kg) = -G.row(i).transpose() * inv_n;
    }
  }
  b.head(kh) = target;
  b.segment(kh, kh) = target;
}

/// Central finite-difference gradient.
inline Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                                   double h = 1e-5) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    Eigen::VectorXd a = x, c = x;
    a[k] += h;
    c[k] -= h;
    g[k] = (f(a) - f(c)) / (2 * h);
  }
  return g;
}

/// Central finite-difference Jacobian of a vector function.
inline Eigen::MatrixXd fd_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x, double h = 1e-5) {
  Eigen::MatrixXd J;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    Eigen::VectorXd a = x, c = x;
    a[k] += h;
    c[k] -= h;
    Eigen::VectorXd d = (f(a) - f(c)) / (2 * h);
    if (k == 0) J.resize(d.size(), x.size());
    J.col(k) = d;
  }
  return J;
}

/// Plain Monte Carlo mean of f over Uniform[lo, hi]^dim with its standard error.
inline std::pair<double, double> mc_mean(const std::function<double(const std::vector<double>&)>& f, int dim,
                                         double lo, double hi, long draws, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> x(static_cast<std::size_t>(dim));
  double s = 0, s2 = 0;
  for (long i = 0; i < draws; ++i) {
    for (auto& v : x) v = u(rng);
    const double y = f(x);
    s += y;
    s2 += y * y;
  }
  const double mean = s / static_cast<double>(draws);
  const double var = s2 / static_cast<double>(draws) - mean * mean;
  return {mean, std::sqrt(var / static_cast<double>(draws))};
}

}  // namespace oracle
