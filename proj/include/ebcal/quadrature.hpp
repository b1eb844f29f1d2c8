#pragma once

// Deterministic integration grids over a covariate law: tensor-product
// Gauss-Legendre for uniform boxes, unscrambled Sobol points pushed through
// the normal quantile for independent Gaussian covariates.

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/quadrature/gauss.hpp>
#include <boost/random/sobol.hpp>

#include "ebcal/error.hpp"

namespace ebcal {

/// Nodes (one row per point) with probability weights summing to one.
struct Grid {
  Eigen::MatrixXd nodes;
  Eigen::VectorXd weights;

  Eigen::Index size() const { return nodes.rows(); }
  Eigen::Index dim() const { return nodes.cols(); }

  /// E[f(X)] for a per-node value vector.
  double expect(const Eigen::VectorXd& values) const { return weights.dot(values); }
};

namespace detail {

template <unsigned N>
std::pair<std::vector<double>, std::vector<double>> legendre_rule() {
  using rule = boost::math::quadrature::gauss<double, N>;
  const auto& a = rule::abscissa();
  const auto& w = rule::weights();
  std::vector<double> x, wt;
  for (std::size_t i = a.size(); i-- > 0;) {
    if (a[i] == 0.0) continue;
    x.push_back(-a[i]);
    wt.push_back(w[i]);
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    x.push_back(a[i]);
    wt.push_back(w[i]);
  }
  return {x, wt};
}

}  // namespace detail

/// Gauss-Legendre nodes and weights on [-1, 1].
inline std::pair<std::vector<double>, std::vector<double>> gauss_legendre(int points) {
  switch (points) {
    case 4: return detail::legendre_rule<4>();
    case 6: return detail::legendre_rule<6>();
    case 8: return detail::legendre_rule<8>();
    case 10: return detail::legendre_rule<10>();
    case 12: return detail::legendre_rule<12>();
    case 16: return detail::legendre_rule<16>();
    case 20: return detail::legendre_rule<20>();
    case 24: return detail::legendre_rule<24>();
    case 32: return detail::legendre_rule<32>();
    default: break;
  }
  throw Error(ErrorCode::InvalidArgument,
              "unsupported Gauss-Legendre order " + std::to_string(points) + " (use 4,6,8,10,12,16,20,24,32)");
}

/// Product rule for X ~ Uniform[lo, hi]^dim.
inline Grid tensor_gauss_legendre(int dim, double lo, double hi, int points) {
  auto [x, w] = gauss_legendre(points);
  const int m = static_cast<int>(x.size());
  Eigen::Index total = 1;
  for (int d = 0; d < dim; ++d) total *= m;
  Grid g;
  g.nodes.resize(total, dim);
  g.weights.resize(total);
  const double half = 0.5 * (hi - lo);
  const double mid = 0.5 * (hi + lo);
  std::vector<int> idx(static_cast<std::size_t>(dim), 0);
  for (Eigen::Index k = 0; k < total; ++k) {
    double wk = 1.0;
    for (int d = 0; d < dim; ++d) {
      g.nodes(k, d) = mid + half * x[idx[d]];
      wk *= 0.5 * w[idx[d]];
    }
    g.weights[k] = wk;
    for (int d = dim - 1; d >= 0; --d) {
      if (++idx[d] < m) break;
      idx[d] = 0;
    }
  }
  return g;
}

/// Quasi-random rule for X ~ N(mean, sd^2) independently per coordinate.
inline Grid sobol_normal(int dim, Eigen::Index points, double mean = 0.0, double sd = 1.0) {
  boost::random::sobol engine(static_cast<std::size_t>(dim));
  engine.discard(static_cast<std::uintmax_t>(dim));  // skip the all-zero first point
  const boost::math::normal_distribution<double> normal;
  const double scale = 1.0 / (static_cast<double>(boost::random::sobol::max()) + 1.0);
  Grid g;
  g.nodes.resize(points, dim);
  g.weights = Eigen::VectorXd::Constant(points, 1.0 / static_cast<double>(points));
  for (Eigen::Index k = 0; k < points; ++k)
    for (int d = 0; d < dim; ++d) {
      const double u = std::clamp(static_cast<double>(engine()) * scale, 1e-15, 1.0 - 1e-15);
      g.nodes(k, d) = mean + sd * boost::math::quantile(normal, u);
    }
  return g;
}

}  // namespace ebcal
