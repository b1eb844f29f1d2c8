#pragma once

// Monte Carlo harness: replicate draws from a scenario, the true target ATE by
// quadrature, and a deterministic parallel grid runner with bias/RMSE
// aggregation.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "ebcal/basis.hpp"
#include "ebcal/estimators.hpp"
#include "ebcal/quadrature.hpp"
#include "ebcal/scenario.hpp"
#include "ebcal/theory.hpp"

namespace ebcal {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Seed of replicate `index` of a scenario; independent of scheduling.
inline std::uint64_t replicate_seed(std::uint64_t master, std::string_view scenario, std::uint64_t index) {
  return splitmix64(splitmix64(master ^ fnv1a(scenario)) + index);
}

inline TruthFunctions truth_from_scenario(const ScenarioConfig& c) {
  TruthFunctions t;
  t.propensity = [m = c.propensity](std::span<const double> x) { return logistic(m(x)); };
  t.participation = [m = c.participation](std::span<const double> x) { return logistic(m(x)); };
  t.mu1 = [m = c.baseline, tau = c.cate](std::span<const double> x) { return m(x) + 0.5 * tau(x); };
  t.mu0 = [m = c.baseline, tau = c.cate](std::span<const double> x) { return m(x) - 0.5 * tau(x); };
  const double v = c.noise_sd * c.noise_sd;
  t.sigma0_sq = [v](std::span<const double>) { return v; };
  t.sigma1_sq = [v](std::span<const double>) { return v; };
  return t;
}

/// Integration grid for a scenario's covariate law.
inline Grid scenario_grid(const ScenarioConfig& c, int points = 16, Eigen::Index quasi_random_points = 1000000) {
  if (c.law.kind == CovariateLaw::Kind::Uniform) return tensor_gauss_legendre(c.law.dim, c.law.lo, c.law.hi, points);
  return sobol_normal(c.law.dim, quasi_random_points, c.law.mean, c.law.sd);
}

/// tau* = E[(1 - rho(X)) tau(X)] / E[1 - rho(X)].
inline double true_target_ate(const ScenarioConfig& c, const Grid& grid) {
  double num = 0, den = 0;
  std::vector<double> row(static_cast<std::size_t>(grid.dim()));
  for (Eigen::Index k = 0; k < grid.size(); ++k) {
    for (Eigen::Index j = 0; j < grid.dim(); ++j) row[j] = grid.nodes(k, j);
    const double q = grid.weights[k] * (1.0 - logistic(c.participation(row)));
    num += q * c.cate(row);
    den += q;
  }
  return num / den;
}

inline double true_target_ate(const ScenarioConfig& c, int points = 16) {
  return true_target_ate(c, scenario_grid(c, points));
}

struct Replicate {
  SourceSample source;
  Eigen::VectorXd target_summary;  // raw H-term means over the target rows
  Eigen::MatrixXd holdout;         // target covariates, never given to estimators
  int redraws = 0;
};

inline Eigen::MatrixXd draw_covariates(const CovariateLaw& law, int n, std::mt19937_64& rng) {
  Eigen::MatrixXd X(n, law.dim);
  std::uniform_real_distribution<double> unif(law.lo, law.hi);
  std::normal_distribution<double> norm(law.mean, law.sd);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < law.dim; ++j) X(i, j) = law.kind == CovariateLaw::Kind::Uniform ? unif(rng) : norm(rng);
  return X;
}

/// Draws n units, splits them by participation, assigns treatment and outcome
/// within the source, and reduces the target rows to H-term means. A draw
/// with an empty arm or no target rows is redrawn from the next sub-seed.
inline Replicate draw_replicate(const ScenarioConfig& c, std::uint64_t seed, const BasisSpec& spec,
                                int max_redraws = 100) {
  for (int attempt = 0; attempt <= max_redraws; ++attempt) {
    std::mt19937_64 rng(attempt == 0 ? seed : splitmix64(seed + static_cast<std::uint64_t>(attempt)));
    Eigen::MatrixXd X = draw_covariates(c.law, c.n, rng);
    std::bernoulli_distribution coin;
    std::normal_distribution<double> eps(0.0, 1.0);
    std::vector<Eigen::Index> src, tgt;
    std::vector<int> a;
    std::vector<double> y;
    std::vector<double> row(static_cast<std::size_t>(c.law.dim));
    for (int i = 0; i < c.n; ++i) {
      for (int j = 0; j < c.law.dim; ++j) row[j] = X(i, j);
      const bool in_source = coin(rng, std::bernoulli_distribution::param_type(logistic(c.participation(row))));
      if (!in_source) {
        tgt.push_back(i);
        continue;
      }
      src.push_back(i);
      const int ai = coin(rng, std::bernoulli_distribution::param_type(logistic(c.propensity(row)))) ? 1 : 0;
      const double tau = c.cate(row);
      a.push_back(ai);
      y.push_back(c.baseline(row) + (ai - 0.5) * tau + c.noise_sd * eps(rng));
    }
    const auto treated = std::count(a.begin(), a.end(), 1);
    if (tgt.empty() || treated == 0 || treated == static_cast<long>(a.size())) continue;
    Eigen::MatrixXd Xs = X(src, Eigen::all);
    Eigen::MatrixXd Xt = X(tgt, Eigen::all);
    Eigen::VectorXd target = evaluate_terms(spec.h_terms(), Xt).colwise().mean().transpose();
    Eigen::VectorXi A = Eigen::Map<Eigen::VectorXi>(a.data(), static_cast<Eigen::Index>(a.size()));
    Eigen::VectorXd Y = Eigen::Map<Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
    return Replicate{SourceSample(std::move(Xs), std::move(A), std::move(Y)), std::move(target), std::move(Xt),
                     attempt};
  }
  throw Error(ErrorCode::EmptyArm, "scenario '" + c.name + "' keeps producing degenerate replicates");
}

/// Runs fn(i) for i in [0, count) on `jobs` threads. Results must be written
/// to per-index slots so that scheduling cannot affect them.
template <class Fn>
void parallel_for(std::size_t count, int jobs, Fn&& fn) {
  jobs = std::max(1, std::min<int>(jobs, static_cast<int>(std::max<std::size_t>(count, 1))));
  if (jobs == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (int t = 0; t < jobs; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

struct BoxplotRecord {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
  double lower_whisker = 0, upper_whisker = 0;
  std::vector<double> outliers;
};

/// Linear-interpolation quantile of sorted data.
inline double quantile_sorted(const std::vector<double>& s, double p) {
  if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double h = p * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (h - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

inline BoxplotRecord boxplot(std::vector<double> v) {
  BoxplotRecord b;
  if (v.empty()) return b;
  std::sort(v.begin(), v.end());
  b.min = v.front();
  b.max = v.back();
  b.q1 = quantile_sorted(v, 0.25);
  b.median = quantile_sorted(v, 0.5);
  b.q3 = quantile_sorted(v, 0.75);
  const double iqr = b.q3 - b.q1;
  const double lo_fence = b.q1 - 1.5 * iqr, hi_fence = b.q3 + 1.5 * iqr;
  b.lower_whisker = b.q1;
  b.upper_whisker = b.q3;
  for (double x : v) {
    if (x < lo_fence || x > hi_fence) {
      b.outliers.push_back(x);
    } else {
      b.lower_whisker = std::min(b.lower_whisker, x);
      b.upper_whisker = std::max(b.upper_whisker, x);
    }
  }
  return b;
}

struct ReplicateReport {
  Method method = Method::Extended;
  std::vector<double> errors;  // tau_hat - tau*, one per replicate, NaN when the method failed
  int failures = 0;
  int successes = 0;
  double bias = 0, rmse = 0, sd = 0;
  BoxplotRecord box;
};

/// Aggregates over the successful replicates; sd uses the 1/N divisor so that
/// rmse^2 = bias^2 + sd^2.
inline ReplicateReport aggregate(Method method, std::vector<double> errors) {
  ReplicateReport r;
  r.method = method;
  std::vector<double> ok;
  for (double e : errors) {
    if (std::isfinite(e)) ok.push_back(e);
    else ++r.failures;
  }
  r.errors = std::move(errors);
  r.successes = static_cast<int>(ok.size());
  if (ok.empty()) {
    r.bias = r.rmse = r.sd = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  const double n = static_cast<double>(ok.size());
  double sum = 0, sq = 0;
  for (double e : ok) {
    sum += e;
    sq += e * e;
  }
  r.bias = sum / n;
  r.rmse = std::sqrt(sq / n);
  double dev = 0;
  for (double e : ok) dev += (e - r.bias) * (e - r.bias);
  r.sd = std::sqrt(dev / n);
  r.box = boxplot(std::move(ok));
  return r;
}

struct ScenarioResult {
  ScenarioConfig config;
  double tau_star = 0;
  int ns_min = 0;
  int ns_max = 0;
  double ns_mean = 0;
  int redraws = 0;
  std::vector<ReplicateReport> methods;

  const ReplicateReport& method(Method m) const {
    for (const auto& r : methods)
      if (r.method == m) return r;
    throw Error(ErrorCode::InvalidArgument, "method not in report");
  }
};

struct GridOptions {
  int jobs = 1;
  std::optional<std::uint64_t> master_seed;  // overrides each scenario's seed
  std::optional<int> replicates;             // overrides each scenario's count
  int quadrature_points = 16;
  EstimatorOptions estimator;
};

inline const std::vector<Method>& comparison_methods() {
  static const std::vector<Method> m{Method::Ipw, Method::IpwEt, Method::EbalHOnly, Method::Extended};
  return m;
}

inline ScenarioResult run_scenario(const ScenarioConfig& c, const std::vector<Method>& methods,
                                   const GridOptions& opt = {}) {
  if (methods.empty()) throw Error(ErrorCode::InvalidArgument, "method list is empty");
  ScenarioResult res;
  res.config = c;
  const BasisSpec spec = c.basis_spec();
  res.tau_star = true_target_ate(c, opt.quadrature_points);
  const int reps = opt.replicates.value_or(c.replicates);
  const std::uint64_t master = opt.master_seed.value_or(c.seed);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::vector<double>> errors(methods.size(), std::vector<double>(static_cast<std::size_t>(reps), nan));
  std::vector<int> ns(static_cast<std::size_t>(reps), 0), redraws(static_cast<std::size_t>(reps), 0);

  parallel_for(static_cast<std::size_t>(reps), opt.jobs, [&](std::size_t r) {
    Replicate rep = draw_replicate(c, replicate_seed(master, c.name, r), spec);
    ns[r] = static_cast<int>(rep.source.size());
    redraws[r] = rep.redraws;
    for (std::size_t m = 0; m < methods.size(); ++m) {
      try {
        EstimateReport e = estimate(methods[m], rep.source, spec, rep.target_summary, opt.estimator);
        errors[m][r] = e.tau - res.tau_star;
      } catch (const Error&) {
        errors[m][r] = nan;
      }
    }
  });

  res.ns_min = *std::min_element(ns.begin(), ns.end());
  res.ns_max = *std::max_element(ns.begin(), ns.end());
  double total = 0;
  for (int v : ns) total += v;
  res.ns_mean = total / reps;
  for (int v : redraws) res.redraws += v;
  for (std::size_t m = 0; m < methods.size(); ++m) res.methods.push_back(aggregate(methods[m], std::move(errors[m])));
  return res;
}

inline std::vector<ScenarioResult> run_grid(const std::vector<ScenarioConfig>& configs,
                                            const std::vector<Method>& methods, const GridOptions& opt = {}) {
  std::vector<ScenarioResult> out;
  for (const auto& c : configs) out.push_back(run_scenario(c, methods, opt));
  return out;
}

}  // namespace ebcal
