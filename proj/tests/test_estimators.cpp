#include <gtest/gtest.h>

#include <random>

#include "ebcal/estimators.hpp"
#include "ebcal/scenario.hpp"
#include "ebcal/simulation.hpp"

using namespace ebcal;

namespace {

Replicate p1_replicate(std::uint64_t seed, int n = 800) {
  ScenarioConfig c = builtin_scenario("P1", "T1", "M1");
  c.n = n;
  return draw_replicate(c, seed, c.basis_spec());
}

}  // namespace

TEST(WeightedAte, UniformWeightsAndOutcomeEqualToTreatment) {
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(6, 1);
  Eigen::VectorXi A(6);
  A << 1, 0, 1, 0, 1, 1;
  SourceSample s(X, A, A.cast<double>());
  EstimateReport r = estimate_weighted_ate(s, {Eigen::VectorXd::Ones(6), false, Method::Extended});
  EXPECT_DOUBLE_EQ(r.tau, 1.0);
}

TEST(WeightedAte, HandComputedExample) {
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(4, 1);
  Eigen::VectorXi A(4);
  A << 1, 1, 0, 0;
  Eigen::VectorXd Y(4);
  Y << 3, 1, 1, 3;
  Eigen::VectorXd w(4);
  w << 1, 3, 2, 2;
  EstimateReport r = estimate_weighted_ate(SourceSample(X, A, Y), {w, false, Method::Extended});
  EXPECT_DOUBLE_EQ(r.tau, -0.5);
}

TEST(WeightedAte, SingleRowPerArm) {
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(2, 1);
  Eigen::VectorXi A(2);
  A << 1, 0;
  Eigen::VectorXd Y(2);
  Y << 5.5, 2.0;
  Eigen::VectorXd w(2);
  w << 0.37, 12.0;
  EXPECT_DOUBLE_EQ(estimate_weighted_ate(SourceSample(X, A, Y), {w, false, Method::Ipw}).tau, 3.5);
}

TEST(WeightedAte, RejectsNonPositiveWeights) {
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(2, 1);
  Eigen::VectorXi A(2);
  A << 1, 0;
  Eigen::VectorXd w(2);
  w << 1.0, 0.0;
  EXPECT_THROW(estimate_weighted_ate(SourceSample(X, A, Eigen::VectorXd::Zero(2)), {w, false, Method::Ipw}), Error);
}

TEST(Logistic, BalancedArmsGiveHalf) {
  Eigen::VectorXi A(10);
  A << 1, 0, 1, 0, 1, 0, 1, 0, 1, 0;
  LogisticModel m = fit_logistic_irls(A, Eigen::MatrixXd(10, 0));
  EXPECT_NEAR(m.coefficients[0], 0.0, 1e-12);
  EXPECT_TRUE((m.propensity.array() - 0.5).abs().maxCoeff() < 1e-12);
}

TEST(Logistic, RecoversP1CoefficientsAtLargeN) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  const int n = 100000;
  Eigen::MatrixXd Z(n, 2);
  Eigen::VectorXi A(n);
  std::bernoulli_distribution coin;
  for (int i = 0; i < n; ++i) {
    Z(i, 0) = u(rng);
    Z(i, 1) = u(rng);
    const double p = logistic(0.7 * Z(i, 0) + 0.5 * Z(i, 1));
    A[i] = coin(rng, std::bernoulli_distribution::param_type(p)) ? 1 : 0;
  }
  LogisticModel m = fit_logistic_irls(A, Z);
  EXPECT_NEAR(m.coefficients[0], 0.0, 0.03);
  EXPECT_NEAR(m.coefficients[1], 0.7, 0.03);
  EXPECT_NEAR(m.coefficients[2], 0.5, 0.03);
}

TEST(Logistic, SeparationDetected) {
  Eigen::MatrixXd Z(6, 1);
  Z << -3, -2, -1, 1, 2, 3;
  Eigen::VectorXi A(6);
  A << 0, 0, 0, 1, 1, 1;
  try {
    fit_logistic_irls(A, Z);
    FAIL() << "expected separation";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SeparationDetected);
  }
}

TEST(Ipw, ConstantPropensityReducesToDifferenceOfMeans) {
  auto rep = p1_replicate(1);
  EstimatorOptions opt;
  opt.ipw_regressors = std::vector<int>{};
  EstimateReport ipw = estimate_ipw(rep.source, opt);
  double m1 = 0, m0 = 0;
  for (Eigen::Index i : rep.source.treated()) m1 += rep.source.Y()[i];
  for (Eigen::Index i : rep.source.control()) m0 += rep.source.Y()[i];
  m1 /= rep.source.treated().size();
  m0 /= rep.source.control().size();
  EXPECT_NEAR(ipw.tau, m1 - m0, 1e-12);
}

TEST(IpwEt, SourceMeansReduceToIpw) {
  auto rep = p1_replicate(2);
  BasisSpec spec = parse_basis("H:const,x1,x2,x3;G:x4,x5");
  Eigen::VectorXd src = evaluate_terms(spec.h_terms(), rep.source.X()).colwise().mean().transpose();
  src[0] = 1.0;
  EXPECT_NEAR(estimate_ipw_et(rep.source, spec, src).tau, estimate_ipw(rep.source).tau, 1e-10);
}

TEST(IpwEt, ExtremeUnitCollapsesEss) {
  // One treated unit in a region where treatment is rare dominates its arm.
  std::mt19937_64 rng(9);
  std::normal_distribution<double> z;
  const int n = 400;
  Eigen::MatrixXd X(n, 1);
  Eigen::VectorXi A(n);
  Eigen::VectorXd Y(n);
  std::bernoulli_distribution coin;
  for (int i = 0; i < n; ++i) {
    X(i, 0) = z(rng);
    A[i] = coin(rng, std::bernoulli_distribution::param_type(logistic(3.0 * X(i, 0)))) ? 1 : 0;
    Y[i] = z(rng);
  }
  X(0, 0) = -4.0;
  A[0] = 1;
  SourceSample s(X, A, Y);
  BasisSpec spec = parse_basis("H:const,x1");
  Eigen::VectorXd target(2);
  target << 1.0, X.col(0).mean();
  EstimateReport r = estimate_ipw_et(s, spec, target);
  EXPECT_LT(r.diagnostics.ess_treated, 0.1 * static_cast<double>(s.treated().size()));
}

TEST(Ebal, ConstantOnlyEqualsDifferenceOfMeans) {
  auto rep = p1_replicate(3);
  BasisSpec spec = parse_basis("H:const");
  Eigen::VectorXd t = Eigen::VectorXd::Ones(1);
  EstimatorOptions opt;
  opt.ipw_regressors = std::vector<int>{};
  EXPECT_NEAR(estimate_ebal(rep.source, spec, t).tau, estimate_ipw(rep.source, opt).tau, 1e-12);
}

TEST(Extended, EmptyGEqualsEbal) {
  auto rep = p1_replicate(4);
  BasisSpec spec = parse_basis("H:const,x1,x2,x3");
  EXPECT_NEAR(estimate_extended(rep.source, spec, rep.target_summary).tau,
              estimate_ebal(rep.source, spec, rep.target_summary).tau, 1e-12);
}

namespace ebcal {
void PrintTo(Method m, std::ostream* os) { *os << method_label(m); }
}  // namespace ebcal

class Equivariance : public ::testing::TestWithParam<Method> {};

TEST_P(Equivariance, LocationScaleAndLabelSymmetry) {
  const Method m = GetParam();
  auto rep = p1_replicate(5);
  BasisSpec spec = parse_basis("H:const,x1,x2,x3;G:x4,x5");
  const double base = estimate(m, rep.source, spec, rep.target_summary).tau;

  Eigen::VectorXd shifted = rep.source.Y().array() + 7.5;
  EXPECT_NEAR(estimate(m, rep.source.with_outcome(shifted), spec, rep.target_summary).tau, base, 1e-10);

  Eigen::VectorXd scaled = -3.0 * rep.source.Y();
  EXPECT_NEAR(estimate(m, rep.source.with_outcome(scaled), spec, rep.target_summary).tau, -3.0 * base, 1e-10);

  if (m == Method::EbalHOnly || m == Method::Extended) {
    Eigen::VectorXi flipped = (1 - rep.source.A().array()).matrix();
    SourceSample swapped = rep.source.with_treatment(flipped).with_outcome(-rep.source.Y());
    EXPECT_NEAR(estimate(m, swapped, spec, rep.target_summary).tau, base, 1e-9);
  }
}

TEST_P(Equivariance, WeightsPositiveAndArmSumsEqualN) {
  const Method m = GetParam();
  auto rep = p1_replicate(6);
  BasisSpec spec = parse_basis("H:const,x1,x2,x3;G:x4,x5");
  EstimateReport r = estimate(m, rep.source, spec, rep.target_summary);
  const auto& w = r.weights.w;
  EXPECT_GT(w.minCoeff(), 0.0);
  double s1 = 0, s0 = 0;
  for (Eigen::Index i : rep.source.treated()) s1 += w[i];
  for (Eigen::Index i : rep.source.control()) s0 += w[i];
  const double n = static_cast<double>(rep.source.size());
  EXPECT_NEAR(s1, n, 1e-9 * n);
  EXPECT_NEAR(s0, n, 1e-9 * n);
}

INSTANTIATE_TEST_SUITE_P(AllMethods, Equivariance,
                         ::testing::Values(Method::Ipw, Method::IpwEt, Method::EbalHOnly, Method::Extended),
                         [](const auto& info) {
                           std::string s = method_label(info.param);
                           return s == "IPW+ET" ? std::string("IPW_ET") : s;
                         });

TEST(Estimators, ComputeWeightsMatchesReportWeightsAfterRescaling) {
  auto rep = p1_replicate(7);
  BasisSpec spec = parse_basis("H:const,x1,x2,x3;G:x4,x5");
  for (Method m : comparison_methods()) {
    WeightSet raw = compute_weights(m, rep.source, spec, rep.target_summary);
    EstimateReport r = estimate(m, rep.source, spec, rep.target_summary);
    Eigen::VectorXd w = raw.w;
    detail::normalize_arms(w, Arms::of(rep.source));
    EXPECT_LE((w - r.weights.w).lpNorm<Eigen::Infinity>(), 1e-9) << method_label(m);
  }
}

TEST(Estimators, ParseMethodNames) {
  EXPECT_EQ(parse_method("IPW"), Method::Ipw);
  EXPECT_EQ(parse_method("ipw+et"), Method::IpwEt);
  EXPECT_EQ(parse_method("ebal"), Method::EbalHOnly);
  EXPECT_EQ(parse_method("proposed"), Method::Extended);
  EXPECT_FALSE(parse_method("dr").has_value());
}
