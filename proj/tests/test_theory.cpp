#include <gtest/gtest.h>

#include "constructed.hpp"
#include "ebcal/simulation.hpp"
#include "ebcal/theory.hpp"

using namespace ebcal;

namespace {

const BasisSpec& builtin_basis() {
  static const BasisSpec spec = parse_basis("H:const,x1,x2,x3;G:x4,x5");
  return spec;
}

const Grid& grid8() {
  static const Grid g = tensor_gauss_legendre(5, -2.0, 2.0, 8);
  return g;
}

TheoryOracle builtin_oracle(const std::string& p, const std::string& t, const std::string& m) {
  return TheoryOracle(truth_from_scenario(builtin_scenario(p, t, m)), builtin_basis(), grid8());
}

}  // namespace

TEST(Quadrature, GaussLegendreIntegratesPolynomialsExactly) {
  Grid g = tensor_gauss_legendre(2, -2.0, 2.0, 4);
  EXPECT_NEAR(g.weights.sum(), 1.0, 1e-14);
  // E[x^6 y^2] over Uniform[-2,2]^2 = (64/7)(4/3).
  double m = 0;
  for (Eigen::Index k = 0; k < g.size(); ++k) m += g.weights[k] * std::pow(g.nodes(k, 0), 6) * std::pow(g.nodes(k, 1), 2);
  EXPECT_NEAR(m, 64.0 / 7.0 * 4.0 / 3.0, 1e-12);
}

TEST(Quadrature, SobolNormalMoments) {
  Grid g = sobol_normal(2, 1 << 16, 1.0, 2.0);
  double m1 = 0, m2 = 0;
  for (Eigen::Index k = 0; k < g.size(); ++k) {
    m1 += g.weights[k] * g.nodes(k, 0);
    m2 += g.weights[k] * (g.nodes(k, 1) - 1.0) * (g.nodes(k, 1) - 1.0);
  }
  EXPECT_NEAR(m1, 1.0, 1e-3);
  EXPECT_NEAR(m2, 4.0, 2e-2);
}

TEST(Theory, RtildeIsOneUnderSymmetricNull) {
  TruthFunctions t;
  t.propensity = [](std::span<const double>) { return 0.5; };
  t.participation = [](std::span<const double>) { return 0.4; };
  t.mu0 = [](std::span<const double> x) { return x[0]; };
  t.mu1 = [](std::span<const double> x) { return 2 * x[0]; };
  t.sigma0_sq = t.sigma1_sq = [](std::span<const double>) { return 1.0; };
  TheoryOracle o(t, BasisSpec({Term::constant()}), tensor_gauss_legendre(2, -2, 2, 6));
  EXPECT_TRUE(o.hypothesis_holds());
  EXPECT_LE((o.rtilde().array() - 1.0).abs().maxCoeff(), 1e-10);
}

TEST(Theory, RtildeIntegratesToOne) {
  for (const char* p : {"P1", "P2", "P3"}) {
    TheoryOracle o = builtin_oracle(p, "T1", "M1");
    EXPECT_NEAR(o.tabulated().source_measure().dot(o.rtilde()), 1.0, 1e-6) << p;
  }
}

TEST(Theory, LimitingDualCalibratesControlsToTarget) {
  TheoryOracle o = builtin_oracle("P2", "T1", "M1");
  ASSERT_TRUE(o.hypothesis_holds());
  const auto& t = o.tabulated();
  Eigen::VectorXd lhs = t.H.transpose() * o.tilted_measure();
  Eigen::VectorXd rhs = t.H.transpose() * t.target_measure();
  EXPECT_LE((lhs - rhs).lpNorm<Eigen::Infinity>(), 1e-8);
  // Decomposition detected from the P2 coefficients.
  const auto& dec = o.limiting_dual()->decomposition;
  EXPECT_NEAR(dec.lambda_pi[2], 0.35, 1e-8);
  EXPECT_NEAR(dec.lambda_pi[3], 0.25, 1e-8);
  EXPECT_NEAR(dec.gamma_pi[0], 0.2, 1e-8);
  EXPECT_NEAR(dec.gamma_pi[1], -0.7, 1e-8);
}

TEST(Theory, P3HasNoLogisticDecomposition) {
  TheoryOracle o = builtin_oracle("P3", "T1", "M1");
  EXPECT_FALSE(o.hypothesis_holds());
  EXPECT_FALSE(o.report().hypothesis_holds);
}

TEST(Theory, ProjectionRecoversSpanMembers) {
  TheoryOracle o = builtin_oracle("P1", "T1", "M1");
  Eigen::VectorXd c(4);
  c << 0.3, -1.2, 0.5, 2.0;
  Eigen::VectorXd f = o.tabulated().H * c;
  Projection p = o.project_h(f);
  EXPECT_LE((p.coefficients - c).lpNorm<Eigen::Infinity>(), 1e-8);
  EXPECT_LE((p.values - f).lpNorm<Eigen::Infinity>(), 1e-8);
}

TEST(Theory, ProjectionOfOrthogonalFunctionVanishes) {
  TheoryOracle o = builtin_oracle("P2", "T1", "M1");
  const auto& t = o.tabulated();
  // Gram-Schmidt of x4 * x5 against H under the tilted measure.
  Eigen::VectorXd g(t.H.rows());
  for (Eigen::Index k = 0; k < g.size(); ++k) g[k] = t.G(k, 0) * t.G(k, 1) + t.H(k, 1);
  Eigen::VectorXd f = g - o.project_h(g).values;
  EXPECT_LE(o.project_h(f).values.lpNorm<Eigen::Infinity>(), 1e-8);
}

TEST(Theory, GPerpProjectionAnnihilatesH) {
  TheoryOracle o = builtin_oracle("P2", "T2", "M2");
  const auto& H = o.tabulated().H;
  for (Eigen::Index k = 0; k < H.cols(); ++k)
    EXPECT_LE(o.project_g_perp(H.col(k)).values.lpNorm<Eigen::Infinity>(), 1e-8) << k;
}

TEST(Theory, ProjectionContracts) {
  TheoryOracle o = builtin_oracle("P2", "T2", "M2");
  const auto& t = o.tabulated();
  const auto& mu = o.tilted_measure();
  for (const Eigen::VectorXd& f : {Eigen::VectorXd(t.mu1), Eigen::VectorXd(t.mu0), t.tau(), t.m()}) {
    Eigen::VectorXd r = f - o.project_h(f).values;
    EXPECT_LE(mu.dot(r.cwiseProduct(r)), mu.dot(f.cwiseProduct(f)) + 1e-12);
  }
}

TEST(Theory, VarianceTermsNonNegativeOnBuiltinGrid) {
  for (const auto& c : builtin_grid()) {
    AsymptoticReport r = asymptotic_variance(truth_from_scenario(c), builtin_basis(), grid8());
    EXPECT_GE(r.v1, 0.0) << c.name;
    EXPECT_GE(r.v2, 0.0) << c.name;
    EXPECT_GE(r.v3, -1e-10) << c.name;
    EXPECT_NEAR(r.total, r.v1 + r.v2 + r.v3, 1e-12) << c.name;
  }
}

TEST(Theory, OutcomeRelevantGTermReducesV3) {
  // M2 carries x5 outside Span{H}; adding x5 to G must help.
  auto truth = truth_from_scenario(builtin_scenario("P1", "T1", "M2"));
  AsymptoticReport without = asymptotic_variance(truth, parse_basis("H:const,x1,x2,x3;G:x4"), grid8());
  AsymptoticReport with = asymptotic_variance(truth, parse_basis("H:const,x1,x2,x3;G:x4,x5"), grid8());
  EXPECT_LT(with.v3, without.v3);
}

TEST(Theory, GPerpRefinementNeverIncreasesThirdTerm) {
  // Under Condition (c) the third term with Pi_{G-perp}(m) removed is at most
  // the one with Span{H} residuals alone.
  for (const char* m : {"M1", "M2"}) {
    TheoryOracle o = builtin_oracle("P2", "T1", m);
    ASSERT_EQ(o.conditions().c, ConditionStatus::Holds);
    const auto& t = o.tabulated();
    const Eigen::ArrayXd pi = t.pi.array();
    const Eigen::ArrayXd pm = o.project_g_perp(t.m()).values.array();
    auto third = [&](bool refine) {
      Eigen::ArrayXd e1 = t.mu1.array() - o.project_h(t.mu1).values.array();
      Eigen::ArrayXd e0 = t.mu0.array() - o.project_h(t.mu0).values.array();
      if (refine) {
        e1 -= pm;
        e0 -= pm;
      }
      return o.tilted_measure().dot((o.rtilde().array() * (e1.square() / pi + e0.square() / (1 - pi))).matrix());
    };
    EXPECT_LE(third(true), third(false) + 1e-12) << m;
  }
}

TEST(Theory, ConditionDetectors) {
  AsymptoticReport r = asymptotic_variance(truth_from_scenario(builtin_scenario("P2", "T1", "M1")), builtin_basis(), grid8());
  EXPECT_EQ(r.conditions.c, ConditionStatus::Holds);   // T1 in Span{H}
  EXPECT_EQ(r.conditions.a, ConditionStatus::Fails);   // M1 uses x4, x5
  AsymptoticReport r2 = asymptotic_variance(truth_from_scenario(builtin_scenario("P2", "T2", "M1")), builtin_basis(), grid8());
  EXPECT_EQ(r2.conditions.c, ConditionStatus::Fails);
}

TEST(Theory, EfficientTruthAttainsBound) {
  TheoryOracle o(testing_support::efficient_truth(), builtin_basis(), grid8());
  AsymptoticReport r = o.report();
  ASSERT_TRUE(r.hypothesis_holds);
  EXPECT_EQ(r.conditions.a, ConditionStatus::Holds);
  EXPECT_EQ(r.conditions.b, ConditionStatus::Holds);
  EXPECT_EQ(r.conditions.c, ConditionStatus::Holds);
  EXPECT_LE(std::abs(r.v3), 1e-10);
  EXPECT_LE(std::abs(r.total - r.bound) / r.bound, 1e-6);
}

TEST(Theory, TauStarMatchesSimulationHelper) {
  auto c = builtin_scenario("P2", "T1", "M1");
  TheoryOracle o(truth_from_scenario(c), builtin_basis(), grid8());
  EXPECT_NEAR(o.tau_star(), true_target_ate(c, 8), 1e-12);
}
