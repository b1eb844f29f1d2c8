#include <gtest/gtest.h>

#include "ebcal/report.hpp"
#include "ebcal/simulation.hpp"
#include "oracles.hpp"

using namespace ebcal;

TEST(Scenario, BuiltinModelsHaveListedCoefficients) {
  std::vector<double> x{0.3, -1.1, 0.7, 1.6, -0.4};
  auto at = [&](const Model& m) { return m(x); };
  EXPECT_DOUBLE_EQ(at(participation_model()), 0.4 * x[0] + 0.3 * x[1] - 0.2 * x[3]);
  EXPECT_DOUBLE_EQ(at(propensity_model("P1")), 0.7 * x[1] + 0.5 * x[2]);
  EXPECT_DOUBLE_EQ(at(propensity_model("P2")), 0.35 * x[1] + 0.25 * x[2] + 0.2 * x[3] - 0.7 * x[4]);
  EXPECT_DOUBLE_EQ(at(propensity_model("P3")), 0.35 * x[1] - 0.4 * std::max(x[2], x[3]) - 0.7 * x[4]);
  EXPECT_DOUBLE_EQ(at(cate_model("T1")), x[0] - 0.6 * x[1] - 0.4 * x[2]);
  EXPECT_NEAR(at(cate_model("T2")), x[0] - 0.5 * std::exp(x[1] - 0.5 * x[2]), 1e-15);
  EXPECT_NEAR(at(baseline_model("M1")), 0.5 * x[0] + 0.3 * x[1] + 0.3 * x[2] - 0.4 * x[3] - 0.5 * x[4], 1e-15);
  EXPECT_NEAR(at(baseline_model("M2")),
              0.5 * x[0] + 0.3 * x[1] * x[1] + 0.2 * std::exp(x[2] - x[3] - 1) - 0.5 * x[4], 1e-15);
  EXPECT_EQ(builtin_grid().size(), 12u);
}

TEST(Scenario, JsonRoundTrip) {
  ScenarioConfig c = builtin_scenario("P3", "T2", "M2");
  ScenarioConfig back = scenario_from_json(to_json(c));
  EXPECT_EQ(back.name, c.name);
  std::vector<double> x{0.1, 0.2, -0.3, 1.4, -1.5};
  EXPECT_DOUBLE_EQ(back.propensity(x), c.propensity(x));
  EXPECT_DOUBLE_EQ(back.cate(x), c.cate(x));
  EXPECT_DOUBLE_EQ(back.baseline(x), c.baseline(x));
  EXPECT_EQ(back.n, c.n);
  EXPECT_EQ(back.seed, c.seed);
}

TEST(Scenario, CustomModelTermsParse) {
  auto j = nlohmann::json::parse(R"({
    "propensity": [{"kind": "max", "vars": ["x3", "x4"], "coef": -0.4},
                   {"kind": "exp", "coef": 0.5, "offset": -1, "slope": {"x2": 2}},
                   {"kind": "square", "var": "x1", "coef": 0.3}],
    "cate": "T1", "baseline": "M1"})");
  ScenarioConfig c = scenario_from_json(j);
  std::vector<double> x{0.5, 0.2, -0.3, 0.1, 0.0};
  EXPECT_NEAR(c.propensity(x), -0.4 * 0.1 + 0.5 * std::exp(-1 + 2 * 0.2) + 0.3 * 0.25, 1e-15);
  EXPECT_THROW(scenario_from_json(nlohmann::json::parse(R"({"propensity": "P9", "cate": "T1", "baseline": "M1"})")),
               Error);
  EXPECT_THROW(scenario_from_json(nlohmann::json::parse(R"({"cate": "T1", "baseline": "M1"})")), Error);
}

TEST(TargetAte, ConstantCate) {
  ScenarioConfig c = builtin_scenario("P1", "T1", "M1");
  c.cate = Model{{ModelTerm::constant(2.5)}};
  EXPECT_NEAR(true_target_ate(c), 2.5, 1e-12);
}

TEST(TargetAte, NoShiftGivesZeroForT1) {
  ScenarioConfig c = builtin_scenario("P1", "T1", "M1");
  c.participation = Model{{ModelTerm::constant(0.3)}};
  EXPECT_NEAR(true_target_ate(c), 0.0, 1e-12);
}

TEST(TargetAte, QuadratureAgreesWithMonteCarloOracle) {
  for (const char* t : {"T1", "T2"}) {
    ScenarioConfig c = builtin_scenario("P1", t, "M1");
    const double tau = true_target_ate(c, 16);
    // tau* = E[(1 - rho) tau] / E[1 - rho]; ratio estimator with delta-method SE.
    auto num = oracle::mc_mean([&](const std::vector<double>& x) { return (1 - logistic(c.participation(x))) * c.cate(x); },
                               5, -2, 2, 10'000'000, 77);
    auto den = oracle::mc_mean([&](const std::vector<double>& x) { return 1 - logistic(c.participation(x)); }, 5, -2, 2,
                               10'000'000, 77);
    const double mc = num.first / den.first;
    // Same draws in both means; bound the ratio SE by the sum of relative SEs.
    const double se = std::abs(mc) * (num.second / std::abs(num.first) + den.second / den.first) + num.second / den.first;
    EXPECT_NEAR(tau, mc, 3 * se) << t;
  }
  EXPECT_NEAR(true_target_ate(builtin_scenario("P1", "T1", "M1"), 16), -0.137805, 5e-6);
  EXPECT_NEAR(true_target_ate(builtin_scenario("P1", "T2", "M1"), 16), -1.15563, 5e-6);
}

TEST(DrawReplicate, SeedDeterminism) {
  ScenarioConfig c = builtin_scenario("P2", "T2", "M2");
  auto spec = c.basis_spec();
  Replicate a = draw_replicate(c, 99, spec), b = draw_replicate(c, 99, spec), d = draw_replicate(c, 100, spec);
  EXPECT_TRUE(a.source.X() == b.source.X());
  EXPECT_TRUE(a.source.Y() == b.source.Y());
  EXPECT_TRUE(a.source.A() == b.source.A());
  EXPECT_TRUE(a.target_summary == b.target_summary);
  EXPECT_FALSE(a.source.Y().size() == d.source.Y().size() && a.source.Y() == d.source.Y());
}

TEST(DrawReplicate, TargetSummaryIsHoldoutMean) {
  ScenarioConfig c = builtin_scenario("P1", "T1", "M1");
  auto spec = c.basis_spec();
  Replicate r = draw_replicate(c, 5, spec);
  EXPECT_EQ(r.source.size() + r.holdout.rows(), c.n);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(spec.h_size());
  for (Eigen::Index i = 0; i < r.holdout.rows(); ++i) {
    mean[0] += 1.0;
    for (int k = 1; k < spec.h_size(); ++k) mean[k] += r.holdout(i, spec.h_terms()[k].var);
  }
  mean /= static_cast<double>(r.holdout.rows());
  EXPECT_LE((mean - r.target_summary).lpNorm<Eigen::Infinity>(), 1e-15);
  EXPECT_EQ(r.target_summary[0], 1.0);
}

TEST(DrawReplicate, SourceSizeAcrossReplicates) {
  ScenarioConfig c = builtin_scenario("P1", "T1", "M1");
  auto spec = c.basis_spec();
  double total = 0;
  int lo = c.n, hi = 0;
  for (int r = 0; r < 400; ++r) {
    const int ns = static_cast<int>(draw_replicate(c, replicate_seed(c.seed, c.name, r), spec).source.size());
    lo = std::min(lo, ns);
    hi = std::max(hi, ns);
    total += ns;
  }
  EXPECT_GE(lo, 320);
  EXPECT_LE(hi, 450);
  // E[n_s] = n E[rho(X)] = 400 by the odd symmetry of the participation logit.
  EXPECT_NEAR(total / 400, 400.0, 10.0);
}

TEST(DrawReplicate, EstimatesIgnoreHoldoutRows) {
  ScenarioConfig c = builtin_scenario("P2", "T1", "M1");
  auto spec = c.basis_spec();
  Replicate r = draw_replicate(c, 8, spec);
  const double before = estimate(Method::Extended, r.source, spec, r.target_summary).tau;
  r.holdout.setConstant(std::numeric_limits<double>::quiet_NaN());
  EXPECT_EQ(estimate(Method::Extended, r.source, spec, r.target_summary).tau, before);
}

TEST(Aggregate, RmseDecomposition) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z(0.3, 2.0);
  std::vector<double> e(257);
  for (auto& v : e) v = z(rng);
  e[10] = std::numeric_limits<double>::quiet_NaN();
  ReplicateReport r = aggregate(Method::Ipw, e);
  EXPECT_EQ(r.failures, 1);
  EXPECT_EQ(r.successes, 256);
  EXPECT_NEAR(r.rmse * r.rmse, r.bias * r.bias + r.sd * r.sd, 1e-12);
}

TEST(Aggregate, BoxplotQuantiles) {
  std::vector<double> v{1, 2, 3, 4, 5, 6, 7, 8, 100};
  BoxplotRecord b = boxplot(v);
  EXPECT_DOUBLE_EQ(b.median, 5.0);
  EXPECT_DOUBLE_EQ(b.q1, 3.0);
  EXPECT_DOUBLE_EQ(b.q3, 7.0);
  ASSERT_EQ(b.outliers.size(), 1u);
  EXPECT_EQ(b.outliers[0], 100.0);
  EXPECT_EQ(b.upper_whisker, 8.0);
  EXPECT_EQ(b.lower_whisker, 1.0);
}

TEST(RunGrid, IdenticalAcrossThreadCounts) {
  std::vector<ScenarioConfig> configs{builtin_scenario("P1", "T1", "M1"), builtin_scenario("P3", "T2", "M2")};
  GridOptions opt;
  opt.replicates = 24;
  std::string reference;
  for (int jobs : {1, 3, 8}) {
    opt.jobs = jobs;
    std::string json = render_grid(run_grid(configs, comparison_methods(), opt), {ReportFormat::Json, false});
    if (reference.empty()) reference = json;
    EXPECT_EQ(json, reference) << jobs;
  }
}

TEST(RunGrid, EmptyMethodListRejected) {
  EXPECT_THROW(run_scenario(builtin_scenario("P1", "T1", "M1"), {}), Error);
}
