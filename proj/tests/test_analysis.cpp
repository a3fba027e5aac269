#include <gtest/gtest.h>

#include "ifl/analysis.hpp"
#include "support.hpp"

using namespace ifl;
using ifl::testing::example1;

namespace {

// Brute-force oracle: 100001-point scan of u_i over [0, s_max].
double dense_best_utility(const GameInstance& g, const Vec& w, Vec s, std::size_t i) {
  double best = -std::numeric_limits<double>::infinity();
  const double smax = g.agent(i).s_max;
  for (int k = 0; k <= 100000; ++k) {
    s[i] = smax * k / 100000.0;
    try {
      best = std::max(best, utility(g, i, w, s).utility);
    } catch (const SingularDenominator&) {
    }
  }
  return best;
}

GameInstance concave_in_s(double lambda, double kappa) {
  CoupledQuadraticAccuracy::Params p;
  p.r = {0, 0, 0};
  p.q = {3, 2, 4};
  p.alpha = lambda;
  p.rho = 0;
  p.kappa = kappa;
  p.direction = {1, -1};
  p.theta = {0.5, 0.5};
  p.curvature = 2;
  std::vector<AgentSpec> agents;
  for (std::size_t i = 0; i < 3; ++i) agents.push_back({i, 8, CostModel::linear(0.1), 4});
  return GameInstance(agents, std::make_shared<CoupledQuadraticAccuracy>(p), PaymentRule::none());
}

RoundRecord record(long t, double g, double gt) {
  RoundRecord r;
  r.t = t;
  r.g_norm = g;
  r.gt_norm = gt;
  return r;
}

}  // namespace

TEST(BestResponse, ExampleOneCorners) {
  const auto g = example1();
  EXPECT_EQ(best_response(g, Vec{0.5, 1.5}, Vec{0, 5}, 0).s, 0.0);
  EXPECT_NEAR(best_response(g, Vec{0.5, 1.5}, Vec{0, 5}, 1).s, 5.0, 1e-6);
  // At w = theta accuracy no longer depends on s, so contributing nothing is optimal.
  const auto br = best_response(g, Vec{1, 2}, Vec{5, 5}, 0);
  EXPECT_EQ(br.s, 0.0);
  EXPECT_NEAR(br.utility, 1.0, 1e-15);
}

TEST(BestResponse, StepsAroundASingularPoint) {
  // s_{-i} = 0 and sigma0 = 0: s_i = 0 is singular and must not be chosen.
  const auto br = best_response(example1(), Vec{0.5, 1.5}, Vec{2, 0}, 0);
  EXPECT_GT(br.s, 0.0);
  EXPECT_TRUE(std::isfinite(br.utility));
}

TEST(BestResponse, AgreesWithDenseScanOnRandomInstances) {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const auto g = ifl::testing::random_quadratic(rng, 3, 2, PaymentRule::linear_transfer(rng.uniform(0, 0.3)), 0.5);
    const Vec w = ifl::testing::random_vec(rng, 2, 3);
    const Vec s = ifl::testing::random_interior(rng, g);
    for (std::size_t i = 0; i < 3; ++i) {
      const auto br = best_response(g, w, s, i);
      const double oracle = dense_best_utility(g, w, s, i);
      EXPECT_GE(br.utility, oracle - 1e-9);
      Vec t = s;
      t[i] = br.s;
      EXPECT_NEAR(utility(g, i, w, t).utility, br.utility, 1e-15);
    }
  }
}

TEST(BestResponse, RejectsBadArguments) {
  EXPECT_THROW(best_response(example1(), Vec{0, 0}, Vec{1, 1}, 0, 2), ConfigError);
  EXPECT_THROW(best_response(example1(), Vec{0, 0}, Vec{1, 1}, 2), ConfigError);
  EXPECT_THROW(best_response(example1(), Vec{0, 0}, Vec{1, 6}, 0), ConfigError);
}

TEST(CertifyNash, ExampleOneProfiles) {
  const auto g = example1();
  const auto good = certify_nash(g, Vec{0.5, 1.5}, Vec{0, 5}, 1e-6);
  EXPECT_TRUE(good.certified);
  EXPECT_FALSE(good.agent.has_value());
  EXPECT_LE(good.regrets[0], 1e-6);
  EXPECT_LE(good.regrets[1], 1e-6);

  const auto bad = certify_nash(g, Vec{1, 2}, Vec{5, 5}, 1e-6);
  EXPECT_FALSE(bad.certified);
  ASSERT_TRUE(bad.agent.has_value());
  EXPECT_EQ(*bad.agent, 0u);  // the costlier agent gains 0.04 * 5
  EXPECT_EQ(bad.deviation, 0.0);
  EXPECT_NEAR(bad.gain, 0.2, 1e-12);
  EXPECT_EQ(bad.to_json().at("verdict"), "refuted");
}

TEST(CertifyNash, BestResponseProfileOfAConcaveGameIsCertified) {
  // Without coupling the best responses do not interact, so one round of them is an equilibrium.
  const auto g = concave_in_s(1.0, 0.0);
  const Vec w{0.3, 0.7};
  Vec s{4, 4, 4};
  Vec br(3);
  for (std::size_t i = 0; i < 3; ++i) br[i] = best_response(g, w, s, i).s;
  const auto cert = certify_nash(g, w, br, 1e-6);
  EXPECT_TRUE(cert.certified);
  for (double r : cert.regrets) EXPECT_LE(r, 1e-6 + kGoldenTol);
}

TEST(CertifyNash, RejectsNonFiniteEps) {
  EXPECT_THROW(certify_nash(example1(), Vec{0.5, 1.5}, Vec{0, 5}, std::numeric_limits<double>::infinity()),
               ConfigError);
  EXPECT_THROW(certify_nash(example1(), Vec{0.5, 1.5}, Vec{0, 5}, -1), ConfigError);
}

TEST(BudgetAudit, PassesForTransfersAndIsVacuousWithoutThem) {
  Rng rng(4);
  std::vector<Vec> profiles;
  for (int k = 0; k < 200; ++k) {
    Vec s(static_cast<std::size_t>(rng.integer(2, 9)));
    for (auto& x : s) x = rng.uniform(0, 50);
    profiles.push_back(s);
  }
  const auto a = audit_budget_balance(PaymentRule::linear_transfer(3), profiles);
  EXPECT_TRUE(a.pass);
  EXPECT_FALSE(a.vacuous);
  EXPECT_LE(a.max_abs_sum, a.tolerance);
  EXPECT_TRUE(audit_budget_balance(PaymentRule::none(), profiles).vacuous);
}

TEST(EstimateMatrices, MatchesClosedFormQuadraticBlocks) {
  Rng rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    const auto g = ifl::testing::random_quadratic(rng, 3, 2, PaymentRule::linear_transfer(0.2), 0.3);
    const auto& qa = dynamic_cast<const QuadraticAccuracy&>(g.accuracy());
    const Vec w = ifl::testing::random_vec(rng, 2, 3);
    const Vec s = ifl::testing::random_interior(rng, g);
    const auto est = estimate_matrices(g, w, s);
    const auto exact = ifl::testing::quadratic_blocks(qa.theta(), qa.sigma0(), w, s);
    EXPECT_LT(ifl::testing::rel_error(est.G, exact.G), 1e-4);
    EXPECT_LT(ifl::testing::rel_error(est.G_tilde, exact.G_tilde), 1e-4);
    EXPECT_LT(ifl::testing::rel_error(est.H, exact.H), 1e-4);
    EXPECT_LT(ifl::testing::rel_error(est.H_tilde, exact.H_tilde), 1e-4);
  }
}

TEST(EstimateMatrices, ShapesAndLinearUtilities) {
  auto g = concave_in_s(0.0, 0.0);
  const auto hb = estimate_matrices(g, Vec{0, 0}, Vec{2, 3, 4});
  EXPECT_EQ(hb.G.rows(), 3);
  EXPECT_EQ(hb.H.rows(), 3);
  EXPECT_EQ(hb.H.cols(), 2);
  EXPECT_EQ(hb.H_tilde.rows(), 2);
  EXPECT_EQ(hb.H_tilde.cols(), 3);
  EXPECT_LT(hb.G.cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT(hb.H.cwiseAbs().maxCoeff(), 1e-6);
}

TEST(EstimateMatrices, RejectsBoundaryProfiles) {
  EXPECT_THROW(estimate_matrices(example1(), Vec{0, 0}, Vec{0, 5}), ConfigError);
  EXPECT_THROW(estimate_matrices(example1(), Vec{0, 0}, Vec{1, 1}, 0), ConfigError);
}

TEST(AssumptionCheck, ConstructedLambdaIsCertified) {
  const auto g = concave_in_s(0.7, 0.1);
  const auto samples = assumption_samples(g, Vec{0.5, 0.5}, 1.0, 16);
  const auto est = check_assumption1(samples, g, 0.7, 1.0);
  EXPECT_TRUE(est.nsd_ok);
  EXPECT_NEAR(est.lambda, 0.7, 1e-5);
  // G~ = -curvature I, so lambda~ = 2.
  EXPECT_NEAR(est.lambda_tilde, 2.0, 1e-5);
  EXPECT_TRUE(est.nsd_tilde_ok);
  EXPECT_FALSE(check_assumption1(samples, g, 0.8, 1.0).nsd_ok);
  EXPECT_FALSE(check_assumption1(samples, g, 0.7, 2.1).nsd_tilde_ok);
  EXPECT_EQ(est.sample_count, 16u);
}

TEST(AssumptionCheck, StrictlyConcaveWithZeroLambda) {
  const auto g = concave_in_s(0.5, 0.0);
  const auto est = check_assumption1(assumption_samples(g, Vec{0, 0}, 1.0, 8), g, 0.0, 0.0);
  EXPECT_TRUE(est.nsd_ok);
  EXPECT_TRUE(est.nsd_tilde_ok);
  EXPECT_LT(est.P, 1e-6);
  EXPECT_LT(est.P_tilde, 1e-6);
}

TEST(AssumptionCheck, CoupledReferenceConstants) {
  const auto g = ifl::testing::coupled_reference();
  const auto est = check_assumption1(assumption_samples(g, Vec{1, 1}, 2.0), g, 1.0, 1.0);
  EXPECT_TRUE(est.nsd_ok);
  EXPECT_TRUE(est.nsd_tilde_ok);
  EXPECT_NEAR(est.L, 1.0, 1e-5);
  EXPECT_NEAR(est.L_tilde, 1.0, 1e-5);
  // H = kappa 1 v^T and H~ = kappa v 1^T, both of operator norm kappa * sqrt(n) = 0.1 * sqrt(2).
  EXPECT_NEAR(est.P, 0.1 * std::sqrt(2.0), 1e-5);
  EXPECT_NEAR(est.P_tilde, 0.1 * std::sqrt(2.0), 1e-5);
}

TEST(AssumptionCheck, SamplesAreInteriorAndDeterministic) {
  const auto g = example1();
  const auto a = assumption_samples(g, Vec{1, 2}, 0.5, 32);
  const auto b = assumption_samples(g, Vec{1, 2}, 0.5, 32);
  ASSERT_EQ(a.size(), 32u);
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].s, b[k].s);
    EXPECT_EQ(a[k].w, b[k].w);
    for (double x : a[k].s) {
      EXPECT_GE(x, 0.25);
      EXPECT_LE(x, 4.75);
    }
    EXPECT_LE(std::abs(a[k].w[0] - 1), 0.5);
  }
  EXPECT_THROW(check_assumption1({}, g, 0, 0), InsufficientData);
}

TEST(Lemma1, ThresholdPerFamily) {
  EXPECT_EQ(*lemma1_beta_threshold(example1()), 0.04);
  EXPECT_FALSE(lemma1_beta_threshold(ifl::testing::coupled_reference()).has_value());
}

TEST(FeasibleSteps, HandComputedExample) {
  // min{1, 1/1, 2 * 1.1 / 4, 0.1 / 3}
  const auto r = feasible_steps(2, 2, 1, 1, 1.1, 1.1, 1, 1);
  EXPECT_NEAR(r.gamma_max, 0.1 / 3, 1e-15);
  EXPECT_NEAR(r.eta_max, 0.1 / 3, 1e-15);
  EXPECT_TRUE(r.preconditions_ok());
}

TEST(FeasibleSteps, DroppedCrossTerm) {
  // P~ = 0 and lambda = n^2 L^2 / 2: min{1, 1, 0.5}
  EXPECT_DOUBLE_EQ(feasible_steps(2, 1, 1, 1, 2, 1, 0, 0).gamma_max, 0.5);
}

TEST(FeasibleSteps, EmptyRegion) {
  const auto r = feasible_steps(2, 2, 1, 1, 1, 3, 0.5, 1);
  EXPECT_FALSE(r.gamma_ok);
  EXPECT_EQ(r.gamma_max, 0.0);
  EXPECT_TRUE(r.eta_ok);
  EXPECT_FALSE(r.preconditions_ok());
  EXPECT_THROW(feasible_steps(2, 2, -1, 1, 1, 1, 0, 0), ConfigError);
}

TEST(WOpt, ExampleOneIsTheta) {
  const auto r = compute_w_opt(example1());
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.w[0], 1, 1e-4);
  EXPECT_NEAR(r.w[1], 2, 1e-4);
  EXPECT_NEAR(r.welfare, 2, 1e-9);
}

TEST(WOpt, OptimalStartTakesNoIterations) {
  auto acc = std::make_shared<QuadraticAccuracy>(Vec{0.0, 0.0}, Vec{1.0, 1.0});
  GameInstance g({{0, 1, CostModel::linear(0), 0}, {1, 1, CostModel::linear(0), 0}}, acc, PaymentRule::none());
  const auto r = compute_w_opt(g);
  EXPECT_EQ(r.iterations, 0);
  EXPECT_TRUE(r.converged);
}

TEST(WOpt, BeatsRandomSearch) {
  const auto g = ifl::testing::coupled_reference();
  const auto r = compute_w_opt(g);
  ASSERT_TRUE(r.converged);
  Rng rng(17);
  const Vec s = g.s_max().s;
  for (int k = 0; k < 1000; ++k)
    EXPECT_GE(r.welfare, social_welfare(g, ifl::testing::random_vec(rng, 2, 5), s));
}

TEST(WOpt, CapReturnsBestSoFar) {
  const auto r = compute_w_opt(example1(), 1e-9, 2);
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.iterations, 2);
  EXPECT_GT(r.welfare, social_welfare(example1(), Vec{0, 0}, Vec{5, 5}));
}

TEST(Contraction, RatiosAndSkippedRounds) {
  const auto rep = contraction_diagnostic({record(0, 1, 1), record(1, 0.5, 0.5), record(2, 0, 0), record(3, 1, 0)});
  ASSERT_EQ(rep.ratios.size(), 2u);
  EXPECT_EQ(rep.ratios[0].t, 1);
  EXPECT_DOUBLE_EQ(rep.ratios[0].ratio, 0.5);
  EXPECT_EQ(rep.ratios[1].t, 2);
  EXPECT_EQ(*rep.max_ratio, 0.5);
}

TEST(Contraction, FixedPointAndDivergence) {
  const auto fixed = contraction_diagnostic({record(0, 0, 0), record(1, 0, 0)});
  EXPECT_TRUE(fixed.ratios.empty());
  EXPECT_FALSE(fixed.max_ratio.has_value());
  const auto grow = contraction_diagnostic({record(0, 1, 0), record(1, 3, 0)});
  EXPECT_EQ(*grow.max_ratio, 3.0);
  EXPECT_THROW(contraction_diagnostic(std::vector<RoundRecord>{}), InsufficientData);
}
