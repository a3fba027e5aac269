#include <gtest/gtest.h>

#include "ifl/game.hpp"
#include "support.hpp"

using namespace ifl;
using ifl::testing::example1;

namespace {

GameInstance pair_game(PaymentRule rule) {
  auto acc = std::make_shared<QuadraticAccuracy>(Vec{0.0}, Vec{1.0, 1.0});
  return GameInstance({{0, 10, CostModel::linear(0.1), 1}, {1, 10, CostModel::linear(0.1), 1}}, acc, rule);
}

}  // namespace

TEST(Payment, SymmetricProfilePaysNothing) {
  EXPECT_EQ(payment(PaymentRule::linear_transfer(2), Vec{5, 5}, 0), 0.0);
}

TEST(Payment, TwoAgentsTransferBetweenEachOther) {
  const auto rule = PaymentRule::linear_transfer(2);
  EXPECT_EQ(payment(rule, Vec{5, 0}, 0), 10.0);
  EXPECT_EQ(payment(rule, Vec{5, 0}, 1), -10.0);
}

TEST(Payment, ThreeAgents) {
  EXPECT_DOUBLE_EQ(payment(PaymentRule::linear_transfer(1), Vec{3, 1, 2}, 0), 1.5);
}

TEST(Payment, NoneRuleIsZero) { EXPECT_EQ(payment(PaymentRule::none(), Vec{3, 1}, 0), 0.0); }

TEST(Payment, TransferWithOneAgentIsRejected) {
  EXPECT_THROW(payment(PaymentRule::linear_transfer(1), Vec{3}, 0), ConfigError);
  auto acc = std::make_shared<QuadraticAccuracy>(Vec{0.0}, Vec{1.0});
  EXPECT_THROW(GameInstance({{0, 1, CostModel::linear(0), 0}}, acc, PaymentRule::linear_transfer(1)), ConfigError);
}

TEST(Payment, NegativeBetaIsRejected) { EXPECT_THROW(PaymentRule::linear_transfer(-1), ConfigError); }

TEST(Payment, BudgetBalancedOnRandomProfiles) {
  Rng rng(11);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto n = static_cast<std::size_t>(rng.integer(2, 20));
    const auto rule = PaymentRule::linear_transfer(rng.uniform(0, 10));
    Vec s(n);
    double mass = 0;
    for (auto& x : s) mass += (x = rng.uniform(0, 100));
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) total += payment(rule, s, i);
    ASSERT_LE(std::abs(total), 1e-9 * rule.beta * mass);
  }
}

TEST(Utility, ExampleOneAtTheOptimum) {
  const auto g = example1();
  const auto u = utility(g, 0, Vec{1, 2}, Vec{5, 5});
  EXPECT_EQ(u.accuracy, 1.0);
  EXPECT_NEAR(u.cost, 0.2, 1e-15);
  EXPECT_EQ(u.payment, 0.0);
  EXPECT_NEAR(u.utility, 0.8, 1e-15);
}

TEST(Utility, ZeroContributionCostsNothing) {
  EXPECT_EQ(utility(example1(), 0, Vec{0.5, 1.5}, Vec{0, 5}).cost, 0.0);
}

TEST(Utility, DecompositionMatchesIndependentEvaluation) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const double beta = rng.uniform(0, 1);
    const auto g = pair_game(PaymentRule::linear_transfer(beta));
    const Vec w{rng.uniform(-1, 1)};
    const Vec s{rng.uniform(0.1, 10), rng.uniform(0.1, 10)};
    const auto u = utility(g, 0, w, s);
    const double sum = 1e-6 + s[0] + s[1];
    const double a = 1.0 - w[0] * w[0] / sum;
    const double c = 0.1 * s[0];
    const double p = beta * (s[0] - s[1]);
    EXPECT_NEAR(u.accuracy, a, 1e-14);
    EXPECT_NEAR(u.cost, c, 1e-14);
    EXPECT_NEAR(u.payment, p, 1e-13);
    EXPECT_EQ(u.utility, u.accuracy - u.cost + u.payment);
  }
}

TEST(Utility, SingularDenominatorPropagates) {
  EXPECT_THROW(utility(example1(), 0, Vec{0, 0}, Vec{0, 0}), SingularDenominator);
}

TEST(Welfare, ExampleOneValues) {
  const auto g = example1();
  EXPECT_NEAR(social_welfare(g, Vec{1, 2}, Vec{5, 5}), 2.0, 1e-12);
  EXPECT_NEAR(social_welfare(g, Vec{0.5, 1.5}, Vec{0, 5}), 1.8, 1e-12);
}

TEST(Welfare, IdenticalAgentsScaleWithN) {
  auto acc = std::make_shared<QuadraticAccuracy>(Vec{1.0}, Vec(4, 0.7));
  std::vector<AgentSpec> agents;
  for (std::size_t i = 0; i < 4; ++i) agents.push_back({i, 3, CostModel::linear(0.2), 1});
  GameInstance g(agents, acc, PaymentRule::none());
  const Vec w{0.3}, s{1, 2, 0.5, 3};
  EXPECT_DOUBLE_EQ(social_welfare(g, w, s), 4 * g.accuracy().value(0, w, s));
}

TEST(StrategyGradient, NegativeAtUpperBoundIsKept) {
  const auto g = strategy_gradient(example1(), Vec{1, 2}, Vec{5, 5});
  EXPECT_NEAR(g[0], -0.04, 1e-15);
}

TEST(StrategyGradient, OutwardDerivativeAtLowerBoundIsZeroed) {
  // At w = theta the accuracy term vanishes and only -0.04 remains.
  const auto g = strategy_gradient(example1(), Vec{1, 2}, Vec{0, 5});
  EXPECT_EQ(g[0], 0.0);
  EXPECT_EQ(boundary_corrected(-0.02, 0.0, 5.0), 0.0);
}

TEST(StrategyGradient, OutwardDerivativeAtUpperBoundIsZeroed) {
  EXPECT_EQ(boundary_corrected(0.3, 5.0, 5.0), 0.0);
  EXPECT_EQ(boundary_corrected(0.3, 4.0, 5.0), 0.3);
  EXPECT_EQ(boundary_corrected(-0.3, 0.0 + 1e-13, 5.0), 0.0);
}

TEST(StrategyGradient, MatchesFiniteDifferenceOfUtility) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto g = ifl::testing::random_quadratic(rng, 3, 2, PaymentRule::linear_transfer(0.3));
    const Vec w = ifl::testing::random_vec(rng, 2, 2.0);
    Vec s = ifl::testing::random_interior(rng, g);
    const auto grad = strategy_gradient(g, w, s);
    for (std::size_t i = 0; i < g.n(); ++i) {
      const double fd = ifl::testing::central_difference(
          [&](double x) {
            Vec t = s;
            t[i] = x;
            return utility(g, i, w, t).utility;
          },
          s[i]);
      EXPECT_NEAR(grad[i], fd, 1e-5 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST(StrategyGradient, NonFiniteDerivativeNamesTheAgent) {
  auto acc = std::make_shared<QuadraticAccuracy>(Vec{1e300}, Vec{1.0, 1.0}, 0.0);
  GameInstance g({{0, 1, CostModel::linear(0), 0.5}, {1, 1, CostModel::linear(0), 0.5}}, acc, PaymentRule::none());
  try {
    raw_strategy_derivative(g, 1, Vec{-1e300}, Vec{1e-300, 1e-300});
    FAIL();
  } catch (const NumericError& e) {
    ASSERT_TRUE(e.agent().has_value());
    EXPECT_EQ(*e.agent(), 1u);
  }
}

TEST(WelfareGradient, VanishesAtTheta) {
  const auto gt = welfare_gradient(example1(), Vec{1, 2}, Vec{3, 1});
  EXPECT_EQ(gt[0], 0.0);
  EXPECT_EQ(gt[1], 0.0);
}

TEST(WelfareGradient, ExampleOneNonStationaryPoint) {
  // 2 (theta - w) / sum(s) = 2 * 0.5 / 5 for each coordinate and each agent.
  const auto gt = welfare_gradient(example1(), Vec{0.5, 1.5}, Vec{0, 5});
  EXPECT_NEAR(gt[0], 0.2, 1e-15);
  EXPECT_NEAR(gt[1], 0.2, 1e-15);
}

TEST(WelfareGradient, MatchesFiniteDifferenceOfMeanAccuracy) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const auto g = ifl::testing::random_quadratic(rng, 4, 3);
    const Vec w = ifl::testing::random_vec(rng, 3, 2.0);
    const Vec s = ifl::testing::random_interior(rng, g);
    const auto gt = welfare_gradient(g, w, s);
    for (std::size_t k = 0; k < 3; ++k) {
      const double fd = ifl::testing::central_difference(
          [&](double x) {
            Vec t = w;
            t[k] = x;
            return social_welfare(g, t, s) / 4.0;
          },
          w[k]);
      EXPECT_NEAR(gt[k], fd, 1e-5 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST(ClampProfile, ProjectsOntoTheBox) {
  const auto g = example1();
  EXPECT_EQ(clamp_profile(Vec{-1, 6}, g).s, (Vec{0, 5}));
  EXPECT_EQ(clamp_profile(Vec{1.5, 3}, g).s, (Vec{1.5, 3}));
  EXPECT_EQ(clamp_profile(Vec{0, 5}, g).s, (Vec{0, 5}));
}

TEST(ClampProfile, IsIdempotent) {
  const auto g = example1();
  Rng rng(2);
  for (int k = 0; k < 100; ++k) {
    const Vec raw{rng.uniform(-10, 10), rng.uniform(-10, 10)};
    const auto once = clamp_profile(raw, g);
    EXPECT_EQ(clamp_profile(once.s, g), once);
  }
}

TEST(ClampProfile, LengthMismatchIsRejected) { EXPECT_THROW(clamp_profile(Vec{1}, example1()), ConfigError); }

TEST(GameInstance, ValidatesItsInvariants) {
  auto acc = std::make_shared<QuadraticAccuracy>(Vec{0.0}, Vec{1.0, 1.0});
  const auto c = CostModel::linear(0.1);
  EXPECT_THROW(GameInstance({{0, 1, c, 0}}, acc, PaymentRule::none()), ConfigError);  // count mismatch
  EXPECT_THROW(GameInstance({{0, 1, c, 0}, {2, 1, c, 0}}, acc, PaymentRule::none()), ConfigError);
  EXPECT_THROW(GameInstance({{0, 0, c, 0}, {1, 1, c, 0}}, acc, PaymentRule::none()), ConfigError);
  EXPECT_THROW(GameInstance({{0, 1, c, 2}, {1, 1, c, 0}}, acc, PaymentRule::none()), ConfigError);
  EXPECT_THROW(GameInstance({}, acc, PaymentRule::none()), ConfigError);
}

TEST(GameInstance, DigestIsStableAndSensitive) {
  EXPECT_EQ(example1().digest(), example1().digest());
  EXPECT_EQ(example1().digest().size(), 64u);
  EXPECT_NE(example1().digest(), example1(PaymentRule::linear_transfer(0.05)).digest());
}
