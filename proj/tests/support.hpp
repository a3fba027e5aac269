#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include "ifl/game.hpp"
#include "ifl/models.hpp"

namespace ifl::testing {

/// Example 1: theta = (1, 2), r = 1, sigma0 = 0, costs 0.04 s and 0.02 s, s_max = 5.
inline GameInstance example1(PaymentRule rule = PaymentRule::none(), double s0 = 2.5) {
  auto acc = std::make_shared<QuadraticAccuracy>(Vec{1.0, 2.0}, Vec{1.0, 1.0}, 0.0);
  return GameInstance({{0, 5.0, CostModel::linear(0.04), s0}, {1, 5.0, CostModel::linear(0.02), s0}}, acc, rule);
}

/// Random quadratic-family game with linear costs.
inline GameInstance random_quadratic(Rng& rng, std::size_t n, std::size_t m, PaymentRule rule = PaymentRule::none(),
                                     double sigma0 = 1e-6) {
  Vec theta(m), r(n);
  for (auto& x : theta) x = rng.uniform(-2.0, 2.0);
  for (auto& x : r) x = rng.uniform(0.5, 1.5);
  std::vector<AgentSpec> agents;
  for (std::size_t i = 0; i < n; ++i) {
    const double smax = rng.uniform(2.0, 10.0);
    agents.push_back({i, smax, CostModel::linear(rng.uniform(0.0, 0.5)), 0.5 * smax});
  }
  return GameInstance(std::move(agents), std::make_shared<QuadraticAccuracy>(theta, r, sigma0), rule);
}

inline Vec random_interior(Rng& rng, const GameInstance& g) {
  Vec s(g.n());
  for (std::size_t i = 0; i < g.n(); ++i) s[i] = g.agent(i).s_max * rng.uniform(0.1, 0.9);
  return s;
}

inline Vec random_vec(Rng& rng, std::size_t m, double radius) {
  Vec w(m);
  for (auto& x : w) x = rng.uniform(-radius, radius);
  return w;
}

/// Central first difference with step 1e-6 * max(1, |x|).
inline double central_difference(const std::function<double(double)>& f, double x) {
  const double h = 1e-6 * std::max(1.0, std::abs(x));
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline double rel_error(const Vec& est, const Vec& exact) {
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < est.size(); ++k) {
    num = std::max(num, std::abs(est[k] - exact[k]));
    den = std::max(den, std::abs(exact[k]));
  }
  return den == 0.0 ? num : num / den;
}

inline double rel_error(const Eigen::MatrixXd& est, const Eigen::MatrixXd& exact) {
  const double den = exact.cwiseAbs().maxCoeff();
  const double num = (est - exact).cwiseAbs().maxCoeff();
  return den == 0.0 ? num : num / den;
}

struct ClosedFormBlocks {
  Eigen::MatrixXd G, G_tilde, H, H_tilde;
};

/// Hessian blocks of the quadratic family with linear costs, differentiated by hand.
inline ClosedFormBlocks quadratic_blocks(const Vec& theta, double sigma0, const Vec& w, const Vec& s) {
  const std::size_t n = s.size(), m = w.size();
  double S = sigma0, D = 0.0;
  for (double x : s) S += x;
  for (std::size_t k = 0; k < m; ++k) D += (w[k] - theta[k]) * (w[k] - theta[k]);
  ClosedFormBlocks b{Eigen::MatrixXd::Constant(n, n, -2.0 * D / (S * S * S)),
                     Eigen::MatrixXd::Identity(m, m) * (-2.0 / S), Eigen::MatrixXd(n, m), Eigen::MatrixXd(m, n)};
  for (std::size_t k = 0; k < m; ++k) {
    const double hk = 2.0 * (w[k] - theta[k]) / (S * S);
    for (std::size_t i = 0; i < n; ++i) b.H(i, k) = hk;
    for (std::size_t j = 0; j < n; ++j) b.H_tilde(k, j) = static_cast<double>(n) * hk;
  }
  return b;
}

/// Coupled-quadratic game used for the contraction checks: n = m = 2, alpha = 1,
/// rho = 0, kappa = 0.1, v = (1, 0), curvature 1, theta = (1, 1), q = 5.
inline GameInstance coupled_reference() {
  CoupledQuadraticAccuracy::Params p;
  p.r = {0.0, 0.0};
  p.q = {5.0, 5.0};
  p.alpha = 1.0;
  p.rho = 0.0;
  p.kappa = 0.1;
  p.direction = {1.0, 0.0};
  p.theta = {1.0, 1.0};
  p.curvature = 1.0;
  return GameInstance({{0, 10.0, CostModel::linear(0.1), 2.0}, {1, 10.0, CostModel::linear(0.2), 3.0}},
                      std::make_shared<CoupledQuadraticAccuracy>(p), PaymentRule::none());
}

}  // namespace ifl::testing
