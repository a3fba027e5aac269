#pragma once

// Game domain types and the utility / welfare / gradient evaluations shared by every
// dynamic and diagnostic. All functions are pure; GameInstance is immutable.

#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ifl/digest.hpp"
#include "ifl/errors.hpp"
#include "ifl/models.hpp"
#include "ifl/numeric.hpp"
#include "json.hpp"

namespace ifl {

/// Absolute tolerance for "s_i sits on a bound".
inline constexpr double kBoundTol = 1e-12;

struct AgentSpec {
  std::size_t id = 0;
  double s_max = 0.0;
  CostModel cost = CostModel::linear(0.0);
  double initial_s = 0.0;

  bool operator==(const AgentSpec&) const = default;
};

struct StrategyProfile {
  Vec s;

  std::size_t size() const { return s.size(); }
  double operator[](std::size_t i) const { return s[i]; }
  bool operator==(const StrategyProfile&) const = default;
};

struct ModelParams {
  Vec w;

  std::size_t size() const { return w.size(); }
  double operator[](std::size_t k) const { return w[k]; }
  bool operator==(const ModelParams&) const = default;
};

struct PaymentRule {
  enum class Variant { None, LinearTransfer };

  Variant variant = Variant::None;
  double beta = 0.0;

  static PaymentRule none() { return {}; }
  static PaymentRule linear_transfer(double beta) {
    if (!(beta >= 0.0) || !std::isfinite(beta)) throw ConfigError("payment beta must be finite and >= 0");
    return {Variant::LinearTransfer, beta};
  }

  bool is_transfer() const { return variant == Variant::LinearTransfer; }
  /// d p_i / d s_i.
  double own_slope() const { return is_transfer() ? beta : 0.0; }

  bool operator==(const PaymentRule&) const = default;
};

struct UtilityReport {
  double accuracy = 0.0;
  double cost = 0.0;
  double payment = 0.0;
  double utility = 0.0;

  bool operator==(const UtilityReport&) const = default;
};

class GameInstance {
 public:
  GameInstance(std::vector<AgentSpec> agents, std::shared_ptr<const AccuracyModel> accuracy, PaymentRule payment)
      : agents_(std::move(agents)), accuracy_(std::move(accuracy)), payment_(payment) {
    if (agents_.empty()) throw ConfigError("a game needs at least one agent");
    if (!accuracy_) throw ConfigError("a game needs an accuracy model");
    if (accuracy_->agent_count() != agents_.size())
      throw ConfigError("accuracy model is declared for " + std::to_string(accuracy_->agent_count()) +
                        " agents but the game has " + std::to_string(agents_.size()));
    if (accuracy_->dim() < 1) throw ConfigError("parameter dimension must be >= 1");
    if (payment_.is_transfer() && agents_.size() < 2)
      throw ConfigError("linear transfer payments need at least 2 agents");
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      const auto& a = agents_[i];
      if (a.id != i) throw ConfigError("agent ids must be 0..n-1 in order");
      if (!(a.s_max > 0.0) || !std::isfinite(a.s_max)) throw ConfigError("s_max must be finite and > 0");
      if (!(a.initial_s >= 0.0 && a.initial_s <= a.s_max))
        throw ConfigError("initial contribution of agent " + std::to_string(i) + " outside [0, s_max]");
    }
  }

  std::size_t n() const { return agents_.size(); }
  std::size_t m() const { return accuracy_->dim(); }
  const std::vector<AgentSpec>& agents() const { return agents_; }
  const AgentSpec& agent(std::size_t i) const { return agents_.at(i); }
  const AccuracyModel& accuracy() const { return *accuracy_; }
  std::shared_ptr<const AccuracyModel> accuracy_handle() const { return accuracy_; }
  const PaymentRule& payment() const { return payment_; }

  StrategyProfile s_max() const {
    StrategyProfile p;
    for (const auto& a : agents_) p.s.push_back(a.s_max);
    return p;
  }

  StrategyProfile initial_profile() const {
    StrategyProfile p;
    for (const auto& a : agents_) p.s.push_back(a.initial_s);
    return p;
  }

  /// zeta: the largest marginal cost over all agents and boxes.
  double max_marginal_cost() const {
    double zeta = 0.0;
    for (const auto& a : agents_) zeta = std::max(zeta, a.cost.max_derivative(a.s_max));
    return zeta;
  }

  nlohmann::json describe() const {
    nlohmann::json agents = nlohmann::json::array();
    for (const auto& a : agents_)
      agents.push_back({{"id", a.id}, {"s_max", a.s_max}, {"initial_s", a.initial_s}, {"cost", a.cost.describe()}});
    return {{"n", n()},
            {"m", m()},
            {"agents", agents},
            {"accuracy", accuracy_->describe()},
            {"payment",
             {{"variant", payment_.is_transfer() ? "linear" : "none"}, {"beta", payment_.beta}}}};
  }

  /// Hex SHA-256 of the canonical (sorted-key, compact) JSON description.
  std::string digest() const { return sha256_hex(describe().dump()); }

 private:
  std::vector<AgentSpec> agents_;
  std::shared_ptr<const AccuracyModel> accuracy_;
  PaymentRule payment_;
};

inline void check_profile(const GameInstance& g, std::span<const double> s) {
  if (s.size() != g.n())
    throw ConfigError("profile has length " + std::to_string(s.size()) + ", expected " + std::to_string(g.n()));
  for (std::size_t i = 0; i < s.size(); ++i)
    if (!(s[i] >= -kBoundTol && s[i] <= g.agent(i).s_max + kBoundTol))
      throw ConfigError("contribution of agent " + std::to_string(i) + " outside [0, s_max]");
}

inline void check_params(const GameInstance& g, std::span<const double> w) {
  if (w.size() != g.m())
    throw ConfigError("parameter vector has length " + std::to_string(w.size()) + ", expected " +
                      std::to_string(g.m()));
  if (!all_finite(w)) throw NumericError("parameter vector is not finite");
}

/// p_i(s) = beta * (s_i - mean of the others), or 0 without transfers.
inline double payment(const PaymentRule& rule, std::span<const double> s, std::size_t i) {
  if (i >= s.size()) throw ConfigError("agent index out of range");
  if (!rule.is_transfer()) return 0.0;
  if (s.size() < 2) throw ConfigError("linear transfer payments need at least 2 agents");
  double others = 0.0;
  for (std::size_t j = 0; j < s.size(); ++j)
    if (j != i) others += s[j];
  return rule.beta * (s[i] - others / static_cast<double>(s.size() - 1));
}

inline UtilityReport utility(const GameInstance& g, std::size_t i, std::span<const double> w,
                             std::span<const double> s) {
  UtilityReport r;
  r.accuracy = g.accuracy().value(i, w, s);
  r.cost = g.agent(i).cost.value(s[i]);
  r.payment = payment(g.payment(), s, i);
  r.utility = r.accuracy - r.cost + r.payment;
  return r;
}

/// Sum of accuracies; costs and payments are not part of welfare.
inline double social_welfare(const GameInstance& g, std::span<const double> w, std::span<const double> s) {
  double total = 0.0;
  for (std::size_t i = 0; i < g.n(); ++i) total += g.accuracy().value(i, w, s);
  return total;
}

/// d u_i / d s_i before the boundary correction.
inline double raw_strategy_derivative(const GameInstance& g, std::size_t i, std::span<const double> w,
                                      std::span<const double> s) {
  const double d = g.accuracy().d_own(i, w, s) - g.agent(i).cost.derivative(s[i]) + g.payment().own_slope();
  if (!std::isfinite(d)) throw NumericError("non-finite strategy derivative", i);
  return d;
}

/// Zeroes a derivative that would push s_i out of [0, s_max] from a bound.
inline double boundary_corrected(double raw, double s_i, double s_max) {
  if (s_i <= kBoundTol && raw < 0.0) return 0.0;
  if (s_i >= s_max - kBoundTol && raw > 0.0) return 0.0;
  return raw;
}

inline double strategy_gradient_component(const GameInstance& g, std::size_t i, std::span<const double> w,
                                          std::span<const double> s) {
  return boundary_corrected(raw_strategy_derivative(g, i, w, s), s[i], g.agent(i).s_max);
}

inline Vec strategy_gradient(const GameInstance& g, std::span<const double> w, std::span<const double> s) {
  Vec out(g.n());
  for (std::size_t i = 0; i < g.n(); ++i) out[i] = strategy_gradient_component(g, i, w, s);
  return out;
}

/// (1/n) sum_i grad_w a_i, summed in ascending agent order.
inline Vec welfare_gradient(const GameInstance& g, std::span<const double> w, std::span<const double> s) {
  Vec total(g.m(), 0.0);
  for (std::size_t i = 0; i < g.n(); ++i) {
    const Vec gi = g.accuracy().grad_w(i, w, s);
    if (!all_finite(gi)) throw NumericError("non-finite parameter gradient", i);
    for (std::size_t k = 0; k < total.size(); ++k) total[k] += gi[k];
  }
  for (auto& x : total) x /= static_cast<double>(g.n());
  return total;
}

inline double clamp_contribution(double x, double s_max) { return std::min(std::max(x, 0.0), s_max); }

inline StrategyProfile clamp_profile(std::span<const double> raw, const GameInstance& g) {
  if (raw.size() != g.n())
    throw ConfigError("profile has length " + std::to_string(raw.size()) + ", expected " + std::to_string(g.n()));
  StrategyProfile p;
  p.s.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) p.s[i] = clamp_contribution(raw[i], g.agent(i).s_max);
  return p;
}

}  // namespace ifl
