#pragma once

// Round-based dynamics: UPBReD, the two-phase transfer mechanism, FedAvg and
// FedAvgStrategic, plus the iteration-bound calculators.
//
// Every dynamic is written as a center loop that broadcasts (w, s), collects one
// AgentReport per agent through a RoundExchange and aggregates in ascending agent id.
// The in-process exchange below and the socket exchange in federation/ share the same
// AgentWorker, so a trace does not depend on the transport.

#include <cmath>
#include <cstdint>
#include <future>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "ifl/errors.hpp"
#include "ifl/game.hpp"
#include "ifl/models.hpp"
#include "ifl/numeric.hpp"

namespace ifl {

enum class Algorithm { Upbred, TwoPhase, FedAvg, FedAvgStrategic };
enum class Updater { Analytic, Empirical };
/// Where UPBReD agents evaluate their parameter gradient: at (w^t, s_i^{t+1}, s_{-i}^t)
/// as in the algorithm listing, or at the current profile (w^t, s^t).
enum class GradientPoint { UpdatedOwn, Current };
enum class Phase { Single, One, Two };
enum class Outcome { Converged, MaxRounds, Error };

inline std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::Upbred: return "upbred";
    case Algorithm::TwoPhase: return "2p-upbred";
    case Algorithm::FedAvg: return "fedavg";
    case Algorithm::FedAvgStrategic: return "fedavg-strategic";
  }
  return "?";
}

inline Algorithm parse_algorithm(const std::string& s) {
  if (s == "upbred") return Algorithm::Upbred;
  if (s == "2p-upbred") return Algorithm::TwoPhase;
  if (s == "fedavg") return Algorithm::FedAvg;
  if (s == "fedavg-strategic") return Algorithm::FedAvgStrategic;
  throw ConfigError("unknown algorithm '" + s + "'");
}

inline std::string to_string(Phase p) {
  switch (p) {
    case Phase::Single: return "single";
    case Phase::One: return "1";
    case Phase::Two: return "2";
  }
  return "?";
}

inline Phase parse_phase(const std::string& s) {
  if (s == "single") return Phase::Single;
  if (s == "1") return Phase::One;
  if (s == "2") return Phase::Two;
  throw ProtocolError("unknown phase '" + s + "'");
}

inline std::string to_string(Outcome o) {
  switch (o) {
    case Outcome::Converged: return "converged";
    case Outcome::MaxRounds: return "max_rounds";
    case Outcome::Error: return "error";
  }
  return "?";
}

inline std::string to_string(Updater u) { return u == Updater::Analytic ? "analytic" : "empirical"; }
inline std::string to_string(GradientPoint p) { return p == GradientPoint::UpdatedOwn ? "updated-own" : "current"; }

struct RunConfig {
  double gamma = 0.5;
  double eta = 0.1;
  long T = 1000;
  double eps = 1e-6;
  double eps_s = 1e-9;
  long phase1_cap = 0;  // 0 selects 10*kappa when computable, else 1e5
  std::uint64_t seed = 0;
  Updater updater = Updater::Analytic;
  GradientPoint gradient_point = GradientPoint::UpdatedOwn;
  /// Reject two-phase runs whose beta does not exceed every marginal cost at s_max.
  bool enforce_beta_threshold = true;

  void validate() const {
    auto positive = [](double x, const char* name) {
      if (!(x > 0.0) || !std::isfinite(x)) throw ConfigError(std::string("run.") + name + " must be finite and > 0");
    };
    positive(gamma, "gamma");
    positive(eta, "eta");
    positive(eps, "eps");
    positive(eps_s, "eps_s");
    if (T < 0) throw ConfigError("run.T must be >= 0");
    if (phase1_cap < 0) throw ConfigError("run.phase1_cap must be >= 0");
  }

  bool operator==(const RunConfig&) const = default;
};

struct RoundRecord {
  long t = 0;
  Phase phase = Phase::Single;
  StrategyProfile s;
  ModelParams w;
  std::vector<UtilityReport> utilities;
  double welfare = 0.0;
  double g_norm = 0.0;
  double gt_norm = 0.0;

  bool operator==(const RoundRecord&) const = default;
};

struct Trace {
  Algorithm algorithm = Algorithm::Upbred;
  RunConfig config;
  std::string digest;
  std::string run_id;
  std::vector<RoundRecord> records;
  Outcome outcome = Outcome::MaxRounds;
  long phase1_rounds = 0;
  std::string error;
  std::optional<long> error_round;
  std::optional<std::size_t> error_agent;

  const RoundRecord& final() const { return records.back(); }
};

// ---------------------------------------------------------------------------
// Round protocol messages
// ---------------------------------------------------------------------------

struct RoundBroadcast {
  std::string run_id;  // 32 hex digits
  long t = 0;
  Phase phase = Phase::Single;
  Vec w;
  Vec s;

  bool operator==(const RoundBroadcast&) const = default;
};

/// Agent-local quantities at the broadcast point (w^t, s^t) that the center needs to
/// write its round record without touching agent data.
struct LocalDiagnostics {
  double accuracy = 0.0;
  double cost = 0.0;
  double payment = 0.0;
  double g = 0.0;  // boundary-corrected strategy direction
  Vec grad_w;

  bool operator==(const LocalDiagnostics&) const = default;
};

struct AgentReport {
  std::string run_id;
  long t = 0;
  std::size_t agent_id = 0;
  std::optional<double> s_next;  // strategy rounds (phase 1, single)
  std::optional<Vec> d;          // parameter rounds (phase 2, single)
  LocalDiagnostics diag;

  bool operator==(const AgentReport&) const = default;
};

/// Raised by an exchange when an agent fails, times out or misbehaves.
class AgentFailure : public Error {
 public:
  AgentFailure(std::size_t agent, const std::string& what)
      : Error("agent " + std::to_string(agent) + ": " + what), agent_(agent) {}
  std::size_t agent() const { return agent_; }

 private:
  std::size_t agent_;
};

// ---------------------------------------------------------------------------
// Empirical strategy update (numerical derivative of the local loss)
// ---------------------------------------------------------------------------

inline constexpr double kStallTol = 1e-9;

struct EmpiricalStep {
  double s_next = 0.0;
  double increment = 0.0;  // before clamping
  double quotient = 0.0;   // difference quotient actually used
};

/// s_next = clamp(s - (L_local - L_prev) / (s - s_prev) - c' + beta). When the agent has
/// not moved (|s - s_prev| < 1e-9) the last finite quotient is reused.
inline EmpiricalStep empirical_strategy_step(double s_prev, double loss_prev, double s_curr, double loss_local,
                                             double marginal_cost, double beta, double s_max,
                                             double fallback_quotient) {
  EmpiricalStep step;
  const double ds = s_curr - s_prev;
  step.quotient = fallback_quotient;
  if (std::abs(ds) >= kStallTol) {
    const double q = (loss_local - loss_prev) / ds;
    if (std::isfinite(q)) step.quotient = q;
  }
  step.increment = -step.quotient - marginal_cost + beta;
  step.s_next = clamp_contribution(s_curr + step.increment, s_max);
  return step;
}

/// Whole-profile form. `last_quotients` carries each agent's fallback and is updated.
inline StrategyProfile empirical_strategy_update(const GameInstance& g, std::span<const double> prev_s,
                                                 std::span<const double> prev_loss, std::span<const double> curr_s,
                                                 std::span<const double> local_loss, Vec& last_quotients) {
  if (last_quotients.size() != g.n()) last_quotients.assign(g.n(), 0.0);
  StrategyProfile next;
  next.s.resize(g.n());
  for (std::size_t i = 0; i < g.n(); ++i) {
    const auto& a = g.agent(i);
    const auto step = empirical_strategy_step(prev_s[i], prev_loss[i], curr_s[i], local_loss[i],
                                              a.cost.derivative(curr_s[i]), g.payment().own_slope(), a.s_max,
                                              last_quotients[i]);
    next.s[i] = step.s_next;
    last_quotients[i] = step.quotient;
  }
  return next;
}

// ---------------------------------------------------------------------------
// Agent side
// ---------------------------------------------------------------------------

/// Everything agent i computes in a round, using its own spec, the broadcast and its data.
class AgentWorker {
 public:
  AgentWorker(const GameInstance& game, std::size_t id, RunConfig cfg) : game_(&game), id_(id), cfg_(cfg) {
    if (id >= game.n()) throw ConfigError("agent id " + std::to_string(id) + " out of range");
    if (cfg_.updater == Updater::Empirical) {
      empirical_ = dynamic_cast<const EmpiricalAccuracy*>(&game.accuracy());
      if (!empirical_) throw ConfigError("the empirical updater needs the empirical accuracy family");
    }
  }

  std::size_t id() const { return id_; }

  AgentReport respond(const RoundBroadcast& b) {
    if (b.w.size() != game_->m() || b.s.size() != game_->n()) throw ProtocolError("broadcast has wrong shape");
    if (!run_id_.empty() && b.run_id != run_id_) throw ProtocolError("broadcast for a different run");
    if (last_t_ && b.t < *last_t_) throw ProtocolError("out-of-order");
    run_id_ = b.run_id;
    last_t_ = b.t;

    const auto& spec = game_->agent(id_);
    AgentReport r;
    r.run_id = b.run_id;
    r.t = b.t;
    r.agent_id = id_;
    r.diag.accuracy = game_->accuracy().value(id_, b.w, b.s);
    r.diag.cost = spec.cost.value(b.s[id_]);
    r.diag.payment = payment(game_->payment(), b.s, id_);
    r.diag.grad_w = game_->accuracy().grad_w(id_, b.w, b.s);
    if (!std::isfinite(r.diag.accuracy) || !all_finite(r.diag.grad_w))
      throw NumericError("non-finite accuracy or gradient", id_);

    const bool strategy_round = b.phase != Phase::Two;
    const bool parameter_round = b.phase != Phase::One;

    if (strategy_round) {
      if (cfg_.updater == Updater::Analytic) {
        r.diag.g = strategy_gradient_component(*game_, id_, b.w, b.s);
        r.s_next = clamp_contribution(b.s[id_] + cfg_.gamma * r.diag.g, spec.s_max);
      } else {
        r.diag.g = empirical_round(b, r);
      }
    } else {
      r.diag.g = cfg_.updater == Updater::Analytic ? strategy_gradient_component(*game_, id_, b.w, b.s) : 0.0;
    }

    if (parameter_round) {
      if (b.phase == Phase::Single && cfg_.gradient_point == GradientPoint::UpdatedOwn) {
        Vec s_mixed = b.s;
        s_mixed[id_] = *r.s_next;
        r.d = game_->accuracy().grad_w(id_, b.w, s_mixed);
      } else {
        r.d = r.diag.grad_w;
      }
      if (!all_finite(*r.d)) throw NumericError("non-finite local gradient", id_);
    }
    if (r.s_next && !std::isfinite(*r.s_next)) throw NumericError("non-finite contribution update", id_);
    return r;
  }

 private:
  double empirical_round(const RoundBroadcast& b, AgentReport& r) {
    const auto& spec = game_->agent(id_);
    const double s_i = b.s[id_];
    const double loss_prev = empirical_->test_loss(id_, b.w);
    const auto local = local_training_step(*empirical_, id_, b.w, s_i, cfg_.eta);
    const double loss_local = empirical_->test_loss(id_, local.w);
    const auto step = empirical_strategy_step(prev_s_.value_or(s_i), loss_prev, s_i, loss_local,
                                              spec.cost.derivative(s_i), game_->payment().own_slope(), spec.s_max,
                                              last_quotient_);
    prev_s_ = s_i;
    last_quotient_ = step.quotient;
    r.s_next = step.s_next;
    return boundary_corrected(step.increment, s_i, spec.s_max);
  }

  const GameInstance* game_;
  std::size_t id_;
  RunConfig cfg_;
  const EmpiricalAccuracy* empirical_ = nullptr;
  std::string run_id_;
  std::optional<long> last_t_;
  std::optional<double> prev_s_;
  double last_quotient_ = 0.0;
};

// ---------------------------------------------------------------------------
// Exchanges
// ---------------------------------------------------------------------------

class RoundExchange {
 public:
  virtual ~RoundExchange() = default;
  /// Delivers the broadcast to every agent and returns all n reports ordered by agent id.
  virtual std::vector<AgentReport> exchange(const RoundBroadcast& b) = 0;
  /// Ends the run for every agent.
  virtual void finish() {}
};

class InProcessExchange final : public RoundExchange {
 public:
  InProcessExchange(const GameInstance& game, const RunConfig& cfg, bool parallel = false) : parallel_(parallel) {
    for (std::size_t i = 0; i < game.n(); ++i) workers_.emplace_back(game, i, cfg);
  }

  std::vector<AgentReport> exchange(const RoundBroadcast& b) override {
    std::vector<AgentReport> reports(workers_.size());
    auto one = [&](std::size_t i) {
      try {
        reports[i] = workers_[i].respond(b);
      } catch (const std::exception& e) {
        throw AgentFailure(i, e.what());
      }
    };
    if (parallel_ && workers_.size() > 1) {
      std::vector<std::future<void>> jobs;
      for (std::size_t i = 0; i < workers_.size(); ++i) jobs.push_back(std::async(std::launch::async, one, i));
      for (auto& j : jobs) j.get();  // rethrows the lowest-id failure first
    } else {
      for (std::size_t i = 0; i < workers_.size(); ++i) one(i);
    }
    return reports;
  }

 private:
  std::vector<AgentWorker> workers_;
  bool parallel_;
};

// ---------------------------------------------------------------------------
// Bounds
// ---------------------------------------------------------------------------

/// W = max(W1, W2) of the contraction recurrence of ||g|| + ||g~||.
inline double contraction_factor(std::size_t n, std::size_t m, double L, double L_tilde, double lambda,
                                 double lambda_tilde, double P, double P_tilde, double gamma, double eta) {
  const double nn = static_cast<double>(n), mm = static_cast<double>(m);
  const double a = 1.0 + gamma * gamma * nn * nn * L * L - 2.0 * gamma * lambda;
  const double at = 1.0 + eta * eta * mm * mm * L_tilde * L_tilde - 2.0 * eta * lambda_tilde;
  const double w1 = std::sqrt(std::max(a, 0.0)) + P_tilde * gamma;
  const double w2 = std::sqrt(std::max(at, 0.0)) + P * eta;
  return std::max(w1, w2);
}

/// ceil(ln(E/eps) / ln(1/W)); E is ||g(w0,s0)|| + ||g~(w0,s0)||.
inline long long iteration_bound_T0(double E, double eps, double W) {
  if (!(E > 0.0) || !(eps > 0.0)) throw ConfigError("E and eps must be > 0");
  if (!(W > 0.0)) throw ConfigError("contraction factor must be > 0");
  if (W >= 1.0) throw ConfigError("no contraction: W = " + format_double(W) + " >= 1");
  if (E <= eps) return 0;
  return ceil_count(std::log(E / eps) / std::log(1.0 / W));
}

struct TwoPhaseBounds {
  long long kappa = 0;
  long long T0 = 0;
};

inline void check_smoothness(double M, double nu) {
  if (!(nu > 0.0) || !(M > 0.0) || !std::isfinite(M)) throw ConfigError("M and nu must be finite and > 0");
  if (nu > M) throw ConfigError("nu must not exceed M");
}

/// Phase-1 rounds: max_i ceil((s_max_i - s0_i) / (c * (beta - c'_i(s_max_i)))).
inline long long phase_one_bound(std::span<const double> s0, std::span<const double> s_max, double beta,
                                 std::span<const double> cost_derivs_at_max, double c) {
  if (!(c > 0.0)) throw ConfigError("step constant c must be > 0");
  long long kappa = 0;
  for (std::size_t i = 0; i < s0.size(); ++i) {
    const double delta = beta - cost_derivs_at_max[i];
    if (!(delta > 0.0))
      throw ConfigError("beta must exceed the marginal cost at s_max of agent " + std::to_string(i));
    const double gap = s_max[i] - s0[i];
    if (gap > 0.0) kappa = std::max(kappa, ceil_count(gap / (c * delta)));
  }
  return kappa;
}

/// Phase-2 rounds for a welfare gap below eps at step 1/M: ceil(ln(gap/eps) / ln(1/(1 - nu/M))).
inline long long phase_two_bound(double f0, double f_opt, double eps, double M, double nu) {
  check_smoothness(M, nu);
  if (!(eps > 0.0)) throw ConfigError("eps must be > 0");
  const double gap = f0 - f_opt;
  if (gap <= eps) return 0;
  if (nu == M) return 1;  // 1 - nu/M = 0: a single exact step
  return ceil_count(std::log(gap / eps) / std::log(1.0 / (1.0 - nu / M)));
}

inline TwoPhaseBounds iteration_bounds_two_phase(std::span<const double> s0, std::span<const double> s_max,
                                                 double beta, std::span<const double> cost_derivs_at_max, double c,
                                                 double f0, double f_opt, double eps, double M, double nu) {
  check_smoothness(M, nu);
  return {phase_one_bound(s0, s_max, beta, cost_derivs_at_max, c), phase_two_bound(f0, f_opt, eps, M, nu)};
}

/// Iterate bound at step 2/(M+nu): ceil(ln(||w0 - w_opt|| / eps) / ln((1 + nu/M) / (1 - nu/M))).
inline long long corollary_bound(double w0_dist, double eps, double M, double nu) {
  check_smoothness(M, nu);
  if (!(eps > 0.0)) throw ConfigError("eps must be > 0");
  if (w0_dist <= eps) return 0;
  if (nu == M) return 1;
  const double r = nu / M;
  return ceil_count(std::log(w0_dist / eps) / std::log((1.0 + r) / (1.0 - r)));
}

// ---------------------------------------------------------------------------
// Center
// ---------------------------------------------------------------------------

inline std::string derive_run_id(const std::string& digest, std::uint64_t seed, Algorithm alg) {
  const auto h = sha256(digest + ":" + std::to_string(seed) + ":" + to_string(alg));
  return to_hex(h.data(), 16);
}

namespace detail {

class Center {
 public:
  Center(const GameInstance& g, Algorithm alg, const RunConfig& cfg, RoundExchange& ex) : g_(g), ex_(ex) {
    trace_.algorithm = alg;
    trace_.config = cfg;
    trace_.digest = g.digest();
    trace_.run_id = derive_run_id(trace_.digest, cfg.seed, alg);
  }

  /// One broadcast/collect round that appends a record. Returns nullopt once the run failed.
  std::optional<std::vector<AgentReport>> round(Phase phase, const Vec& w, const Vec& s) {
    RoundBroadcast b{trace_.run_id, next_t_, phase, w, s};
    std::vector<AgentReport> reports;
    try {
      reports = ex_.exchange(b);
      if (reports.size() != g_.n()) throw Error("expected " + std::to_string(g_.n()) + " reports");
      for (std::size_t i = 0; i < reports.size(); ++i)
        if (reports[i].agent_id != i || reports[i].t != b.t) throw AgentFailure(i, "report does not match the round");
    } catch (const AgentFailure& e) {
      fail(e.what(), e.agent());
      return std::nullopt;
    } catch (const std::exception& e) {
      fail(e.what(), std::nullopt);
      return std::nullopt;
    }

    RoundRecord rec;
    rec.t = next_t_++;
    rec.phase = phase;
    rec.s.s = s;
    rec.w.w = w;
    Vec g(g_.n()), gt(g_.m(), 0.0);
    for (const auto& r : reports) {
      UtilityReport u{r.diag.accuracy, r.diag.cost, r.diag.payment, 0.0};
      u.utility = u.accuracy - u.cost + u.payment;
      rec.utilities.push_back(u);
      rec.welfare += u.accuracy;
      g[r.agent_id] = r.diag.g;
      for (std::size_t k = 0; k < gt.size(); ++k) gt[k] += r.diag.grad_w[k];
    }
    for (auto& x : gt) x /= static_cast<double>(g_.n());
    rec.g_norm = norm2(g);
    rec.gt_norm = norm2(gt);
    if (!std::isfinite(rec.welfare) || !std::isfinite(rec.g_norm) || !std::isfinite(rec.gt_norm)) {
      --next_t_;
      fail("non-finite round diagnostics", std::nullopt);
      return std::nullopt;
    }
    trace_.records.push_back(std::move(rec));
    return reports;
  }

  const RoundRecord& last() const { return trace_.records.back(); }

  void fail(const std::string& message, std::optional<std::size_t> agent) {
    trace_.outcome = Outcome::Error;
    trace_.error = message;
    trace_.error_round = next_t_;
    trace_.error_agent = agent;
  }

  Vec averaged_step(const Vec& w, const std::vector<AgentReport>& reports, double eta) const {
    Vec sum(w.size(), 0.0);
    for (const auto& r : reports)
      for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += (*r.d)[k];
    Vec next = w;
    for (std::size_t k = 0; k < next.size(); ++k) next[k] += eta / static_cast<double>(g_.n()) * sum[k];
    return next;
  }

  static Vec strategies(const std::vector<AgentReport>& reports) {
    Vec s;
    for (const auto& r : reports) s.push_back(*r.s_next);
    return s;
  }

  Trace finish(Outcome outcome) {
    if (trace_.outcome != Outcome::Error) trace_.outcome = outcome;
    try {
      ex_.finish();
    } catch (const std::exception&) {
    }
    return std::move(trace_);
  }

  Trace& trace() { return trace_; }
  bool failed() const { return trace_.outcome == Outcome::Error; }

 private:
  const GameInstance& g_;
  RoundExchange& ex_;
  Trace trace_;
  long next_t_ = 0;
};

inline long phase_one_cap(const GameInstance& g, const RunConfig& cfg, std::span<const double> s0) {
  if (cfg.phase1_cap > 0) return cfg.phase1_cap;
  if (cfg.updater == Updater::Analytic && g.payment().is_transfer()) {
    Vec derivs;
    for (const auto& a : g.agents()) derivs.push_back(a.cost.max_derivative(a.s_max));
    try {
      const auto kappa = phase_one_bound(s0, g.s_max().s, g.payment().beta, derivs, cfg.gamma);
      return static_cast<long>(std::max<long long>(10 * kappa, 10));
    } catch (const ConfigError&) {
    }
  }
  return 100000;
}

/// Parameter-learning rounds at a frozen profile (phase 2 / FedAvg).
inline Outcome learn_parameters(Center& center, const RunConfig& cfg, Vec w, const Vec& s) {
  for (long k = 0;; ++k) {
    auto reports = center.round(Phase::Two, w, s);
    if (!reports) return Outcome::Error;
    if (center.last().gt_norm < cfg.eps) return Outcome::Converged;
    if (k >= cfg.T) return Outcome::MaxRounds;
    w = center.averaged_step(w, *reports, cfg.eta);
    if (!all_finite(w)) {
      center.fail("parameter update is not finite", std::nullopt);
      return Outcome::Error;
    }
  }
}

inline std::size_t slowest_agent(const GameInstance& g, std::span<const double> s) {
  std::size_t worst = 0;
  double gap = -1.0;
  for (std::size_t i = 0; i < g.n(); ++i)
    if (g.agent(i).s_max - s[i] > gap) {
      gap = g.agent(i).s_max - s[i];
      worst = i;
    }
  return worst;
}

}  // namespace detail

inline void validate_two_phase(const GameInstance& g, const RunConfig& cfg) {
  if (!g.payment().is_transfer()) throw ConfigError("2p-upbred needs the linear transfer payment rule");
  if (!cfg.enforce_beta_threshold) return;
  for (const auto& a : g.agents()) {
    const double slope = a.cost.max_derivative(a.s_max);
    if (!(g.payment().beta > slope))
      throw ConfigError("instance.beta = " + format_double(g.payment().beta) +
                        " must exceed the marginal cost at s_max (" + format_double(slope) + ") of agent " +
                        std::to_string(a.id));
  }
}

/// Runs `alg` against an arbitrary exchange. The direct *_run functions below use the
/// in-process exchange.
inline Trace run_dynamic(Algorithm alg, const GameInstance& g, const RunConfig& cfg, const ModelParams& w0,
                         const StrategyProfile& s0, RoundExchange& ex) {
  cfg.validate();
  check_params(g, w0.w);
  check_profile(g, s0.s);
  if (alg == Algorithm::TwoPhase) validate_two_phase(g, cfg);

  detail::Center center(g, alg, cfg, ex);
  const Vec s_max = g.s_max().s;

  switch (alg) {
    case Algorithm::Upbred: {
      Vec w = w0.w, s = clamp_profile(s0.s, g).s;
      for (long t = 0;; ++t) {
        auto reports = center.round(Phase::Single, w, s);
        if (!reports) return center.finish(Outcome::Error);
        if (center.last().g_norm < cfg.eps && center.last().gt_norm < cfg.eps) return center.finish(Outcome::Converged);
        if (t >= cfg.T) return center.finish(Outcome::MaxRounds);
        const Vec w_next = center.averaged_step(w, *reports, cfg.eta);
        s = detail::Center::strategies(*reports);
        w = w_next;
        if (!all_finite(w)) {
          center.fail("parameter update is not finite", std::nullopt);
          return center.finish(Outcome::Error);
        }
      }
    }

    case Algorithm::TwoPhase: {
      Vec s = clamp_profile(s0.s, g).s;
      const long cap = detail::phase_one_cap(g, cfg, s);
      long k = 0;
      for (;;) {
        double gap = 0.0;
        for (std::size_t i = 0; i < g.n(); ++i) gap = std::max(gap, s_max[i] - s[i]);
        if (gap <= cfg.eps_s) break;
        if (k >= cap) {
          const auto who = detail::slowest_agent(g, s);
          center.fail("phase 1 exceeded " + std::to_string(cap) + " rounds; agent " + std::to_string(who) +
                          " is not increasing (s = " + format_double(s[who]) + ")",
                      who);
          center.trace().phase1_rounds = k;
          return center.finish(Outcome::Error);
        }
        auto reports = center.round(Phase::One, w0.w, s);
        if (!reports) return center.finish(Outcome::Error);
        s = detail::Center::strategies(*reports);
        ++k;
      }
      center.trace().phase1_rounds = k;
      return center.finish(detail::learn_parameters(center, cfg, w0.w, s_max));
    }

    case Algorithm::FedAvg:
      return center.finish(detail::learn_parameters(center, cfg, w0.w, s_max));

    case Algorithm::FedAvgStrategic: {
      Vec s = clamp_profile(s0.s, g).s;
      const long cap = detail::phase_one_cap(g, cfg, s);
      long k = 0;
      for (;;) {
        auto reports = center.round(Phase::One, w0.w, s);
        if (!reports) return center.finish(Outcome::Error);
        bool improving = false;
        for (const auto& r : *reports) improving = improving || r.diag.g > cfg.eps;
        if (!improving) break;
        if (k >= cap) {
          center.fail("phase 1 exceeded " + std::to_string(cap) + " rounds", std::nullopt);
          center.trace().phase1_rounds = k;
          return center.finish(Outcome::Error);
        }
        s = detail::Center::strategies(*reports);
        ++k;
      }
      center.trace().phase1_rounds = k;
      return center.finish(detail::learn_parameters(center, cfg, w0.w, s));
    }
  }
  throw ConfigError("unknown algorithm");
}

inline Trace upbred_run(const GameInstance& g, const RunConfig& cfg, const ModelParams& w0,
                        const StrategyProfile& s0) {
  InProcessExchange ex(g, cfg);
  return run_dynamic(Algorithm::Upbred, g, cfg, w0, s0, ex);
}

inline Trace two_phase_run(const GameInstance& g, const RunConfig& cfg, const ModelParams& w0,
                           const StrategyProfile& s0) {
  InProcessExchange ex(g, cfg);
  return run_dynamic(Algorithm::TwoPhase, g, cfg, w0, s0, ex);
}

inline Trace fedavg_run(const GameInstance& g, const RunConfig& cfg, const ModelParams& w0) {
  InProcessExchange ex(g, cfg);
  return run_dynamic(Algorithm::FedAvg, g, cfg, w0, g.s_max(), ex);
}

inline Trace fedavg_strategic_run(const GameInstance& g, const RunConfig& cfg, const ModelParams& w0,
                                  const StrategyProfile& s0) {
  InProcessExchange ex(g, cfg);
  return run_dynamic(Algorithm::FedAvgStrategic, g, cfg, w0, s0, ex);
}

}  // namespace ifl
