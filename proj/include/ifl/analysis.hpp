#pragma once

// Certification and diagnostics: best responses, Nash certificates, budget audits,
// finite-difference Hessian blocks, Assumption-1 estimates, step-size region,
// welfare optimum and the contraction ratio of a trace.

#include <Eigen/Dense>

#include <cmath>
#include <future>
#include <limits>
#include <optional>
#include <vector>

#include "ifl/dynamics.hpp"
#include "ifl/errors.hpp"
#include "ifl/game.hpp"
#include "ifl/numeric.hpp"
#include "json.hpp"

namespace ifl {

// ---------------------------------------------------------------------------
// Best response and Nash certification
// ---------------------------------------------------------------------------

inline constexpr std::size_t kDefaultGridPoints = 201;
inline constexpr double kGoldenTol = 1e-8;

struct BestResponse {
  double s = 0.0;
  double utility = 0.0;
};

namespace detail {

/// u_i with s_i replaced; singular points count as -inf so the search steps around them.
inline double deviation_utility(const GameInstance& g, std::size_t i, std::span<const double> w, Vec& s, double s_i) {
  const double saved = s[i];
  s[i] = s_i;
  double u = -std::numeric_limits<double>::infinity();
  try {
    u = utility(g, i, w, s).utility;
  } catch (const SingularDenominator&) {
  }
  s[i] = saved;
  return std::isnan(u) ? -std::numeric_limits<double>::infinity() : u;
}

}  // namespace detail

/// Maximizes u_i(w, ., s_{-i}) over [0, s_max_i]: grid scan, then golden section on the
/// bracket around the best grid point. Ties go to the smaller contribution.
inline BestResponse best_response(const GameInstance& g, std::span<const double> w, std::span<const double> s,
                                  std::size_t i, std::size_t grid_points = kDefaultGridPoints) {
  if (grid_points < 3) throw ConfigError("best response needs at least 3 grid points");
  if (i >= g.n()) throw ConfigError("agent index out of range");
  check_params(g, w);
  check_profile(g, s);
  Vec prof(s.begin(), s.end());
  const double hi = g.agent(i).s_max;
  const double step = hi / static_cast<double>(grid_points - 1);

  std::size_t best_k = 0;
  double best_u = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < grid_points; ++k) {
    const double x = k + 1 == grid_points ? hi : step * static_cast<double>(k);
    const double u = detail::deviation_utility(g, i, w, prof, x);
    if (u > best_u) {
      best_u = u;
      best_k = k;
    }
  }
  BestResponse br{best_k + 1 == grid_points ? hi : step * static_cast<double>(best_k), best_u};

  double a = best_k == 0 ? 0.0 : step * static_cast<double>(best_k - 1);
  double b = best_k + 1 >= grid_points ? hi : std::min(hi, step * static_cast<double>(best_k + 1));
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = b - inv_phi * (b - a), x2 = a + inv_phi * (b - a);
  double f1 = detail::deviation_utility(g, i, w, prof, x1), f2 = detail::deviation_utility(g, i, w, prof, x2);
  while (b - a > kGoldenTol) {
    if (f1 >= f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - inv_phi * (b - a);
      f1 = detail::deviation_utility(g, i, w, prof, x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + inv_phi * (b - a);
      f2 = detail::deviation_utility(g, i, w, prof, x2);
    }
  }
  const double x = 0.5 * (a + b);
  const double u = detail::deviation_utility(g, i, w, prof, x);
  if (u > br.utility) br = {x, u};
  if (!std::isfinite(br.utility)) throw NumericError("no finite utility on the strategy interval", i);
  return br;
}

struct EquilibriumCertificate {
  StrategyProfile profile;
  ModelParams w;
  Vec regrets;
  Vec best_responses;
  double eps = 0.0;
  bool certified = false;
  // Set when refuted: the agent with the largest regret, its deviation and gain.
  std::optional<std::size_t> agent;
  double deviation = 0.0;
  double gain = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json j{{"verdict", certified ? "certified" : "refuted"},
                     {"eps", eps},
                     {"s", profile.s},
                     {"w", w.w},
                     {"regrets", regrets},
                     {"best_responses", best_responses}};
    if (agent) j["refutation"] = {{"agent", *agent}, {"deviation", deviation}, {"gain", gain}};
    return j;
  }
};

inline EquilibriumCertificate certify_nash(const GameInstance& g, std::span<const double> w,
                                           std::span<const double> s, double eps,
                                           std::size_t grid_points = kDefaultGridPoints) {
  if (!(eps >= 0.0) || !std::isfinite(eps)) throw ConfigError("certification eps must be finite and >= 0");
  EquilibriumCertificate cert;
  cert.profile.s.assign(s.begin(), s.end());
  cert.w.w.assign(w.begin(), w.end());
  cert.eps = eps;
  double worst = -1.0;
  for (std::size_t i = 0; i < g.n(); ++i) {
    const auto br = best_response(g, w, s, i, grid_points);
    const double current = utility(g, i, w, s).utility;
    const double regret = std::max(br.utility - current, 0.0);
    cert.regrets.push_back(regret);
    cert.best_responses.push_back(br.s);
    if (regret > worst) {
      worst = regret;
      cert.agent = i;
      cert.deviation = br.s;
      cert.gain = regret;
    }
  }
  cert.certified = worst <= eps;
  if (cert.certified) cert.agent.reset();
  return cert;
}

// ---------------------------------------------------------------------------
// Budget balance
// ---------------------------------------------------------------------------

struct BudgetAudit {
  double max_abs_sum = 0.0;
  double tolerance = 0.0;
  bool pass = true;
  bool vacuous = false;  // no transfers in the rule
};

inline BudgetAudit audit_budget_balance(const PaymentRule& rule, const std::vector<Vec>& profiles) {
  BudgetAudit audit;
  if (!rule.is_transfer()) {
    audit.vacuous = true;
    return audit;
  }
  double scale = 0.0;
  for (const auto& s : profiles) {
    double total = 0.0, mass = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      total += payment(rule, s, i);
      mass += std::abs(s[i]);
    }
    audit.max_abs_sum = std::max(audit.max_abs_sum, std::abs(total));
    scale = std::max(scale, mass);
  }
  audit.tolerance = 1e-9 * rule.beta * scale;
  audit.pass = audit.max_abs_sum <= audit.tolerance;
  return audit;
}

// ---------------------------------------------------------------------------
// Hessian blocks by central second differences
// ---------------------------------------------------------------------------

inline constexpr double kDefaultFdStep = 1e-4;

struct HessianBlocks {
  Eigen::MatrixXd G;        // n x n, d^2 u_i / ds_j ds_i
  Eigen::MatrixXd G_tilde;  // m x m, (1/n) sum_i d^2 a_i / dw_l dw_k
  Eigen::MatrixXd H;        // n x m, d^2 u_i / dw_k ds_i
  Eigen::MatrixXd H_tilde;  // m x n, sum_i d^2 a_i / ds_j dw_k
};

namespace detail {

inline double fd_step(double x, double rel) { return rel * std::max(1.0, std::abs(x)); }

/// Second derivative of f in coordinates (p, q) of the joint vector z = (w, s).
template <class F>
double second_difference(F&& f, Vec z, std::size_t p, std::size_t q, double hp, double hq) {
  const double zp = z[p], zq = z[q];
  if (p == q) {
    const double f0 = f(z);
    z[p] = zp + hp;
    const double fp = f(z);
    z[p] = zp - hp;
    const double fm = f(z);
    return (fp - 2.0 * f0 + fm) / (hp * hp);
  }
  auto at = [&](double dp, double dq) {
    z[p] = zp + dp;
    z[q] = zq + dq;
    return f(z);
  };
  return (at(hp, hq) - at(hp, -hq) - at(-hp, hq) + at(-hp, -hq)) / (4.0 * hp * hq);
}

}  // namespace detail

inline HessianBlocks estimate_matrices(const GameInstance& g, std::span<const double> w, std::span<const double> s,
                                       double fd_rel = kDefaultFdStep) {
  if (!(fd_rel > 0.0)) throw ConfigError("fd_step must be > 0");
  check_params(g, w);
  check_profile(g, s);
  const std::size_t n = g.n(), m = g.m();
  Vec z(w.begin(), w.end());
  z.insert(z.end(), s.begin(), s.end());
  Vec h(z.size());
  for (std::size_t k = 0; k < z.size(); ++k) h[k] = detail::fd_step(z[k], fd_rel);
  for (std::size_t i = 0; i < n; ++i)
    if (s[i] - h[m + i] <= 0.0 || s[i] + h[m + i] >= g.agent(i).s_max)
      throw ConfigError("estimate_matrices needs an interior profile (agent " + std::to_string(i) + ")");

  auto split_u = [&](std::size_t i) {
    return [&, i](const Vec& zz) {
      std::span<const double> ww(zz.data(), m), ss(zz.data() + m, n);
      return utility(g, i, ww, ss).utility;
    };
  };
  auto sum_a = [&](const Vec& zz) {
    std::span<const double> ww(zz.data(), m), ss(zz.data() + m, n);
    return social_welfare(g, ww, ss);
  };

  HessianBlocks out{Eigen::MatrixXd(n, n), Eigen::MatrixXd(m, m), Eigen::MatrixXd(n, m), Eigen::MatrixXd(m, n)};
  for (std::size_t i = 0; i < n; ++i) {
    auto ui = split_u(i);
    for (std::size_t j = 0; j < n; ++j) out.G(i, j) = detail::second_difference(ui, z, m + j, m + i, h[m + j], h[m + i]);
    for (std::size_t k = 0; k < m; ++k) out.H(i, k) = detail::second_difference(ui, z, k, m + i, h[k], h[m + i]);
  }
  for (std::size_t k = 0; k < m; ++k) {
    for (std::size_t l = 0; l < m; ++l)
      out.G_tilde(k, l) = detail::second_difference(sum_a, z, l, k, h[l], h[k]) / static_cast<double>(n);
    for (std::size_t j = 0; j < n; ++j) out.H_tilde(k, j) = detail::second_difference(sum_a, z, m + j, k, h[m + j], h[k]);
  }
  for (const auto* M : {&out.G, &out.G_tilde, &out.H, &out.H_tilde})
    if (!M->allFinite()) throw NumericError("non-finite second difference");
  return out;
}

// ---------------------------------------------------------------------------
// Assumption 1
// ---------------------------------------------------------------------------

inline constexpr double kNsdTol = 1e-9;
/// Second differences carry rounding noise of order 1e-7 relative to the entries, so the
/// eigenvalue test also allows this much slack times max(1, L).
inline constexpr double kNsdRelTol = 1e-5;

struct AssumptionSample {
  Vec w;
  Vec s;
};

struct AssumptionEstimates {
  double lambda = 0.0;        // largest lambda making sym(G) + lambda I NSD on every sample
  double lambda_tilde = 0.0;  // same for G~
  double L = 0.0, L_tilde = 0.0;
  double P = 0.0, P_tilde = 0.0;
  std::size_t sample_count = 0;
  bool nsd_ok = false;        // for the lambda that was asked about
  bool nsd_tilde_ok = false;  // for the lambda_tilde that was asked about
  double max_eig_G = -std::numeric_limits<double>::infinity();
  double max_eig_G_tilde = -std::numeric_limits<double>::infinity();
  double nsd_tol = kNsdTol, nsd_tilde_tol = kNsdTol;

  nlohmann::json to_json() const {
    return {{"lambda", lambda},     {"lambda_tilde", lambda_tilde}, {"L", L},
            {"L_tilde", L_tilde},   {"P", P},                       {"P_tilde", P_tilde},
            {"samples", sample_count}, {"nsd_ok", nsd_ok},          {"nsd_tilde_ok", nsd_tilde_ok}};
  }
};

namespace detail {

inline double max_symmetric_eigenvalue(const Eigen::MatrixXd& A) {
  const Eigen::MatrixXd sym = 0.5 * (A + A.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericError("eigensolver failed");
  return es.eigenvalues().maxCoeff();
}

inline double operator_norm(const Eigen::MatrixXd& A) {
  if (A.size() == 0) return 0.0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A);
  return svd.singularValues()(0);
}

}  // namespace detail

/// Deterministic Halton points: s in the inner 90% of the box, w in a cube of the given
/// radius around `w_center`.
inline std::vector<AssumptionSample> assumption_samples(const GameInstance& g, std::span<const double> w_center,
                                                        double radius, std::size_t count = 64) {
  if (w_center.size() != g.m()) throw ConfigError("w center has the wrong length");
  if (!(radius >= 0.0)) throw ConfigError("sample radius must be >= 0");
  std::vector<AssumptionSample> out;
  for (std::size_t k = 1; k <= count; ++k) {
    AssumptionSample smp;
    std::size_t dim = 0;
    for (std::size_t j = 0; j < g.m(); ++j)
      smp.w.push_back(w_center[j] + radius * (2.0 * halton(k, nth_prime(dim++)) - 1.0));
    for (std::size_t i = 0; i < g.n(); ++i)
      smp.s.push_back(g.agent(i).s_max * (0.05 + 0.9 * halton(k, nth_prime(dim++))));
    out.push_back(std::move(smp));
  }
  return out;
}

inline AssumptionEstimates check_assumption1(const std::vector<AssumptionSample>& samples, const GameInstance& g,
                                             double lambda, double lambda_tilde, double fd_rel = kDefaultFdStep) {
  if (samples.empty()) throw InsufficientData("check_assumption1 needs at least one sample");
  std::vector<std::future<HessianBlocks>> jobs;
  for (const auto& smp : samples)
    jobs.push_back(std::async(std::launch::async, [&g, &smp, fd_rel] { return estimate_matrices(g, smp.w, smp.s, fd_rel); }));

  AssumptionEstimates est;
  est.sample_count = samples.size();
  for (auto& job : jobs) {
    const HessianBlocks hb = job.get();
    est.max_eig_G = std::max(est.max_eig_G, detail::max_symmetric_eigenvalue(hb.G));
    est.max_eig_G_tilde = std::max(est.max_eig_G_tilde, detail::max_symmetric_eigenvalue(hb.G_tilde));
    est.L = std::max(est.L, hb.G.cwiseAbs().maxCoeff());
    est.L_tilde = std::max(est.L_tilde, hb.G_tilde.cwiseAbs().maxCoeff());
    est.P = std::max(est.P, detail::operator_norm(hb.H));
    est.P_tilde = std::max(est.P_tilde, detail::operator_norm(hb.H_tilde));
  }
  est.lambda = std::max(0.0, -est.max_eig_G);
  est.lambda_tilde = std::max(0.0, -est.max_eig_G_tilde);
  est.nsd_tol = kNsdTol + kNsdRelTol * std::max(1.0, est.L);
  est.nsd_tilde_tol = kNsdTol + kNsdRelTol * std::max(1.0, est.L_tilde);
  est.nsd_ok = est.max_eig_G + lambda <= est.nsd_tol;
  est.nsd_tilde_ok = est.max_eig_G_tilde + lambda_tilde <= est.nsd_tilde_tol;
  return est;
}

/// Smallest beta for which every own-strategy derivative is positive under transfers
/// (zeta + tau); nullopt when the accuracy family has no derivative floor.
inline std::optional<double> lemma1_beta_threshold(const GameInstance& g) {
  const auto tau = g.accuracy().own_derivative_floor();
  if (!tau) return std::nullopt;
  return g.max_marginal_cost() + *tau;
}

// ---------------------------------------------------------------------------
// Step sizes and the welfare optimum
// ---------------------------------------------------------------------------

struct FeasibleStepRegion {
  double gamma_max = 0.0;
  double eta_max = 0.0;
  bool gamma_ok = false;  // lambda > P~
  bool eta_ok = false;    // lambda~ > P

  bool preconditions_ok() const { return gamma_ok && eta_ok; }

  nlohmann::json to_json() const {
    return {{"gamma_max", gamma_max}, {"eta_max", eta_max}, {"lambda_gt_P_tilde", gamma_ok}, {"lambda_tilde_gt_P", eta_ok}};
  }
};

namespace detail {

/// min{1, 1/cross, 2 lam/(k^2 Lip^2), (lam - cross)/(k^2 Lip^2 - cross^2)}, dropping terms
/// whose denominator is not positive. 0 when lam <= cross.
inline double step_bound(std::size_t k, double lip, double lam, double cross) {
  if (!(lam > cross)) return 0.0;
  const double kl2 = static_cast<double>(k * k) * lip * lip;
  double bound = 1.0;
  if (cross > 0.0) bound = std::min(bound, 1.0 / cross);
  if (kl2 > 0.0) bound = std::min(bound, 2.0 * lam / kl2);
  if (kl2 - cross * cross > 0.0) bound = std::min(bound, (lam - cross) / (kl2 - cross * cross));
  return bound;
}

}  // namespace detail

inline FeasibleStepRegion feasible_steps(std::size_t n, std::size_t m, double L, double L_tilde, double lambda,
                                         double lambda_tilde, double P, double P_tilde) {
  for (double x : {L, L_tilde, lambda, lambda_tilde, P, P_tilde})
    if (!(x >= 0.0) || !std::isfinite(x)) throw ConfigError("step-size constants must be finite and >= 0");
  FeasibleStepRegion r;
  r.gamma_ok = lambda > P_tilde;
  r.eta_ok = lambda_tilde > P;
  r.gamma_max = detail::step_bound(n, L, lambda, P_tilde);
  r.eta_max = detail::step_bound(m, L_tilde, lambda_tilde, P);
  return r;
}

struct WOpt {
  ModelParams w;
  long iterations = 0;
  bool converged = false;
  double welfare = 0.0;
};

/// Backtracking gradient ascent on sum_i a_i(., s) from w = 0 (s defaults to s_max).
inline WOpt compute_w_opt(const GameInstance& g, double tol = 1e-9, long max_iters = 100000,
                          std::optional<Vec> s_opt = std::nullopt) {
  const Vec s = s_opt ? *s_opt : g.s_max().s;
  check_profile(g, s);
  const double n = static_cast<double>(g.n());
  WOpt out;
  Vec w(g.m(), 0.0);
  double f = social_welfare(g, w, s);
  double step = 1.0;
  for (;;) {
    Vec grad = welfare_gradient(g, w, s);
    for (auto& x : grad) x *= n;
    const double gn2 = dot(grad, grad);
    if (std::sqrt(gn2) <= tol) {
      out.converged = true;
      break;
    }
    if (out.iterations >= max_iters) break;
    step *= 2.0;
    Vec trial(w.size());
    double f_trial = 0.0;
    for (int shrink = 0;; ++shrink) {
      for (std::size_t k = 0; k < w.size(); ++k) trial[k] = w[k] + step * grad[k];
      f_trial = social_welfare(g, trial, s);
      const double gain = 0.5 * step * gn2;
      if (gain > 1e-12 * std::max(1.0, std::abs(f))) {
        if (f_trial >= f + gain) break;
      } else {
        // Welfare differences are lost in rounding here; require the gradient to shrink.
        const Vec gt = welfare_gradient(g, trial, s);
        if (dot(gt, gt) * n * n <= 0.5 * gn2) break;
      }
      step *= 0.5;
      if (shrink > 200) throw NumericError("line search failed in compute_w_opt");
    }
    w = trial;
    f = f_trial;
    ++out.iterations;
  }
  out.w.w = w;
  out.welfare = f;
  return out;
}

// ---------------------------------------------------------------------------
// Contraction diagnostic
// ---------------------------------------------------------------------------

struct ContractionReport {
  struct Ratio {
    long t = 0;  // round of the numerator
    double ratio = 0.0;
  };
  std::vector<Ratio> ratios;
  std::optional<double> max_ratio;
};

inline ContractionReport contraction_diagnostic(const std::vector<RoundRecord>& records) {
  if (records.empty()) throw InsufficientData("trace has no records");
  ContractionReport rep;
  for (std::size_t k = 1; k < records.size(); ++k) {
    const double prev = records[k - 1].g_norm + records[k - 1].gt_norm;
    if (prev < 1e-14) continue;
    const double r = (records[k].g_norm + records[k].gt_norm) / prev;
    rep.ratios.push_back({records[k].t, r});
    rep.max_ratio = std::max(rep.max_ratio.value_or(r), r);
  }
  return rep;
}

inline ContractionReport contraction_diagnostic(const Trace& trace) { return contraction_diagnostic(trace.records); }

}  // namespace ifl
