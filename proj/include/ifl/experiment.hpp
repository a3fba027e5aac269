#pragma once

// The logic behind the CLI commands, kept here so it is testable without a process.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <future>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ifl/analysis.hpp"
#include "ifl/dynamics.hpp"
#include "ifl/scenario.hpp"
#include "ifl/trace_io.hpp"
#include "json.hpp"

namespace ifl {

enum ExitCode : int { kExitOk = 0, kExitValidation = 1, kExitRuntime = 2, kExitRefuted = 3 };

inline Trace execute(const Scenario& sc) {
  const auto& g = *sc.game;
  switch (sc.algorithm) {
    case Algorithm::Upbred: return upbred_run(g, sc.run, sc.w0, sc.s0);
    case Algorithm::TwoPhase: return two_phase_run(g, sc.run, sc.w0, sc.s0);
    case Algorithm::FedAvg: return fedavg_run(g, sc.run, sc.w0);
    case Algorithm::FedAvgStrategic: return fedavg_strategic_run(g, sc.run, sc.w0, sc.s0);
  }
  throw ConfigError("unknown algorithm");
}

inline std::string run_summary(const Trace& t) {
  std::ostringstream o;
  o << "algorithm=" << to_string(t.algorithm) << " outcome=" << to_string(t.outcome);
  if (!t.records.empty()) o << " rounds=" << t.final().t << " welfare=" << format_double(t.final().welfare);
  if (t.algorithm == Algorithm::TwoPhase || t.algorithm == Algorithm::FedAvgStrategic) o << " phase1_rounds=" << t.phase1_rounds;
  if (t.outcome == Outcome::Error) o << " error=\"" << t.error << "\"";
  return o.str();
}

inline bool wants_format(const ScenarioConfig& c, const std::string& fmt) {
  return c.output.formats.find(fmt) != std::string::npos;
}

/// Writes trace.csv / manifest.json (per [output].formats) and returns the written paths.
inline std::vector<std::string> write_run_outputs(const Scenario& sc, const Trace& t, const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> written;
  if (wants_format(sc.config, "csv")) {
    const auto path = (std::filesystem::path(dir) / "trace.csv").string();
    std::ofstream out(path, std::ios::binary);
    write_trace_csv(out, t);
    written.push_back(path);
  }
  if (wants_format(sc.config, "json")) {
    const auto path = (std::filesystem::path(dir) / "manifest.json").string();
    std::ofstream out(path, std::ios::binary);
    auto manifest = trace_manifest(t, sc.game->describe());
    manifest["scenario"] = render_scenario(sc.config);
    out << manifest.dump(2) << '\n';
    written.push_back(path);
  }
  if (sc.empirical && wants_format(sc.config, "data")) {
    for (std::size_t i = 0; i < sc.game->n(); ++i) {
      for (const char* part : {"train", "test"}) {
        const auto path = (std::filesystem::path(dir) / ("agent" + std::to_string(i) + "_" + part + ".csv")).string();
        std::ofstream out(path, std::ios::binary);
        write_dataset_csv(out, std::string(part) == "train" ? sc.empirical->train_set(i) : sc.empirical->test_set(i));
        written.push_back(path);
      }
    }
  }
  return written;
}

inline int exit_code(const Trace& t) { return t.outcome == Outcome::Error ? kExitRuntime : kExitOk; }

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

struct SweepRow {
  double value = 0.0;
  std::size_t replicate = 0;
  std::string outcome;
  std::optional<double> welfare;
  long rounds = 0;
  double total_s = 0.0;
  double wall_ms = 0.0;
  std::string error;
};

inline ScenarioConfig sweep_point(ScenarioConfig c, const std::string& axis, double value, std::size_t replicate) {
  if (axis == "beta") {
    c.instance.beta = value;
    c.run.seed += replicate;
  } else if (axis == "agents") {
    if (!(value >= 1.0) || value != std::floor(value)) throw ConfigError("agents axis values must be integers >= 1");
    c.instance.n = static_cast<std::size_t>(value);
    c.run.seed += replicate;
  } else if (axis == "seed") {
    if (!(value >= 0.0) || value != std::floor(value)) throw ConfigError("seed axis values must be integers >= 0");
    c.run.seed = static_cast<std::uint64_t>(value) + replicate;
  } else {
    throw ConfigError("sweep axis must be beta, agents or seed");
  }
  return c;
}

inline SweepRow sweep_one(const ScenarioConfig& base, const std::string& axis, double value, std::size_t replicate) {
  SweepRow row;
  row.value = value;
  row.replicate = replicate;
  const auto start = std::chrono::steady_clock::now();
  try {
    const auto sc = build_scenario(sweep_point(base, axis, value, replicate));
    const Trace t = execute(sc);
    row.outcome = to_string(t.outcome);
    if (!t.records.empty()) {
      row.welfare = t.final().welfare;
      row.rounds = t.final().t;
      row.total_s = std::accumulate(t.final().s.s.begin(), t.final().s.s.end(), 0.0);
    }
    row.error = t.error;
  } catch (const std::exception& e) {
    row.outcome = "invalid";
    row.error = e.what();
  }
  row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return row;
}

inline std::vector<SweepRow> run_sweep(const ScenarioConfig& base, const std::string& axis, const Vec& values,
                                       std::size_t replicates = 10, bool parallel = true) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  if (replicates < 1) throw ConfigError("sweep needs at least one replicate");
  for (double v : values)
    if (!std::isfinite(v)) throw ConfigError("sweep values must be finite");
  sweep_point(base, axis, values.front(), 0);  // axis validation

  std::vector<SweepRow> rows;
  if (!parallel) {
    for (double v : values)
      for (std::size_t r = 0; r < replicates; ++r) rows.push_back(sweep_one(base, axis, v, r));
    return rows;
  }
  std::vector<std::future<SweepRow>> jobs;
  for (double v : values)
    for (std::size_t r = 0; r < replicates; ++r)
      jobs.push_back(std::async(std::launch::async, [&base, &axis, v, r] { return sweep_one(base, axis, v, r); }));
  for (auto& j : jobs) rows.push_back(j.get());
  return rows;
}

inline void write_sweep_csv(std::ostream& out, const std::string& axis, const std::vector<SweepRow>& rows) {
  out << axis << ",replicate,final_welfare,rounds,total_s,outcome,wall_ms,error\n";
  for (const auto& r : rows) {
    std::string err = r.error;
    std::replace(err.begin(), err.end(), '"', '\'');
    out << format_double(r.value) << ',' << r.replicate << ',' << (r.welfare ? format_double(*r.welfare) : "") << ','
        << r.rounds << ',' << format_double(r.total_s) << ',' << r.outcome << ',' << format_double(r.wall_ms) << ",\""
        << err << "\"\n";
  }
}

// ---------------------------------------------------------------------------
// Bounds
// ---------------------------------------------------------------------------

struct SmoothnessConstants {
  double M = 0.0;
  double nu = 0.0;
};

/// Curvature of f(w) = -(1/n) sum_i a_i(w, s_max) when the family has a closed form.
inline std::optional<SmoothnessConstants> closed_form_smoothness(const GameInstance& g) {
  if (const auto* q = dynamic_cast<const QuadraticAccuracy*>(&g.accuracy())) {
    const double c = 2.0 / q->denominator(g.s_max().s);
    return SmoothnessConstants{c, c};
  }
  if (const auto* cq = dynamic_cast<const CoupledQuadraticAccuracy*>(&g.accuracy()))
    return SmoothnessConstants{cq->params().curvature, cq->params().curvature};
  return std::nullopt;
}

inline nlohmann::json compute_bounds(const Scenario& sc) {
  const auto& g = *sc.game;
  const auto& B = sc.config.bounds;
  nlohmann::json out;

  double lambda = B.lambda, lambda_t = B.lambda_tilde, L = B.L, Lt = B.L_tilde, P = B.P, Pt = B.P_tilde;
  if (B.source == "estimated") {
    const auto samples = assumption_samples(g, sc.w0.w, B.radius, B.samples);
    const auto est = check_assumption1(samples, g, 0.0, 0.0, B.fd_step);
    lambda = est.lambda;
    lambda_t = est.lambda_tilde;
    L = est.L;
    Lt = est.L_tilde;
    P = est.P;
    Pt = est.P_tilde;
    out["estimates"] = est.to_json();
  } else if (B.source != "explicit") {
    throw ConfigError("bounds.source: expected estimated or explicit, got '" + B.source + "'");
  }
  out["constants"] = {{"n", g.n()}, {"m", g.m()},       {"lambda", lambda}, {"lambda_tilde", lambda_t},
                      {"L", L},     {"L_tilde", Lt},    {"P", P},           {"P_tilde", Pt}};

  const auto region = feasible_steps(g.n(), g.m(), L, Lt, lambda, lambda_t, P, Pt);
  out["region"] = region.to_json();
  out["gamma_max"] = region.gamma_max;
  out["eta_max"] = region.eta_max;
  out["empty_region"] = !region.preconditions_ok();

  const double W = contraction_factor(g.n(), g.m(), L, Lt, lambda, lambda_t, P, Pt, sc.run.gamma, sc.run.eta);
  out["W"] = W;
  const double E = norm2(strategy_gradient(g, sc.w0.w, sc.s0.s)) + norm2(welfare_gradient(g, sc.w0.w, sc.s0.s));
  out["E"] = E;
  if (W < 1.0) out["T0"] = iteration_bound_T0(E, sc.run.eps, W);
  else out["T0"] = nullptr;

  out["kappa"] = nullptr;
  if (g.payment().is_transfer()) {
    Vec derivs;
    for (const auto& a : g.agents()) derivs.push_back(a.cost.max_derivative(a.s_max));
    const double beta = g.payment().beta;
    if (std::all_of(derivs.begin(), derivs.end(), [beta](double d) { return beta > d; }))
      out["kappa"] = phase_one_bound(sc.s0.s, g.s_max().s, beta, derivs, sc.run.gamma);
  }

  std::optional<SmoothnessConstants> sm;
  if (B.M > 0.0 || B.nu > 0.0) sm = SmoothnessConstants{B.M, B.nu};
  else sm = closed_form_smoothness(g);
  out["T0_two_phase"] = nullptr;
  out["T0_corollary"] = nullptr;
  if (sm) {
    check_smoothness(sm->M, sm->nu);
    const auto opt = compute_w_opt(g);
    const double n = static_cast<double>(g.n());
    const Vec smax = g.s_max().s;
    const double f0 = -social_welfare(g, sc.w0.w, smax) / n, f_opt = -opt.welfare / n;
    out["M"] = sm->M;
    out["nu"] = sm->nu;
    out["w_opt"] = opt.w.w;
    out["T0_two_phase"] = phase_two_bound(f0, f_opt, sc.run.eps, sm->M, sm->nu);
    out["T0_corollary"] = corollary_bound(std::sqrt(squared_distance(sc.w0.w, opt.w.w)), sc.run.eps, sm->M, sm->nu);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Diagnose
// ---------------------------------------------------------------------------

struct DiagnoseReport {
  ContractionReport contraction;
  struct Row {
    std::size_t agent;
    double s, payment, utility;
  };
  std::vector<Row> table;
  bool payments_monotone = true;  // sorting by s sorts payments
};

inline DiagnoseReport diagnose(const std::vector<RoundRecord>& records) {
  DiagnoseReport rep;
  rep.contraction = contraction_diagnostic(records);
  const auto& last = records.back();
  for (std::size_t i = 0; i < last.s.size(); ++i)
    rep.table.push_back({i, last.s[i], last.utilities[i].payment, last.utilities[i].utility});
  auto sorted = rep.table;
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.s < b.s; });
  for (std::size_t k = 1; k < sorted.size(); ++k)
    if (sorted[k].payment < sorted[k - 1].payment - 1e-12 && sorted[k].s > sorted[k - 1].s) rep.payments_monotone = false;
  return rep;
}

inline void write_ratio_csv(std::ostream& out, const ContractionReport& c) {
  out << "t,ratio\n";
  for (const auto& r : c.ratios) out << r.t << ',' << format_double(r.ratio) << '\n';
}

inline void write_table_csv(std::ostream& out, const DiagnoseReport& d) {
  out << "agent,s,payment,utility\n";
  for (const auto& r : d.table)
    out << r.agent << ',' << format_double(r.s) << ',' << format_double(r.payment) << ',' << format_double(r.utility) << '\n';
}

}  // namespace ifl
