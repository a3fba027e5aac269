#pragma once

#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "ifl/dynamics.hpp"
#include "ifl/numeric.hpp"
#include "json.hpp"

namespace ifl {

inline void write_trace_csv(std::ostream& out, const Trace& trace) {
  if (trace.records.empty()) return;
  const std::size_t n = trace.records.front().s.size(), m = trace.records.front().w.size();
  out << "t,phase";
  for (std::size_t i = 0; i < n; ++i) out << ",s_" << i;
  for (std::size_t k = 0; k < m; ++k) out << ",w_" << k;
  for (std::size_t i = 0; i < n; ++i) out << ",u_" << i;
  for (std::size_t i = 0; i < n; ++i) out << ",p_" << i;
  out << ",welfare,g_norm,gt_norm\n";
  for (const auto& r : trace.records) {
    out << r.t << ',' << to_string(r.phase);
    for (double x : r.s.s) out << ',' << format_double(x);
    for (double x : r.w.w) out << ',' << format_double(x);
    for (const auto& u : r.utilities) out << ',' << format_double(u.utility);
    for (const auto& u : r.utilities) out << ',' << format_double(u.payment);
    out << ',' << format_double(r.welfare) << ',' << format_double(r.g_norm) << ',' << format_double(r.gt_norm) << '\n';
  }
}

inline std::string trace_csv(const Trace& trace) {
  std::ostringstream os;
  write_trace_csv(os, trace);
  return os.str();
}

namespace detail {

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

}  // namespace detail

/// Reads the records back. Accuracy and cost are not stored, so they come back as NaN.
inline std::vector<RoundRecord> read_trace_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("trace CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split(line, ',');
  std::size_t n = 0, m = 0;
  for (const auto& h : header) {
    if (h.rfind("s_", 0) == 0) ++n;
    if (h.rfind("w_", 0) == 0) ++m;
  }
  const std::size_t width = 2 + 3 * n + m + 3;
  if (header.size() != width || header[0] != "t" || header[1] != "phase" || header.back() != "gt_norm")
    throw ConfigError("not a trace CSV header");

  std::vector<RoundRecord> records;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = detail::split(line, ',');
    if (cells.size() != width) throw ConfigError("trace CSV line " + std::to_string(lineno) + " has the wrong width");
    RoundRecord r;
    std::size_t c = 0;
    r.t = static_cast<long>(parse_double(cells[c++]));
    try {
      r.phase = parse_phase(cells[c++]);
    } catch (const ProtocolError&) {
      throw ConfigError("trace CSV line " + std::to_string(lineno) + ": unknown phase");
    }
    for (std::size_t i = 0; i < n; ++i) r.s.s.push_back(parse_double(cells[c++]));
    for (std::size_t k = 0; k < m; ++k) r.w.w.push_back(parse_double(cells[c++]));
    r.utilities.assign(n, UtilityReport{nan, nan, 0.0, 0.0});
    for (std::size_t i = 0; i < n; ++i) r.utilities[i].utility = parse_double(cells[c++]);
    for (std::size_t i = 0; i < n; ++i) r.utilities[i].payment = parse_double(cells[c++]);
    r.welfare = parse_double(cells[c++]);
    r.g_norm = parse_double(cells[c++]);
    r.gt_norm = parse_double(cells[c++]);
    records.push_back(std::move(r));
  }
  return records;
}

inline nlohmann::json config_json(const RunConfig& c) {
  return {{"gamma", c.gamma},
          {"eta", c.eta},
          {"T", c.T},
          {"eps", c.eps},
          {"eps_s", c.eps_s},
          {"phase1_cap", c.phase1_cap},
          {"seed", c.seed},
          {"updater", to_string(c.updater)},
          {"gradient_point", to_string(c.gradient_point)},
          {"beta_check", c.enforce_beta_threshold}};
}

inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c;
  c.gamma = j.at("gamma").get<double>();
  c.eta = j.at("eta").get<double>();
  c.T = j.at("T").get<long>();
  c.eps = j.at("eps").get<double>();
  c.eps_s = j.at("eps_s").get<double>();
  c.phase1_cap = j.at("phase1_cap").get<long>();
  c.seed = j.at("seed").get<std::uint64_t>();
  const auto updater = j.at("updater").get<std::string>();
  if (updater != "analytic" && updater != "empirical") throw ConfigError("unknown updater '" + updater + "'");
  c.updater = updater == "analytic" ? Updater::Analytic : Updater::Empirical;
  const auto point = j.at("gradient_point").get<std::string>();
  if (point != "updated-own" && point != "current") throw ConfigError("unknown gradient point '" + point + "'");
  c.gradient_point = point == "current" ? GradientPoint::Current : GradientPoint::UpdatedOwn;
  c.enforce_beta_threshold = j.at("beta_check").get<bool>();
  return c;
}

inline nlohmann::json trace_manifest(const Trace& trace, const nlohmann::json& instance = nullptr) {
  nlohmann::json j{{"algorithm", to_string(trace.algorithm)},
                   {"config", config_json(trace.config)},
                   {"seed", trace.config.seed},
                   {"outcome", to_string(trace.outcome)},
                   {"instance_digest", trace.digest},
                   {"run_id", trace.run_id},
                   {"records", trace.records.size()},
                   {"phase1_rounds", trace.phase1_rounds}};
  if (!trace.records.empty()) {
    const auto& last = trace.final();
    j["final"] = {{"t", last.t}, {"welfare", last.welfare}, {"s", last.s.s}, {"w", last.w.w}};
  }
  if (trace.outcome == Outcome::Error) {
    j["error"] = {{"message", trace.error}};
    if (trace.error_round) j["error"]["round"] = *trace.error_round;
    if (trace.error_agent) j["error"]["agent"] = *trace.error_agent;
  }
  if (!instance.is_null()) j["instance"] = instance;
  return j;
}

}  // namespace ifl
