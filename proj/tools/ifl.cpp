// ifl: command-line front end for the incentivized federated learning simulator.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ifl/analysis.hpp"
#include "ifl/experiment.hpp"
#include "ifl/federation/agent.hpp"
#include "ifl/federation/center.hpp"
#include "ifl/scenario.hpp"
#include "ifl/trace_io.hpp"

namespace {

using namespace ifl;

struct Globals {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string listen;
  std::string connect;
  std::optional<std::size_t> agent_id;
  double timeout_s = 30.0;
};

ScenarioConfig load(const Globals& g) {
  if (g.config.empty()) throw ConfigError("--config is required");
  auto sets = g.sets;
  if (g.seed) sets.push_back("run.seed=" + std::to_string(*g.seed));
  if (!g.out.empty()) sets.push_back("output.directory=" + g.out);
  return load_scenario(g.config, sets);
}

std::chrono::milliseconds timeout(const Globals& g) {
  if (!(g.timeout_s > 0.0)) throw ConfigError("--timeout must be > 0");
  return std::chrono::milliseconds(static_cast<long long>(g.timeout_s * 1000.0));
}

int finish_run(const Scenario& sc, const Trace& t) {
  for (const auto& path : write_run_outputs(sc, t, sc.config.output.directory)) std::cerr << "wrote " << path << '\n';
  std::cout << run_summary(t) << std::endl;
  return exit_code(t);
}

int serve(const Globals& g, const Scenario& sc) {
  federation::CenterOptions opts;
  opts.listen = federation::parse_endpoint(g.listen);
  opts.round_timeout = opts.accept_timeout = timeout(g);
  opts.on_listening = [](std::uint16_t port) { std::cerr << "listening on port " << port << std::endl; };
  const Trace t = federation::serve_center(*sc.game, sc.run, sc.algorithm, sc.w0, sc.s0, opts);
  return finish_run(sc, t);
}

int agent(const Globals& g, const Scenario& sc) {
  if (!g.agent_id) throw ConfigError("--agent-id is required with --connect");
  federation::AgentOptions opts;
  opts.center = federation::parse_endpoint(g.connect);
  opts.connect_timeout = timeout(g);
  const auto res = federation::run_agent(*sc.game, *g.agent_id, opts);
  if (res.status != 0) std::cerr << "agent " << *g.agent_id << ": " << res.message << '\n';
  return res.status;
}

int cmd_run(const Globals& g) {
  const auto sc = build_scenario(load(g));
  if (!g.listen.empty()) return serve(g, sc);
  if (!g.connect.empty()) return agent(g, sc);
  return finish_run(sc, execute(sc));
}

Vec parse_values(const std::string& text) {
  Vec v = detail::parse_list("--values", text);
  if (v.empty()) throw ConfigError("--values needs at least one value");
  return v;
}

int cmd_sweep(const Globals& g, const std::string& axis, const std::string& values, std::size_t replicates, bool serial) {
  const auto cfg = load(g);
  const auto rows = run_sweep(cfg, axis, parse_values(values), replicates, !serial);
  std::filesystem::create_directories(cfg.output.directory);
  const auto path = (std::filesystem::path(cfg.output.directory) / ("sweep_" + axis + ".csv")).string();
  std::ofstream out(path, std::ios::binary);
  write_sweep_csv(out, axis, rows);
  write_sweep_csv(std::cout, axis, rows);
  std::cerr << "wrote " << path << '\n';
  return kExitOk;
}

int cmd_certify(const Globals& g, const std::string& trace_path, const std::string& w_text, const std::string& s_text,
                double eps, std::size_t grid) {
  if (!std::isfinite(eps) || eps < 0.0) throw ConfigError("--eps must be finite and >= 0");
  const auto sc = build_scenario(load(g));
  Vec w, s;
  if (!trace_path.empty()) {
    std::ifstream in(trace_path);
    if (!in) throw ConfigError("cannot read trace '" + trace_path + "'");
    const auto records = read_trace_csv(in);
    if (records.empty()) throw ConfigError("trace has no records");
    w = records.back().w.w;
    s = records.back().s.s;
  } else {
    if (w_text.empty() || s_text.empty()) throw ConfigError("certify needs --trace or both --w and --s");
    w = detail::parse_list("--w", w_text);
    s = detail::parse_list("--s", s_text);
  }
  const auto cert = certify_nash(*sc.game, w, s, eps, grid);
  const std::string text = cert.to_json().dump(2);
  std::cout << text << std::endl;
  if (!g.out.empty()) {
    std::filesystem::create_directories(g.out);
    std::ofstream(std::filesystem::path(g.out) / "certificate.json") << text << '\n';
  }
  return cert.certified ? kExitOk : kExitRefuted;
}

int cmd_bounds(const Globals& g) {
  const auto sc = build_scenario(load(g));
  const auto j = compute_bounds(sc);
  std::cout << j.dump(2) << std::endl;
  if (!g.out.empty()) {
    std::filesystem::create_directories(g.out);
    std::ofstream(std::filesystem::path(g.out) / "bounds.json") << j.dump(2) << '\n';
  }
  return j.at("empty_region").get<bool>() ? kExitRefuted : kExitOk;
}

int cmd_diagnose(const Globals& g, const std::string& trace_path) {
  std::ifstream in(trace_path);
  if (!in) {
    std::cerr << "error: cannot read trace '" << trace_path << "'\n";
    return kExitRuntime;
  }
  std::vector<RoundRecord> records;
  try {
    records = read_trace_csv(in);
    if (records.empty()) throw ConfigError("trace has no records");
  } catch (const ConfigError& e) {
    std::cerr << "error: unreadable trace: " << e.what() << '\n';
    return kExitRuntime;
  }
  const auto rep = diagnose(records);
  const std::string dir = g.out.empty() ? std::filesystem::path(trace_path).parent_path().string() : g.out;
  if (!dir.empty()) std::filesystem::create_directories(dir);
  const auto base = std::filesystem::path(dir.empty() ? "." : dir);
  {
    std::ofstream out(base / "contraction.csv", std::ios::binary);
    write_ratio_csv(out, rep.contraction);
  }
  {
    std::ofstream out(base / "payments.csv", std::ios::binary);
    write_table_csv(out, rep);
  }
  nlohmann::json j{{"ratios", rep.contraction.ratios.size()}, {"payments_monotone_in_s", rep.payments_monotone}};
  j["max_ratio"] = rep.contraction.max_ratio ? nlohmann::json(*rep.contraction.max_ratio) : nlohmann::json(nullptr);
  std::cout << "# contraction\n";
  write_ratio_csv(std::cout, rep.contraction);
  std::cout << "# final round\n";
  write_table_csv(std::cout, rep);
  std::cout << "# summary\n" << j.dump() << std::endl;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Incentivized federated learning simulator"};
  app.require_subcommand(1);
  Globals g;
  auto add_globals = [&](CLI::App* cmd) {
    cmd->add_option("--config", g.config, "scenario file");
    cmd->add_option("--set", g.sets, "override, section.key=value (repeatable)");
    cmd->add_option("--seed", g.seed, "override run.seed");
    cmd->add_option("--out", g.out, "output directory");
    cmd->add_option("--listen", g.listen, "serve as center on host:port");
    cmd->add_option("--connect", g.connect, "join a center at host:port as an agent");
    cmd->add_option("--agent-id", g.agent_id, "agent id when joining");
    cmd->add_option("--timeout", g.timeout_s, "federation timeout in seconds");
  };

  auto* run = app.add_subcommand("run", "run the configured dynamic");
  add_globals(run);

  auto* sweep = app.add_subcommand("sweep", "repeat runs over beta, agents or seed");
  add_globals(sweep);
  std::string axis, values;
  std::size_t replicates = 10;
  bool serial = false;
  sweep->add_option("--axis", axis, "beta | agents | seed")->required();
  sweep->add_option("--values", values, "comma-separated axis values")->required();
  sweep->add_option("--replicates", replicates, "runs per value");
  sweep->add_flag("--serial", serial, "run replicates one at a time");

  auto* certify = app.add_subcommand("certify", "check a profile for a Nash equilibrium");
  add_globals(certify);
  std::string trace_path, w_text, s_text;
  double eps = 1e-6;
  std::size_t grid = kDefaultGridPoints;
  certify->add_option("--trace", trace_path, "trace CSV; its final record is certified");
  certify->add_option("--w", w_text, "parameters, comma-separated");
  certify->add_option("--s", s_text, "profile, comma-separated");
  certify->add_option("--eps", eps, "regret tolerance");
  certify->add_option("--grid", grid, "best-response grid points");

  auto* bounds = app.add_subcommand("bounds", "step-size region and iteration bounds");
  add_globals(bounds);

  auto* diag = app.add_subcommand("diagnose", "contraction ratios and final payments of a trace");
  add_globals(diag);
  std::string diag_trace;
  diag->add_option("--trace,trace", diag_trace, "trace CSV")->required();

  auto* serve_cmd = app.add_subcommand("serve", "run as the federation center");
  add_globals(serve_cmd);

  auto* agent_cmd = app.add_subcommand("agent", "run as one federation agent");
  add_globals(agent_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitValidation;
  }

  try {
    if (*run) return cmd_run(g);
    if (*sweep) return cmd_sweep(g, axis, values, replicates, serial);
    if (*certify) return cmd_certify(g, trace_path, w_text, s_text, eps, grid);
    if (*bounds) return cmd_bounds(g);
    if (*diag) return cmd_diagnose(g, diag_trace);
    if (*serve_cmd) {
      if (g.listen.empty()) throw ConfigError("serve needs --listen host:port");
      return serve(g, build_scenario(load(g)));
    }
    if (*agent_cmd) {
      if (g.connect.empty()) throw ConfigError("agent needs --connect host:port");
      return agent(g, build_scenario(load(g)));
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitValidation;
}
