#pragma once

// Scenario files: INI sections [instance], [run], [init], [output], [bounds].

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ifl/dynamics.hpp"
#include "ifl/errors.hpp"
#include "ifl/game.hpp"
#include "ifl/models.hpp"
#include "ifl/numeric.hpp"

namespace ifl {

struct ScenarioConfig {
  struct Instance {
    std::size_t n = 2;
    std::size_t m = 0;  // 0: derived from the accuracy family
    std::string accuracy = "quadratic";
    Vec theta{0.0};
    Vec r;  // empty: family default
    double sigma0 = 1e-6;
    // coupled family
    Vec q{1.0};
    double alpha = 1.0, rho = 0.0, kappa = 0.0;
    Vec direction{1.0};
    double curvature = 1.0;
    // empirical family
    std::size_t features = 4, classes = 3, per_agent_size = 0, test_size = 64;
    double separation = 3.0;
    std::string cost = "linear";
    std::string cost_coefficients = "0.1";
    Vec s_max{10.0};
    std::string payment = "none";
    double beta = 0.0;
    bool operator==(const Instance&) const = default;
  } instance;

  struct Run {
    std::string algorithm = "upbred";
    double gamma = 0.5, eta = 0.1;
    long T = 1000;
    double eps = 1e-6, eps_s = 1e-9;
    long phase1_cap = 0;
    std::uint64_t seed = 0;
    std::string updater = "analytic";
    std::string gradient_point = "updated-own";
    bool beta_check = true;
    bool operator==(const Run&) const = default;
  } run;

  struct Init {
    std::string w0 = "zeros";
    std::string s0 = "uniform";
    bool operator==(const Init&) const = default;
  } init;

  struct Output {
    std::string directory = "out";
    std::string formats = "csv,json";
    bool operator==(const Output&) const = default;
  } output;

  struct Bounds {
    std::string source = "estimated";
    double lambda = 0, lambda_tilde = 0, L = 0, L_tilde = 0, P = 0, P_tilde = 0;
    double M = 0, nu = 0;  // 0: closed form when the family has one
    std::size_t samples = 64;
    double radius = 1.0;
    double fd_step = 1e-4;
    bool operator==(const Bounds&) const = default;
  } bounds;

  bool operator==(const ScenarioConfig&) const = default;
};

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string render_list(const Vec& v) {
  std::string out;
  for (std::size_t k = 0; k < v.size(); ++k) out += (k ? "," : "") + format_double(v[k]);
  return out;
}

inline Vec parse_list(const std::string& key, const std::string& text) {
  Vec out;
  if (trim(text).empty()) return out;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      out.push_back(parse_double(trim(cell)));
    } catch (const ConfigError&) {
      throw ConfigError(key + ": not a number list: '" + text + "'");
    }
  }
  for (double x : out)
    if (!std::isfinite(x)) throw ConfigError(key + ": values must be finite");
  return out;
}

template <class Int>
Int parse_int(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  Int v{};
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc{} || p != t.data() + t.size() || t.empty()) throw ConfigError(key + ": not an integer: '" + text + "'");
  return v;
}

inline double parse_real(const std::string& key, const std::string& text) {
  try {
    return parse_double(trim(text));
  } catch (const ConfigError&) {
    throw ConfigError(key + ": not a number: '" + text + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

/// Visits every key of a section through typed setters, rejecting unknown ones.
class SectionReader {
 public:
  SectionReader(const boost::property_tree::ptree& root, std::string name) : name_(std::move(name)) {
    if (auto child = root.get_child_optional(name_)) {
      for (const auto& [k, v] : *child) {
        if (!v.empty()) throw ConfigError(name_ + "." + k + ": nested keys are not allowed");
        values_[k] = v.data();
      }
    }
  }

  template <class F>
  void key(const std::string& k, F&& setter) {
    known_.insert(k);
    if (auto it = values_.find(k); it != values_.end()) setter(name_ + "." + k, it->second);
  }

  void finish() const {
    for (const auto& [k, _] : values_)
      if (!known_.count(k)) throw ConfigError("unknown key " + name_ + "." + k);
  }

 private:
  std::string name_;
  std::map<std::string, std::string> values_;
  std::set<std::string> known_;
};

}  // namespace detail

inline ScenarioConfig scenario_from_ptree(const boost::property_tree::ptree& root) {
  static const std::set<std::string> sections{"instance", "run", "init", "output", "bounds"};
  for (const auto& [name, child] : root) {
    if (!sections.count(name)) throw ConfigError("unknown section [" + name + "]");
    if (child.empty() && !child.data().empty()) throw ConfigError("key '" + name + "' outside a section");
  }
  using detail::parse_bool, detail::parse_int, detail::parse_list, detail::parse_real, detail::trim;
  ScenarioConfig c;
  auto real = [](double& dst) { return [&dst](const std::string& k, const std::string& v) { dst = parse_real(k, v); }; };
  auto list = [](Vec& dst) { return [&dst](const std::string& k, const std::string& v) { dst = parse_list(k, v); }; };
  auto text = [](std::string& dst) { return [&dst](const std::string&, const std::string& v) { dst = trim(v); }; };
  auto size = [](std::size_t& dst) {
    return [&dst](const std::string& k, const std::string& v) { dst = parse_int<std::size_t>(k, v); };
  };
  auto integer = [](long& dst) { return [&dst](const std::string& k, const std::string& v) { dst = parse_int<long>(k, v); }; };

  detail::SectionReader in(root, "instance");
  auto& I = c.instance;
  in.key("n", size(I.n));
  in.key("m", size(I.m));
  in.key("accuracy", text(I.accuracy));
  in.key("theta", list(I.theta));
  in.key("r", list(I.r));
  in.key("sigma0", real(I.sigma0));
  in.key("q", list(I.q));
  in.key("alpha", real(I.alpha));
  in.key("rho", real(I.rho));
  in.key("kappa", real(I.kappa));
  in.key("direction", list(I.direction));
  in.key("curvature", real(I.curvature));
  in.key("features", size(I.features));
  in.key("classes", size(I.classes));
  in.key("per_agent_size", size(I.per_agent_size));
  in.key("test_size", size(I.test_size));
  in.key("separation", real(I.separation));
  in.key("cost", text(I.cost));
  in.key("cost_coefficients", text(I.cost_coefficients));
  in.key("s_max", list(I.s_max));
  in.key("payment", text(I.payment));
  in.key("beta", real(I.beta));
  in.finish();

  detail::SectionReader run(root, "run");
  auto& R = c.run;
  run.key("algorithm", text(R.algorithm));
  run.key("gamma", real(R.gamma));
  run.key("eta", real(R.eta));
  run.key("T", integer(R.T));
  run.key("eps", real(R.eps));
  run.key("eps_s", real(R.eps_s));
  run.key("phase1_cap", integer(R.phase1_cap));
  run.key("seed", [&](const std::string& k, const std::string& v) { R.seed = parse_int<std::uint64_t>(k, v); });
  run.key("updater", text(R.updater));
  run.key("gradient_point", text(R.gradient_point));
  run.key("beta_check", [&](const std::string& k, const std::string& v) { R.beta_check = parse_bool(k, v); });
  run.finish();

  detail::SectionReader init(root, "init");
  init.key("w0", text(c.init.w0));
  init.key("s0", text(c.init.s0));
  init.finish();

  detail::SectionReader out(root, "output");
  out.key("directory", text(c.output.directory));
  out.key("formats", text(c.output.formats));
  out.finish();

  detail::SectionReader bd(root, "bounds");
  auto& B = c.bounds;
  bd.key("source", text(B.source));
  bd.key("lambda", real(B.lambda));
  bd.key("lambda_tilde", real(B.lambda_tilde));
  bd.key("L", real(B.L));
  bd.key("L_tilde", real(B.L_tilde));
  bd.key("P", real(B.P));
  bd.key("P_tilde", real(B.P_tilde));
  bd.key("M", real(B.M));
  bd.key("nu", real(B.nu));
  bd.key("samples", size(B.samples));
  bd.key("radius", real(B.radius));
  bd.key("fd_step", real(B.fd_step));
  bd.finish();
  return c;
}

inline boost::property_tree::ptree read_ini_tree(std::istream& in) {
  boost::property_tree::ptree pt;
  try {
    boost::property_tree::ini_parser::read_ini(in, pt);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
  }
  return pt;
}

/// Applies "section.key=value" overrides.
inline void apply_overrides(boost::property_tree::ptree& pt, const std::vector<std::string>& sets) {
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    const auto dot = s.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq)
      throw ConfigError("--set expects section.key=value, got '" + s + "'");
    pt.put(detail::trim(s.substr(0, eq)), detail::trim(s.substr(eq + 1)));
  }
}

inline ScenarioConfig parse_scenario(const std::string& text, const std::vector<std::string>& overrides = {}) {
  std::istringstream in(text);
  auto pt = read_ini_tree(in);
  apply_overrides(pt, overrides);
  return scenario_from_ptree(pt);
}

inline ScenarioConfig load_scenario(const std::string& path, const std::vector<std::string>& overrides = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str(), overrides);
}

inline std::string render_scenario(const ScenarioConfig& c) {
  using detail::render_list;
  const auto& I = c.instance;
  const auto& R = c.run;
  const auto& B = c.bounds;
  std::ostringstream o;
  o << "[instance]\n"
    << "n = " << I.n << "\nm = " << I.m << "\naccuracy = " << I.accuracy << "\ntheta = " << render_list(I.theta)
    << "\nr = " << render_list(I.r) << "\nsigma0 = " << format_double(I.sigma0) << "\nq = " << render_list(I.q)
    << "\nalpha = " << format_double(I.alpha) << "\nrho = " << format_double(I.rho)
    << "\nkappa = " << format_double(I.kappa) << "\ndirection = " << render_list(I.direction)
    << "\ncurvature = " << format_double(I.curvature) << "\nfeatures = " << I.features << "\nclasses = " << I.classes
    << "\nper_agent_size = " << I.per_agent_size << "\ntest_size = " << I.test_size
    << "\nseparation = " << format_double(I.separation) << "\ncost = " << I.cost
    << "\ncost_coefficients = " << I.cost_coefficients << "\ns_max = " << render_list(I.s_max)
    << "\npayment = " << I.payment << "\nbeta = " << format_double(I.beta) << "\n\n";
  o << "[run]\n"
    << "algorithm = " << R.algorithm << "\ngamma = " << format_double(R.gamma) << "\neta = " << format_double(R.eta)
    << "\nT = " << R.T << "\neps = " << format_double(R.eps) << "\neps_s = " << format_double(R.eps_s)
    << "\nphase1_cap = " << R.phase1_cap << "\nseed = " << R.seed << "\nupdater = " << R.updater
    << "\ngradient_point = " << R.gradient_point << "\nbeta_check = " << (R.beta_check ? "true" : "false") << "\n\n";
  o << "[init]\nw0 = " << c.init.w0 << "\ns0 = " << c.init.s0 << "\n\n";
  o << "[output]\ndirectory = " << c.output.directory << "\nformats = " << c.output.formats << "\n\n";
  o << "[bounds]\nsource = " << B.source << "\nlambda = " << format_double(B.lambda)
    << "\nlambda_tilde = " << format_double(B.lambda_tilde) << "\nL = " << format_double(B.L)
    << "\nL_tilde = " << format_double(B.L_tilde) << "\nP = " << format_double(B.P)
    << "\nP_tilde = " << format_double(B.P_tilde) << "\nM = " << format_double(B.M) << "\nnu = " << format_double(B.nu)
    << "\nsamples = " << B.samples << "\nradius = " << format_double(B.radius)
    << "\nfd_step = " << format_double(B.fd_step) << "\n";
  return o.str();
}

// ---------------------------------------------------------------------------
// Building runnable objects
// ---------------------------------------------------------------------------

struct Scenario {
  ScenarioConfig config;
  std::shared_ptr<const GameInstance> game;
  std::shared_ptr<const EmpiricalAccuracy> empirical;  // set for the empirical family
  Algorithm algorithm = Algorithm::Upbred;
  RunConfig run;
  ModelParams w0;
  StrategyProfile s0;
};

namespace detail {

/// Independent deterministic stream for each seeded quantity.
inline Rng stream(std::uint64_t seed, std::uint64_t purpose) { return Rng(seed ^ (0x9E3779B97F4A7C15ull * (purpose + 1))); }

enum Stream : std::uint64_t { kCostStream = 1, kW0Stream = 2, kS0Stream = 3, kDataStream = 4 };

inline Vec broadcast(const std::string& key, const Vec& v, std::size_t n) {
  if (v.size() == 1) return Vec(n, v[0]);
  if (v.size() != n) throw ConfigError(key + ": expected 1 or " + std::to_string(n) + " values, got " + std::to_string(v.size()));
  return v;
}

/// "a:b:c" -> {"a", "b", "c"}.
inline std::vector<std::string> split_colon(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ':')) out.push_back(trim(part));
  return out;
}

inline std::vector<CostModel> build_costs(const ScenarioConfig::Instance& I, std::uint64_t seed) {
  const std::string key = "instance.cost_coefficients";
  std::vector<CostModel> costs;
  const std::string spec = trim(I.cost_coefficients);
  if (I.cost == "linear") {
    Vec coeffs;
    if (spec.rfind("uniform", 0) == 0) {
      const auto parts = split_colon(spec);
      if (parts.size() != 3) throw ConfigError(key + ": expected uniform:lo:hi");
      const double lo = parse_real(key, parts[1]), hi = parse_real(key, parts[2]);
      if (!(lo >= 0.0 && hi >= lo)) throw ConfigError(key + ": need 0 <= lo <= hi");
      auto rng = stream(seed, kCostStream);
      for (std::size_t i = 0; i < I.n; ++i) coeffs.push_back(rng.uniform(lo, hi));
    } else {
      coeffs = broadcast(key, parse_list(key, spec), I.n);
    }
    for (double c : coeffs) {
      try {
        costs.push_back(CostModel::linear(c));
      } catch (const ConfigError& e) {
        throw ConfigError(key + ": " + e.what());
      }
    }
  } else if (I.cost == "polynomial") {
    std::vector<Vec> groups;
    std::stringstream ss(spec);
    std::string g;
    while (std::getline(ss, g, ';')) groups.push_back(parse_list(key, g));
    if (groups.size() == 1) groups.assign(I.n, groups[0]);
    if (groups.size() != I.n) throw ConfigError(key + ": expected 1 or n ';'-separated coefficient groups");
    for (auto& grp : groups) {
      try {
        costs.push_back(CostModel::polynomial(grp));
      } catch (const ConfigError& e) {
        throw ConfigError(key + ": " + e.what());
      }
    }
  } else {
    throw ConfigError("instance.cost: expected linear or polynomial, got '" + I.cost + "'");
  }
  return costs;
}

inline Vec build_w0(const std::string& spec, std::size_t m, std::uint64_t seed) {
  const std::string key = "init.w0";
  if (spec == "zeros") return Vec(m, 0.0);
  if (spec.rfind("random", 0) == 0) {
    const auto parts = split_colon(spec);
    const double radius = parts.size() == 2 ? parse_real(key, parts[1]) : 1.0;
    if (parts.size() > 2 || !(radius >= 0.0)) throw ConfigError(key + ": expected random or random:radius");
    auto rng = stream(seed, kW0Stream);
    Vec w(m);
    for (auto& x : w) x = rng.uniform(-radius, radius);
    return w;
  }
  return broadcast(key, parse_list(key, spec), m);
}

inline Vec build_s0(const std::string& spec, const Vec& s_max, std::uint64_t seed) {
  const std::string key = "init.s0";
  const std::size_t n = s_max.size();
  if (spec == "uniform") {
    // integer draw from [s_max/3, 2 s_max/3]
    auto rng = stream(seed, kS0Stream);
    Vec s(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto lo = static_cast<std::int64_t>(std::ceil(s_max[i] / 3.0));
      const auto hi = static_cast<std::int64_t>(std::floor(2.0 * s_max[i] / 3.0));
      s[i] = hi >= lo ? static_cast<double>(rng.integer(lo, hi)) : s_max[i] / 2.0;
    }
    return s;
  }
  if (spec.rfind("fraction", 0) == 0) {
    const auto parts = split_colon(spec);
    if (parts.size() != 2) throw ConfigError(key + ": expected fraction:x");
    const double f = parse_real(key, parts[1]);
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError(key + ": fraction must lie in [0, 1]");
    Vec s(n);
    for (std::size_t i = 0; i < n; ++i) s[i] = f * s_max[i];
    return s;
  }
  if (spec == "max") return s_max;
  return broadcast(key, parse_list(key, spec), n);
}

}  // namespace detail

inline Scenario build_scenario(const ScenarioConfig& c) {
  using detail::broadcast;
  const auto& I = c.instance;
  if (I.n < 1) throw ConfigError("instance.n must be >= 1");
  Scenario sc;
  sc.config = c;

  try {
    sc.algorithm = parse_algorithm(c.run.algorithm);
  } catch (const ConfigError&) {
    throw ConfigError("run.algorithm: expected upbred, 2p-upbred, fedavg or fedavg-strategic, got '" + c.run.algorithm + "'");
  }
  auto& R = sc.run;
  R.gamma = c.run.gamma;
  R.eta = c.run.eta;
  R.T = c.run.T;
  R.eps = c.run.eps;
  R.eps_s = c.run.eps_s;
  R.phase1_cap = c.run.phase1_cap;
  R.seed = c.run.seed;
  if (c.run.updater != "analytic" && c.run.updater != "empirical")
    throw ConfigError("run.updater: expected analytic or empirical, got '" + c.run.updater + "'");
  R.updater = c.run.updater == "analytic" ? Updater::Analytic : Updater::Empirical;
  if (c.run.gradient_point != "updated-own" && c.run.gradient_point != "current")
    throw ConfigError("run.gradient_point: expected updated-own or current, got '" + c.run.gradient_point + "'");
  R.gradient_point = c.run.gradient_point == "current" ? GradientPoint::Current : GradientPoint::UpdatedOwn;
  R.enforce_beta_threshold = c.run.beta_check;
  try {
    R.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(e.what());
  }

  const Vec s_max = broadcast("instance.s_max", I.s_max, I.n);
  for (double x : s_max)
    if (!(x > 0.0)) throw ConfigError("instance.s_max: values must be > 0");

  std::shared_ptr<const AccuracyModel> acc;
  if (I.accuracy == "quadratic") {
    if (I.theta.empty()) throw ConfigError("instance.theta: needs at least one value");
    if (!(I.sigma0 >= 0.0)) throw ConfigError("instance.sigma0: must be >= 0");
    const Vec r = I.r.empty() ? Vec(I.n, 1.0) : broadcast("instance.r", I.r, I.n);
    acc = std::make_shared<QuadraticAccuracy>(I.theta, r, I.sigma0);
  } else if (I.accuracy == "coupled") {
    if (I.theta.empty()) throw ConfigError("instance.theta: needs at least one value");
    CoupledQuadraticAccuracy::Params p;
    p.r = I.r.empty() ? Vec(I.n, 0.0) : broadcast("instance.r", I.r, I.n);
    p.q = broadcast("instance.q", I.q, I.n);
    p.alpha = I.alpha;
    p.rho = I.rho;
    p.kappa = I.kappa;
    p.direction = broadcast("instance.direction", I.direction, I.theta.size());
    p.theta = I.theta;
    p.curvature = I.curvature;
    acc = std::make_shared<CoupledQuadraticAccuracy>(p);
  } else if (I.accuracy == "empirical") {
    if (I.classes < 2) throw ConfigError("instance.classes: must be >= 2");
    if (I.features < 1) throw ConfigError("instance.features: must be >= 1");
    if (!(I.separation > 0.0)) throw ConfigError("instance.separation: must be > 0");
    if (I.test_size < 1) throw ConfigError("instance.test_size: must be >= 1");
    double largest = 0.0;
    for (double x : s_max) largest = std::max(largest, x);
    const auto needed = static_cast<std::size_t>(std::ceil(largest));
    const std::size_t per_agent = I.per_agent_size ? I.per_agent_size : needed;
    if (per_agent < needed) throw ConfigError("instance.per_agent_size: must be >= ceil(max s_max)");
    EmpiricalAccuracy::GeneratorParams gp{c.run.seed ^ detail::kDataStream, per_agent, I.test_size, I.separation};
    std::optional<Vec> r;
    if (!I.r.empty()) r = broadcast("instance.r", I.r, I.n);
    sc.empirical = EmpiricalAccuracy::generate(I.n, LinearClassifierShape{I.features, I.classes}, gp, r);
    acc = sc.empirical;
  } else {
    throw ConfigError("instance.accuracy: expected quadratic, coupled or empirical, got '" + I.accuracy + "'");
  }
  if (I.m != 0 && I.m != acc->dim())
    throw ConfigError("instance.m: " + std::to_string(I.m) + " does not match the family dimension " +
                      std::to_string(acc->dim()));

  PaymentRule rule;
  if (I.payment == "none") {
    rule = PaymentRule::none();
  } else if (I.payment == "linear") {
    if (!(I.beta >= 0.0)) throw ConfigError("instance.beta: must be >= 0");
    if (I.n < 2) throw ConfigError("instance.payment: linear transfers need n >= 2");
    rule = PaymentRule::linear_transfer(I.beta);
  } else {
    throw ConfigError("instance.payment: expected none or linear, got '" + I.payment + "'");
  }

  const auto costs = detail::build_costs(I, c.run.seed);
  const Vec s0 = detail::build_s0(detail::trim(c.init.s0), s_max, c.run.seed);
  for (std::size_t i = 0; i < I.n; ++i)
    if (!(s0[i] >= 0.0 && s0[i] <= s_max[i])) throw ConfigError("init.s0: value for agent " + std::to_string(i) + " outside [0, s_max]");

  std::vector<AgentSpec> agents;
  for (std::size_t i = 0; i < I.n; ++i) agents.push_back({i, s_max[i], costs[i], s0[i]});
  sc.game = std::make_shared<GameInstance>(std::move(agents), acc, rule);
  sc.w0.w = detail::build_w0(detail::trim(c.init.w0), sc.game->m(), c.run.seed);
  sc.s0.s = s0;
  if (sc.algorithm == Algorithm::TwoPhase) validate_two_phase(*sc.game, sc.run);
  return sc;
}

}  // namespace ifl
