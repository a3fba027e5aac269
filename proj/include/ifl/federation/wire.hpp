#pragma once

// Line-delimited JSON frames for the center/agent protocol.

#include <optional>
#include <string>
#include <string_view>
#include <variant>

#include "ifl/dynamics.hpp"
#include "ifl/errors.hpp"
#include "ifl/trace_io.hpp"
#include "json.hpp"

namespace ifl::federation {

inline constexpr int kProtocolVersion = 1;
inline constexpr std::size_t kMaxFrameBytes = 16u << 20;

/// Sent by an agent (agent_id set) and answered by the center (run_id and config set).
struct Hello {
  int protocol_version = kProtocolVersion;
  std::string digest;
  std::optional<std::size_t> agent_id;
  std::optional<std::string> run_id;
  std::optional<RunConfig> config;

  bool operator==(const Hello&) const = default;
};

struct Bye {
  bool operator==(const Bye&) const = default;
};

struct ErrorFrame {
  std::string message;
  bool operator==(const ErrorFrame&) const = default;
};

using Frame = std::variant<Hello, RoundBroadcast, AgentReport, Bye, ErrorFrame>;

namespace detail {

inline void require_finite(double x) {
  if (!std::isfinite(x)) throw ProtocolError("non-finite number in frame");
}

inline void require_finite(const Vec& v) {
  for (double x : v) require_finite(x);
}

struct ToJson {
  nlohmann::json operator()(const Hello& h) const {
    nlohmann::json j{{"type", "hello"}, {"protocol_version", h.protocol_version}, {"digest", h.digest}};
    if (h.agent_id) j["agent_id"] = *h.agent_id;
    if (h.run_id) j["run_id"] = *h.run_id;
    if (h.config) {
      for (double x : {h.config->gamma, h.config->eta, h.config->eps, h.config->eps_s}) require_finite(x);
      j["config"] = config_json(*h.config);
    }
    return j;
  }
  nlohmann::json operator()(const RoundBroadcast& b) const {
    require_finite(b.w);
    require_finite(b.s);
    return {{"type", "broadcast"}, {"run_id", b.run_id}, {"t", b.t}, {"phase", to_string(b.phase)}, {"w", b.w}, {"s", b.s}};
  }
  nlohmann::json operator()(const AgentReport& r) const {
    nlohmann::json j{{"type", "report"}, {"run_id", r.run_id}, {"t", r.t}, {"agent_id", r.agent_id}};
    if (r.s_next) {
      require_finite(*r.s_next);
      j["s_next"] = *r.s_next;
    }
    if (r.d) {
      require_finite(*r.d);
      j["d"] = *r.d;
    }
    for (double x : {r.diag.accuracy, r.diag.cost, r.diag.payment, r.diag.g}) require_finite(x);
    require_finite(r.diag.grad_w);
    j["diag"] = {{"accuracy", r.diag.accuracy},
                 {"cost", r.diag.cost},
                 {"payment", r.diag.payment},
                 {"g", r.diag.g},
                 {"grad_w", r.diag.grad_w}};
    return j;
  }
  nlohmann::json operator()(const Bye&) const { return {{"type", "bye"}}; }
  nlohmann::json operator()(const ErrorFrame& e) const { return {{"type", "error"}, {"message", e.message}}; }
};

inline Frame from_json(const nlohmann::json& j) {
  const auto type = j.at("type").get<std::string>();
  if (type == "hello") {
    Hello h;
    h.protocol_version = j.at("protocol_version").get<int>();
    h.digest = j.at("digest").get<std::string>();
    if (j.contains("agent_id")) h.agent_id = j.at("agent_id").get<std::size_t>();
    if (j.contains("run_id")) h.run_id = j.at("run_id").get<std::string>();
    if (j.contains("config")) h.config = config_from_json(j.at("config"));
    return h;
  }
  if (type == "broadcast") {
    RoundBroadcast b;
    b.run_id = j.at("run_id").get<std::string>();
    b.t = j.at("t").get<long>();
    b.phase = parse_phase(j.at("phase").get<std::string>());
    b.w = j.at("w").get<Vec>();
    b.s = j.at("s").get<Vec>();
    return b;
  }
  if (type == "report") {
    AgentReport r;
    r.run_id = j.at("run_id").get<std::string>();
    r.t = j.at("t").get<long>();
    r.agent_id = j.at("agent_id").get<std::size_t>();
    if (j.contains("s_next")) r.s_next = j.at("s_next").get<double>();
    if (j.contains("d")) r.d = j.at("d").get<Vec>();
    const auto& d = j.at("diag");
    r.diag.accuracy = d.at("accuracy").get<double>();
    r.diag.cost = d.at("cost").get<double>();
    r.diag.payment = d.at("payment").get<double>();
    r.diag.g = d.at("g").get<double>();
    r.diag.grad_w = d.at("grad_w").get<Vec>();
    return r;
  }
  if (type == "bye") return Bye{};
  if (type == "error") return ErrorFrame{j.at("message").get<std::string>()};
  throw ProtocolError("unknown frame type '" + type + "'");
}

}  // namespace detail

/// One JSON object and a trailing newline. Non-finite numbers are rejected.
inline std::string encode_frame(const Frame& f) {
  std::string line = std::visit(detail::ToJson{}, f).dump();
  line.push_back('\n');
  return line;
}

/// Accepts a line with or without its trailing newline.
inline Frame decode_frame(std::string_view line) {
  if (!line.empty() && line.back() == '\n') line.remove_suffix(1);
  if (line.size() > kMaxFrameBytes) throw ProtocolError("frame exceeds 16 MiB", kMaxFrameBytes);
  if (line.empty()) throw ProtocolError("empty frame", 0);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ProtocolError("malformed JSON", e.byte);
  }
  if (!j.is_object()) throw ProtocolError("frame is not an object", 0);
  try {
    return detail::from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("bad frame field: ") + e.what());
  } catch (const ConfigError& e) {
    throw ProtocolError(e.what());
  }
}

inline std::string frame_type(const Frame& f) {
  static constexpr const char* names[] = {"hello", "broadcast", "report", "bye", "error"};
  return names[f.index()];
}

}  // namespace ifl::federation
