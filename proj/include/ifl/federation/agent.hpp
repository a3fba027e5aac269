#pragma once

#include <chrono>
#include <optional>
#include <string>

#include "ifl/dynamics.hpp"
#include "ifl/federation/socket.hpp"
#include "ifl/federation/wire.hpp"

namespace ifl::federation {

struct AgentOptions {
  Endpoint center;
  std::chrono::milliseconds connect_timeout{30000};
};

struct AgentExit {
  int status = 0;  // 0 after bye, 2 otherwise
  std::string message;
  long rounds = 0;
};

/// Agent loop: hello, then one report per broadcast until bye. Any failure is reported
/// to the center as an error frame before disconnecting.
inline AgentExit run_agent(const GameInstance& g, std::size_t agent_id, const AgentOptions& opts) {
  if (agent_id >= g.n()) throw ConfigError("agent id " + std::to_string(agent_id) + " out of range");
  Fd fd = connect_to(opts.center, opts.connect_timeout);
  LineReader in(fd);
  Hello hello;
  hello.digest = g.digest();
  hello.agent_id = agent_id;
  send_frame(fd, hello);

  AgentExit out;
  auto fail = [&](const std::string& why) {
    try {
      send_frame(fd, ErrorFrame{why});
    } catch (const std::exception&) {
    }
    out.status = 2;
    out.message = why;
    return out;
  };

  std::optional<AgentWorker> worker;
  try {
    auto ack = in.next_frame();
    if (!ack) return {2, "center closed the connection during hello", 0};
    if (auto* err = std::get_if<ErrorFrame>(&*ack)) return {2, "rejected: " + err->message, 0};
    auto* h = std::get_if<Hello>(&*ack);
    if (!h || !h->config) return fail("expected hello with run configuration");
    worker.emplace(g, agent_id, *h->config);
  } catch (const std::exception& e) {
    return fail(e.what());
  }

  for (;;) {
    std::optional<Frame> f;
    try {
      f = in.next_frame();
    } catch (const ProtocolError& e) {
      return fail(std::string("malformed broadcast: ") + e.what());
    }
    if (!f) {
      out.status = 2;
      out.message = "center disconnected";
      return out;
    }
    if (std::holds_alternative<Bye>(*f)) return out;
    auto* b = std::get_if<RoundBroadcast>(&*f);
    if (!b) return fail("unexpected " + frame_type(*f) + " frame");
    try {
      send_frame(fd, worker->respond(*b));
      ++out.rounds;
    } catch (const std::exception& e) {
      return fail(e.what());
    }
  }
}

}  // namespace ifl::federation
