#pragma once

#include <sys/socket.h>
#include <sys/time.h>

#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

#include "ifl/dynamics.hpp"
#include "ifl/federation/socket.hpp"
#include "ifl/federation/wire.hpp"

namespace ifl::federation {

struct CenterOptions {
  Endpoint listen;
  std::chrono::milliseconds round_timeout{30000};
  std::chrono::milliseconds accept_timeout{30000};
  /// Called once the listener is bound, with the actual port (useful with port 0).
  std::function<void(std::uint16_t)> on_listening;
};

namespace detail {

inline void set_receive_timeout(const Fd& fd, std::chrono::milliseconds t) {
  timeval tv{};
  tv.tv_sec = static_cast<time_t>(t.count() / 1000);
  tv.tv_usec = static_cast<suseconds_t>((t.count() % 1000) * 1000);
  ::setsockopt(fd.get(), SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
}

}  // namespace detail

/// Exchange over one TCP stream per agent. A reader thread per agent feeds a single
/// queue; exchange() is the round barrier.
class SocketExchange final : public RoundExchange {
 public:
  SocketExchange(const GameInstance& g, const RunConfig& cfg, Algorithm alg, CenterOptions opts)
      : g_(g), cfg_(cfg), opts_(std::move(opts)), listener_(opts_.listen),
        run_id_(derive_run_id(g.digest(), cfg.seed, alg)) {
    conns_.resize(g.n());
    if (opts_.on_listening) opts_.on_listening(listener_.port());
  }

  ~SocketExchange() override { close_all(); }

  std::uint16_t port() const { return listener_.port(); }

  /// Accepts connections until every agent id has completed the hello handshake.
  void accept_agents() {
    const auto deadline = std::chrono::steady_clock::now() + opts_.accept_timeout;
    std::size_t joined = 0;
    while (joined < g_.n()) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) break;
      auto fd = listener_.accept(left);
      if (!fd) break;
      auto conn = std::make_unique<Conn>(std::move(*fd));
      if (auto id = handshake(*conn)) {
        conns_[*id] = std::move(conn);
        ++joined;
      }
    }
    if (joined < g_.n())
      throw Error("only " + std::to_string(joined) + " of " + std::to_string(g_.n()) + " agents connected");
    Hello ack;
    ack.digest = g_.digest();
    ack.run_id = run_id_;
    ack.config = cfg_;
    for (std::size_t i = 0; i < conns_.size(); ++i) {
      detail::set_receive_timeout(conns_[i]->fd, std::chrono::milliseconds(0));
      send_frame(conns_[i]->fd, ack);
      conns_[i]->reader = std::thread([this, i] { read_loop(i); });
    }
  }

  std::vector<AgentReport> exchange(const RoundBroadcast& b) override {
    for (std::size_t i = 0; i < conns_.size(); ++i) {
      try {
        send_frame(conns_[i]->fd, b);
      } catch (const std::exception& e) {
        throw AgentFailure(i, e.what());
      }
    }
    std::vector<std::optional<AgentReport>> slots(conns_.size());
    std::size_t have = 0;
    const auto deadline = std::chrono::steady_clock::now() + opts_.round_timeout;
    std::unique_lock lock(mu_);
    while (have < slots.size()) {
      if (!cv_.wait_until(lock, deadline, [&] { return !events_.empty(); })) {
        std::size_t missing = 0;
        while (slots[missing]) ++missing;
        throw AgentFailure(missing, "no report within " + std::to_string(opts_.round_timeout.count()) + " ms");
      }
      Event ev = std::move(events_.front());
      events_.pop_front();
      if (!ev.frame) throw AgentFailure(ev.agent, ev.error);
      if (auto* err = std::get_if<ErrorFrame>(&*ev.frame)) throw AgentFailure(ev.agent, err->message);
      auto* rep = std::get_if<AgentReport>(&*ev.frame);
      if (!rep) throw AgentFailure(ev.agent, "unexpected " + frame_type(*ev.frame) + " frame");
      if (rep->agent_id != ev.agent || rep->t != b.t || rep->run_id != b.run_id || slots[ev.agent])
        throw AgentFailure(ev.agent, "report does not match the round");
      slots[ev.agent] = std::move(*rep);
      ++have;
    }
    std::vector<AgentReport> out;
    for (auto& s : slots) out.push_back(std::move(*s));
    return out;
  }

  void finish() override { close_all(); }

 private:
  struct Conn {
    explicit Conn(Fd f) : fd(std::move(f)), reader_buf(fd) {}
    Fd fd;
    LineReader reader_buf;
    std::thread reader;
  };

  struct Event {
    std::size_t agent = 0;
    std::optional<Frame> frame;  // empty: stream closed or broken
    std::string error;
  };

  std::optional<std::size_t> handshake(Conn& c) {
    detail::set_receive_timeout(c.fd, opts_.accept_timeout);
    auto reject = [&](const std::string& why) -> std::optional<std::size_t> {
      try {
        send_frame(c.fd, ErrorFrame{why});
      } catch (const std::exception&) {
      }
      return std::nullopt;
    };
    std::optional<Frame> f;
    try {
      f = c.reader_buf.next_frame();
    } catch (const ProtocolError& e) {
      return reject(e.what());
    }
    if (!f) return std::nullopt;
    const auto* h = std::get_if<Hello>(&*f);
    if (!h) return reject("expected hello");
    if (h->protocol_version != kProtocolVersion) return reject("unsupported protocol version");
    if (h->digest != g_.digest()) return reject("instance digest mismatch");
    if (!h->agent_id || *h->agent_id >= g_.n()) return reject("bad agent id");
    if (conns_[*h->agent_id]) return reject("agent id already connected");
    return *h->agent_id;
  }

  void read_loop(std::size_t i) {
    for (;;) {
      Event ev{i, std::nullopt, "disconnected"};
      try {
        ev.frame = conns_[i]->reader_buf.next_frame();
      } catch (const std::exception& e) {
        ev.error = e.what();
      }
      const bool done = !ev.frame;
      {
        std::lock_guard lock(mu_);
        events_.push_back(std::move(ev));
      }
      cv_.notify_one();
      if (done) return;
    }
  }

  void close_all() {
    if (closed_) return;
    closed_ = true;
    for (auto& c : conns_) {
      if (!c) continue;
      try {
        send_frame(c->fd, Bye{});
      } catch (const std::exception&) {
      }
      c->fd.shutdown();
    }
    for (auto& c : conns_)
      if (c && c->reader.joinable()) c->reader.join();
  }

  const GameInstance& g_;
  RunConfig cfg_;
  CenterOptions opts_;
  Listener listener_;
  std::string run_id_;
  std::vector<std::unique_ptr<Conn>> conns_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Event> events_;
  bool closed_ = false;
};

/// Drives `alg` over sockets; the trace matches the in-process run.
inline Trace serve_center(const GameInstance& g, const RunConfig& cfg, Algorithm alg, const ModelParams& w0,
                          const StrategyProfile& s0, CenterOptions opts) {
  cfg.validate();
  if (alg == Algorithm::TwoPhase) validate_two_phase(g, cfg);
  check_params(g, w0.w);
  check_profile(g, s0.s);
  SocketExchange ex(g, cfg, alg, std::move(opts));
  ex.accept_agents();
  return run_dynamic(alg, g, cfg, w0, s0, ex);
}

}  // namespace ifl::federation
