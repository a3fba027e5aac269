#pragma once

// Minimal blocking TCP helpers: RAII descriptors, listen/accept/connect and a
// newline-framed reader.

#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <optional>
#include <string>
#include <thread>
#include <utility>

#include "ifl/errors.hpp"
#include "ifl/federation/wire.hpp"

namespace ifl::federation {

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  ~Fd() { reset(); }

  int get() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }
  /// Unblocks readers on other threads without releasing the descriptor.
  void shutdown() const {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
  }

 private:
  int fd_ = -1;
};

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

inline Endpoint parse_endpoint(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos) throw ConfigError("expected host:port, got '" + text + "'");
  Endpoint ep;
  ep.host = text.substr(0, colon);
  if (ep.host.empty()) ep.host = "127.0.0.1";
  const std::string port = text.substr(colon + 1);
  char* end = nullptr;
  const long p = std::strtol(port.c_str(), &end, 10);
  if (port.empty() || *end != '\0' || p < 0 || p > 65535) throw ConfigError("bad port in '" + text + "'");
  ep.port = static_cast<std::uint16_t>(p);
  return ep;
}

namespace detail {

inline std::string sys_error(const std::string& what) { return what + ": " + std::strerror(errno); }

struct AddrInfo {
  addrinfo* head = nullptr;
  ~AddrInfo() {
    if (head) freeaddrinfo(head);
  }
};

inline AddrInfo resolve(const Endpoint& ep, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  AddrInfo ai;
  const std::string port = std::to_string(ep.port);
  const int rc = getaddrinfo(ep.host.empty() ? nullptr : ep.host.c_str(), port.c_str(), &hints, &ai.head);
  if (rc != 0) throw Error("cannot resolve " + ep.host + ": " + gai_strerror(rc));
  return ai;
}

}  // namespace detail

class Listener {
 public:
  explicit Listener(const Endpoint& ep) {
    auto ai = detail::resolve(ep, true);
    for (addrinfo* p = ai.head; p; p = p->ai_next) {
      Fd fd(::socket(p->ai_family, p->ai_socktype, p->ai_protocol));
      if (!fd.valid()) continue;
      int one = 1;
      ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
      if (::bind(fd.get(), p->ai_addr, p->ai_addrlen) == 0 && ::listen(fd.get(), 64) == 0) {
        fd_ = std::move(fd);
        break;
      }
    }
    if (!fd_.valid()) throw Error(detail::sys_error("cannot listen on " + ep.host + ":" + std::to_string(ep.port)));
    sockaddr_storage addr{};
    socklen_t len = sizeof addr;
    ::getsockname(fd_.get(), reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.ss_family == AF_INET6 ? reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port
                                             : reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
  }

  std::uint16_t port() const { return port_; }

  /// nullopt on timeout.
  std::optional<Fd> accept(std::chrono::milliseconds timeout) {
    pollfd pfd{fd_.get(), POLLIN, 0};
    const int rc = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
    if (rc < 0) throw Error(detail::sys_error("poll"));
    if (rc == 0) return std::nullopt;
    Fd conn(::accept(fd_.get(), nullptr, nullptr));
    if (!conn.valid()) throw Error(detail::sys_error("accept"));
    int one = 1;
    ::setsockopt(conn.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    return conn;
  }

 private:
  Fd fd_;
  std::uint16_t port_ = 0;
};

/// Connects, retrying refused connections until `timeout` so agents may start first.
inline Fd connect_to(const Endpoint& ep, std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  for (;;) {
    auto ai = detail::resolve(ep, false);
    for (addrinfo* p = ai.head; p; p = p->ai_next) {
      Fd fd(::socket(p->ai_family, p->ai_socktype, p->ai_protocol));
      if (!fd.valid()) continue;
      if (::connect(fd.get(), p->ai_addr, p->ai_addrlen) == 0) {
        int one = 1;
        ::setsockopt(fd.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        return fd;
      }
    }
    if (std::chrono::steady_clock::now() >= deadline)
      throw Error(detail::sys_error("cannot connect to " + ep.host + ":" + std::to_string(ep.port)));
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
}

inline void send_all(const Fd& fd, const std::string& bytes) {
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    const ssize_t k = ::send(fd.get(), bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
    if (k < 0) {
      if (errno == EINTR) continue;
      throw Error(detail::sys_error("send"));
    }
    sent += static_cast<std::size_t>(k);
  }
}

inline void send_frame(const Fd& fd, const Frame& f) { send_all(fd, encode_frame(f)); }

/// Splits a byte stream into lines; refuses lines above the frame limit.
class LineReader {
 public:
  explicit LineReader(const Fd& fd) : fd_(&fd) {}

  /// nullopt at end of stream.
  std::optional<std::string> next() {
    for (;;) {
      const auto nl = buf_.find('\n', scanned_);
      if (nl != std::string::npos) {
        std::string line = buf_.substr(0, nl);
        buf_.erase(0, nl + 1);
        scanned_ = 0;
        return line;
      }
      scanned_ = buf_.size();
      if (buf_.size() > kMaxFrameBytes) throw ProtocolError("frame exceeds 16 MiB", consumed_ + kMaxFrameBytes);
      char chunk[65536];
      const ssize_t k = ::recv(fd_->get(), chunk, sizeof chunk, 0);
      if (k < 0) {
        if (errno == EINTR) continue;
        return std::nullopt;
      }
      if (k == 0) return std::nullopt;
      buf_.append(chunk, static_cast<std::size_t>(k));
    }
  }

  std::optional<Frame> next_frame() {
    auto line = next();
    if (!line) return std::nullopt;
    const std::size_t at = consumed_;
    consumed_ += line->size() + 1;
    try {
      return decode_frame(*line);
    } catch (const ProtocolError& e) {
      throw ProtocolError("malformed frame: " + e.reason(), at + e.byte_offset());
    }
  }

 private:
  const Fd* fd_;
  std::string buf_;
  std::size_t scanned_ = 0;
  std::size_t consumed_ = 0;
};

}  // namespace ifl::federation
