// Copyright (c) 2026 The faasml Authors
// SPDX-License-Identifier: Apache-2.0
//
// VM-hosted parameter server for the hybrid design: a standalone TCP
// server plus a blocking client, speaking length-prefixed binary frames.
//
//   u32 length (bytes after this field) | u8 opcode | u32 epoch | u32 iter | payload
//
// PUSH and MODEL carry an UpdateBlob, ERR carries a UTF-8 message, the
// rest are empty. The server applies one averaged gradient step per
// (epoch, iter) once every expected push has arrived, and only then ACKs,
// so pushes double as a barrier. MODEL frames report the model version in
// their iter field.

#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "faasml/clock.hpp"
#include "faasml/collectives.hpp"
#include "faasml/error.hpp"
#include "faasml/model_core.hpp"
#include "faasml/storage.hpp"

namespace faasml {

enum class PsOpcode : std::uint8_t { push = 1, pull = 2, model = 3, ack = 4, err = 5 };

struct PsFrame {
  PsOpcode opcode = PsOpcode::ack;
  std::uint32_t epoch = 0;
  std::uint32_t iter = 0;
  Bytes payload;
  friend bool operator==(const PsFrame&, const PsFrame&) = default;
};

inline constexpr std::size_t kPsFrameHeaderBytes = 9;  // opcode + epoch + iter
inline constexpr std::uint32_t kMaxPsFrameBytes = 1u << 30;

inline bool known_opcode(std::uint8_t op) { return op >= 1 && op <= 5; }

inline Bytes encode_frame(const PsFrame& f) {
  Bytes out;
  out.reserve(4 + kPsFrameHeaderBytes + f.payload.size());
  wire::put_u32(out, static_cast<std::uint32_t>(kPsFrameHeaderBytes + f.payload.size()));
  wire::put_u8(out, static_cast<std::uint8_t>(f.opcode));
  wire::put_u32(out, f.epoch);
  wire::put_u32(out, f.iter);
  out += f.payload;
  return out;
}

/// Decodes the bytes that follow the length field.
inline PsFrame decode_frame_body(std::string_view body) {
  wire::Reader in(body, "ps frame");
  PsFrame f;
  const auto op = in.u8();
  if (!known_opcode(op)) throw Error(ErrorCode::format, "unknown ps opcode " + std::to_string(op));
  f.opcode = static_cast<PsOpcode>(op);
  f.epoch = in.u32();
  f.iter = in.u32();
  f.payload = Bytes(in.take(in.remaining()));
  return f;
}

inline PsFrame decode_frame(std::string_view bytes) {
  wire::Reader in(bytes, "ps frame");
  const auto len = in.u32();
  if (len != in.remaining()) throw Error(ErrorCode::format, "ps frame length field disagrees with payload");
  return decode_frame_body(bytes.substr(4));
}

/// Model plus BSP bookkeeping. Mutation is serialized by one mutex.
class ParameterServerState {
 public:
  ParameterServerState(std::size_t dim, double eta, std::size_t expected_pushes)
      : model_(dim, 0.0), eta_(eta), expected_(expected_pushes) {
    if (expected_ == 0) throw Error(ErrorCode::invalid_argument, "parameter server expects >= 1 push per round");
    if (!(eta_ > 0.0)) throw Error(ErrorCode::invalid_argument, "parameter server learning rate must be > 0");
  }

  std::size_t dim() const noexcept { return model_.size(); }

  /// Records one push; applies the step when it completes the round.
  void push(RoundId round, const Update& grad) {
    std::lock_guard lock(mu_);
    if (grad.values.size() != model_.size()) {
      throw Error(ErrorCode::dimension_mismatch, "dim mismatch: server holds " + std::to_string(model_.size()) +
                                                     ", push has " + std::to_string(grad.values.size()));
    }
    if (last_applied_ && round <= *last_applied_) {
      throw Error(ErrorCode::channel, "push for a round that was already applied");
    }
    auto& p = pending_[round];
    if (p.sum.empty()) p.sum.assign(model_.size(), 0.0);
    for (std::size_t j = 0; j < model_.size(); ++j) p.sum[j] += grad.weight * grad.values[j];
    p.weight += grad.weight;
    p.count += 1;
    if (p.count == expected_) {
      if (p.weight > 0.0) {
        const double step = eta_ / p.weight;
        for (std::size_t j = 0; j < model_.size(); ++j) model_[j] -= step * p.sum[j];
      }
      ++version_;
      last_applied_ = round;
      pending_.erase(round);
      cv_.notify_all();
    }
  }

  bool applied(RoundId round) const {
    std::lock_guard lock(mu_);
    return last_applied_ && round <= *last_applied_;
  }

  /// Blocks until the round is applied or the state is shut down.
  bool wait_applied(RoundId round) {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return shutdown_ || (last_applied_ && round <= *last_applied_); });
    return !shutdown_;
  }

  std::pair<ModelVector, std::uint64_t> snapshot() const {
    std::lock_guard lock(mu_);
    return {model_, version_};
  }

  std::uint64_t version() const {
    std::lock_guard lock(mu_);
    return version_;
  }

  void shutdown() {
    std::lock_guard lock(mu_);
    shutdown_ = true;
    cv_.notify_all();
  }

 private:
  struct Pending {
    ModelVector sum;
    double weight = 0.0;
    std::size_t count = 0;
  };

  mutable std::mutex mu_;
  std::condition_variable cv_;
  ModelVector model_;
  double eta_;
  std::size_t expected_;
  std::map<RoundId, Pending> pending_;
  std::optional<RoundId> last_applied_;
  std::uint64_t version_ = 0;
  bool shutdown_ = false;
};

namespace detail {

inline void send_all(int fd, std::string_view data) {
  while (!data.empty()) {
    const auto n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) throw Error(ErrorCode::channel, std::string("send failed: ") + std::strerror(errno));
    data.remove_prefix(static_cast<std::size_t>(n));
  }
}

// Returns false on orderly close before the first byte.
inline bool recv_all(int fd, char* buf, std::size_t len) {
  std::size_t got = 0;
  while (got < len) {
    const auto n = ::recv(fd, buf + got, len - got, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n == 0 && got == 0) return false;
    if (n <= 0) throw Error(ErrorCode::channel, "connection reset while reading frame");
    got += static_cast<std::size_t>(n);
  }
  return true;
}

inline std::optional<PsFrame> read_frame(int fd) {
  char len_buf[4];
  if (!recv_all(fd, len_buf, 4)) return std::nullopt;
  wire::Reader len_reader(std::string_view(len_buf, 4), "ps frame length");
  const auto len = len_reader.u32();
  if (len < kPsFrameHeaderBytes || len > kMaxPsFrameBytes) {
    throw Error(ErrorCode::format, "ps frame length " + std::to_string(len) + " out of range");
  }
  std::string body(len, '\0');
  if (!recv_all(fd, body.data(), len)) throw Error(ErrorCode::channel, "connection closed mid-frame");
  return decode_frame_body(body);
}

inline void write_frame(int fd, const PsFrame& f) { send_all(fd, encode_frame(f)); }

inline std::pair<std::string, std::uint16_t> split_address(const std::string& address) {
  const auto colon = address.rfind(':');
  if (colon == std::string::npos) return {address, 0};
  const auto port = std::stoul(address.substr(colon + 1));
  if (port > 65535) throw Error(ErrorCode::invalid_argument, "port out of range in '" + address + "'");
  return {address.substr(0, colon), static_cast<std::uint16_t>(port)};
}

}  // namespace detail

/// Standalone parameter server on a TCP socket; one thread per client.
class TcpPsServer {
 public:
  TcpPsServer(std::size_t dim, double eta, std::size_t expected_pushes, const std::string& host = "127.0.0.1",
              std::uint16_t port = 0)
      : state_(dim, eta, expected_pushes) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw Error(ErrorCode::io, "cannot create socket");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
      ::close(listen_fd_);
      throw Error(ErrorCode::invalid_argument, "bind address '" + host + "' is not an IPv4 literal");
    }
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 || ::listen(listen_fd_, 128) != 0) {
      const std::string why = std::strerror(errno);
      ::close(listen_fd_);
      throw Error(ErrorCode::io, "cannot listen on " + host + ":" + std::to_string(port) + ": " + why);
    }
    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    acceptor_ = std::thread([this] { accept_loop(); });
  }

  TcpPsServer(const TcpPsServer&) = delete;
  TcpPsServer& operator=(const TcpPsServer&) = delete;
  ~TcpPsServer() { stop(); }

  std::uint16_t port() const noexcept { return port_; }
  ParameterServerState& state() noexcept { return state_; }

  void stop() {
    if (stopped_.exchange(true)) return;
    state_.shutdown();
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    if (acceptor_.joinable()) acceptor_.join();
    std::vector<std::thread> conns;
    {
      std::lock_guard lock(mu_);
      for (int fd : client_fds_) ::shutdown(fd, SHUT_RDWR);
      conns = std::move(connections_);
    }
    for (auto& t : conns) t.join();
  }

 private:
  void accept_loop() {
    for (;;) {
      const int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) {
        if (errno == EINTR) continue;
        return;
      }
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      std::lock_guard lock(mu_);
      if (stopped_) {
        ::close(fd);
        return;
      }
      client_fds_.insert(fd);
      connections_.emplace_back([this, fd] { serve(fd); });
    }
  }

  void serve(int fd) {
    try {
      while (auto frame = detail::read_frame(fd)) {
        if (!handle(fd, *frame)) break;
      }
    } catch (const Error&) {
      // Malformed frame or dead peer: drop the connection.
    }
    std::lock_guard lock(mu_);
    client_fds_.erase(fd);
    ::close(fd);
  }

  bool handle(int fd, const PsFrame& frame) {
    switch (frame.opcode) {
      case PsOpcode::push: {
        const RoundId round{frame.epoch, frame.iter};
        Update grad;
        try {
          grad = decode_update(frame.payload);
        } catch (const Error&) {
          return false;
        }
        try {
          state_.push(round, grad);
        } catch (const Error& e) {
          const bool dim = e.code() == ErrorCode::dimension_mismatch;
          detail::write_frame(fd, {PsOpcode::err, frame.epoch, frame.iter, dim ? "dim mismatch" : e.what()});
          return true;
        }
        if (!state_.wait_applied(round)) return false;
        detail::write_frame(fd, {PsOpcode::ack, frame.epoch, static_cast<std::uint32_t>(state_.version()), {}});
        return true;
      }
      case PsOpcode::pull: {
        auto [model, version] = state_.snapshot();
        detail::write_frame(fd, {PsOpcode::model, frame.epoch, static_cast<std::uint32_t>(version),
                                 encode_update(model, 0.0)});
        return true;
      }
      default:
        return false;
    }
  }

  ParameterServerState state_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopped_{false};
  std::thread acceptor_;
  std::mutex mu_;
  std::set<int> client_fds_;
  std::vector<std::thread> connections_;
};

/// Starts a server; `bind_address` is "host" or "host:port" (port 0 picks one).
inline std::unique_ptr<TcpPsServer> ps_serve(std::size_t dim, double eta, const std::string& bind_address,
                                             std::size_t expected_pushes = 1) {
  auto [host, port] = detail::split_address(bind_address);
  return std::make_unique<TcpPsServer>(dim, eta, expected_pushes, host, port);
}

/// Blocking single-connection client.
class TcpPsClient {
 public:
  TcpPsClient(const std::string& host, std::uint16_t port) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0 || !res) {
      throw Error(ErrorCode::channel, "cannot resolve parameter server '" + host + "'");
    }
    fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    const bool ok = fd_ >= 0 && ::connect(fd_, res->ai_addr, res->ai_addrlen) == 0;
    ::freeaddrinfo(res);
    if (!ok) {
      if (fd_ >= 0) ::close(fd_);
      throw Error(ErrorCode::channel, "cannot connect to parameter server " + host + ":" + std::to_string(port));
    }
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  }

  TcpPsClient(const TcpPsClient&) = delete;
  TcpPsClient& operator=(const TcpPsClient&) = delete;
  ~TcpPsClient() {
    if (fd_ >= 0) ::close(fd_);
  }

  /// Returns once the server has applied the round this push belongs to.
  void push(const ModelVector& grad, std::uint32_t epoch, std::uint32_t iter, double weight = 1.0) {
    detail::write_frame(fd_, {PsOpcode::push, epoch, iter, encode_update(grad, weight)});
    const auto reply = expect_reply();
    if (reply.opcode != PsOpcode::ack) throw Error(ErrorCode::channel, "expected ACK from parameter server");
  }

  ModelVector pull() {
    detail::write_frame(fd_, {PsOpcode::pull, 0, 0, {}});
    const auto reply = expect_reply();
    if (reply.opcode != PsOpcode::model) throw Error(ErrorCode::channel, "expected MODEL from parameter server");
    last_version_ = reply.iter;
    return decode_update(reply.payload).values;
  }

  /// Model version reported by the most recent pull.
  std::uint32_t last_version() const noexcept { return last_version_; }

 private:
  PsFrame expect_reply() {
    auto reply = detail::read_frame(fd_);
    if (!reply) throw Error(ErrorCode::channel, "parameter server closed the connection");
    if (reply->opcode == PsOpcode::err) throw Error(ErrorCode::channel, "server error: " + reply->payload);
    return *reply;
  }

  int fd_ = -1;
  std::uint32_t last_version_ = 0;
};

/// Worker-side view of the parameter server used by the runtime.
class PsLink {
 public:
  virtual ~PsLink() = default;
  virtual void push(const ModelVector& grad, double weight, RoundId round) = 0;
  virtual ModelVector pull() = 0;
};

class TcpPsLink final : public PsLink {
 public:
  TcpPsLink(const std::string& host, std::uint16_t port) : client_(host, port) {}
  void push(const ModelVector& grad, double weight, RoundId round) override {
    client_.push(grad, static_cast<std::uint32_t>(round.epoch), static_cast<std::uint32_t>(round.iteration), weight);
  }
  ModelVector pull() override { return client_.pull(); }

 private:
  TcpPsClient client_;
};

/// In-process link for simulate mode: same server state, no sockets.
/// Each frame charges the worker the link profile's transfer time, and a
/// push waits on the worker clock until its round is applied.
class SimPsLink final : public PsLink {
 public:
  SimPsLink(ParameterServerState& state, ChannelProfile profile, WorkerClock& clock, double timeout_s = 600.0)
      : state_(&state), profile_(std::move(profile)), clock_(&clock), timeout_s_(timeout_s) {}

  void push(const ModelVector& grad, double weight, RoundId round) override {
    const auto bytes = 4 + kPsFrameHeaderBytes + kUpdateHeaderBytes + 8 * (grad.size() + 1);
    clock_->charge(profile_.transfer_seconds(bytes));
    state_->push(round, Update{grad, weight});
    clock_->notify();
    clock_->wait_until([&] { return state_->applied(round); }, timeout_s_, 0.0, [&] {
      throw StragglerTimeout({}, "parameter server round " + std::to_string(round.epoch) + "/" +
                                      std::to_string(round.iteration) + " never completed");
    });
  }

  ModelVector pull() override {
    auto [model, version] = state_->snapshot();
    const auto bytes = 4 + kPsFrameHeaderBytes + kUpdateHeaderBytes + 8 * (model.size() + 1);
    clock_->charge(profile_.transfer_seconds(bytes));
    return model;
  }

 private:
  ParameterServerState* state_;
  ChannelProfile profile_;
  WorkerClock* clock_;
  double timeout_s_;
};

}  // namespace faasml
