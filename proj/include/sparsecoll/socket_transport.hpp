// Copyright 2026 The sparsecoll Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Loopback TCP backend. Each rank listens on its own 127.0.0.1 port and
// holds one outgoing connection per peer. Frames are a u32 length prefix
// followed by the payload. A reader thread per rank drains its inbound
// sockets into the shared queues, so senders never block on a peer that is
// itself sending.

#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <string>
#include <thread>
#include <vector>

#include "sparsecoll/transport.hpp"

namespace sparsecoll {

namespace detail {

inline void write_all(int fd, const std::uint8_t* data, std::size_t n) {
  while (n > 0) {
    const auto w = ::send(fd, data, n, MSG_NOSIGNAL);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw TransportError(std::string("socket send: ") + std::strerror(errno));
    }
    data += w;
    n -= static_cast<std::size_t>(w);
  }
}

// False on orderly EOF before the first byte.
inline bool read_all(int fd, std::uint8_t* data, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    const auto r = ::recv(fd, data + got, n - got, 0);
    if (r == 0) {
      if (got == 0) return false;
      throw TransportError("socket closed mid-frame");
    }
    if (r < 0) {
      if (errno == EINTR) continue;
      throw TransportError(std::string("socket recv: ") + std::strerror(errno));
    }
    got += static_cast<std::size_t>(r);
  }
  return true;
}

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
  ~Fd() { reset(); }
  int get() const { return fd_; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

}  // namespace detail

class SocketWorld final : public World {
 public:
  explicit SocketWorld(int size, TransportOptions options = {}) : World(size, options) {
    const auto p = static_cast<std::size_t>(size);
    std::vector<detail::Fd> listeners(p);
    std::vector<std::uint16_t> ports(p);
    for (std::size_t r = 0; r < p; ++r) {
      listeners[r] = detail::Fd(::socket(AF_INET, SOCK_STREAM, 0));
      if (listeners[r].get() < 0) throw TransportError("socket() failed");
      sockaddr_in addr{};
      addr.sin_family = AF_INET;
      addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
      addr.sin_port = 0;
      if (::bind(listeners[r].get(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 ||
          ::listen(listeners[r].get(), size) != 0)
        throw TransportError(std::string("bind/listen: ") + std::strerror(errno));
      socklen_t len = sizeof addr;
      ::getsockname(listeners[r].get(), reinterpret_cast<sockaddr*>(&addr), &len);
      ports[r] = ntohs(addr.sin_port);
    }

    out_.resize(p * p);
    in_.resize(p);
    for (std::size_t dst = 0; dst < p; ++dst) {
      for (std::size_t src = 0; src < p; ++src) {
        if (src == dst) continue;
        detail::Fd fd(::socket(AF_INET, SOCK_STREAM, 0));
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
        addr.sin_port = htons(ports[dst]);
        if (::connect(fd.get(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
          throw TransportError(std::string("connect: ") + std::strerror(errno));
        int one = 1;
        ::setsockopt(fd.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        const auto hello = static_cast<std::uint32_t>(src);
        detail::write_all(fd.get(), reinterpret_cast<const std::uint8_t*>(&hello), sizeof hello);
        out_[src * p + dst] = std::move(fd);
      }
      for (std::size_t i = 0; i + 1 < p; ++i) {
        detail::Fd conn(::accept(listeners[dst].get(), nullptr, nullptr));
        if (conn.get() < 0) throw TransportError("accept failed");
        std::uint32_t hello = 0;
        if (!detail::read_all(conn.get(), reinterpret_cast<std::uint8_t*>(&hello), sizeof hello) ||
            hello >= p)
          throw TransportError("bad handshake");
        in_[dst].push_back({static_cast<int>(hello), std::move(conn)});
      }
    }

    int pipefd[2];
    if (::pipe(pipefd) != 0) throw TransportError("pipe failed");
    wake_read_ = detail::Fd(pipefd[0]);
    wake_write_ = detail::Fd(pipefd[1]);
    for (std::size_t r = 0; r < p; ++r) readers_.emplace_back([this, r] { read_loop(static_cast<int>(r)); });
  }

  ~SocketWorld() override {
    const char b = 0;
    [[maybe_unused]] auto w = ::write(wake_write_.get(), &b, 1);
    for (auto& t : readers_) t.join();
  }

  const char* backend_name() const override { return "socket"; }

 protected:
  void transmit(int src, int dst, Bytes payload) override {
    const auto p = static_cast<std::size_t>(size());
    auto& fd = out_[static_cast<std::size_t>(src) * p + static_cast<std::size_t>(dst)];
    Bytes frame;
    frame.reserve(4 + payload.size());
    ByteWriter w(frame);
    w.put(static_cast<std::uint32_t>(payload.size()));
    w.put_bytes(payload);
    detail::write_all(fd.get(), frame.data(), frame.size());
  }

 private:
  struct Inbound {
    int src;
    detail::Fd fd;
  };

  void read_loop(int rank) {
    auto& conns = in_[static_cast<std::size_t>(rank)];
    std::vector<pollfd> fds;
    fds.push_back({wake_read_.get(), POLLIN, 0});
    for (auto& c : conns) fds.push_back({c.fd.get(), POLLIN, 0});
    try {
      while (true) {
        if (::poll(fds.data(), fds.size(), -1) < 0) {
          if (errno == EINTR) continue;
          throw TransportError("poll failed");
        }
        if (fds[0].revents) return;
        for (std::size_t i = 1; i < fds.size(); ++i) {
          if (!(fds[i].revents & (POLLIN | POLLHUP | POLLERR))) continue;
          std::uint32_t len = 0;
          if (!detail::read_all(fds[i].fd, reinterpret_cast<std::uint8_t*>(&len), sizeof len)) {
            fds[i].fd = -1;
            continue;
          }
          Bytes payload(len);
          if (len > 0 && !detail::read_all(fds[i].fd, payload.data(), len))
            throw TransportError("socket closed mid-frame");
          deliver(conns[i - 1].src, rank, std::move(payload));
        }
      }
    } catch (const std::exception& e) {
      abort(e.what());
    }
  }

  std::vector<detail::Fd> out_;
  std::vector<std::vector<Inbound>> in_;
  detail::Fd wake_read_;
  detail::Fd wake_write_;
  std::vector<std::thread> readers_;
};

}  // namespace sparsecoll
