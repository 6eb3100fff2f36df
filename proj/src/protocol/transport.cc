// Copyright 2026 The SAP Fine-Tuning Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "sap/protocol/transport.h"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>

#include "sap/errors.h"
#include "sap/protocol/message.h"

namespace sap::protocol {

namespace {

// ------------------------------------------------------------------ loopback

struct Queue {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::vector<std::uint8_t>> frames;
  bool closed = false;
};

class LoopbackEnd final : public Transport {
 public:
  LoopbackEnd(std::shared_ptr<Queue> in, std::shared_ptr<Queue> out)
      : in_(std::move(in)), out_(std::move(out)) {}
  ~LoopbackEnd() override { close(); }

  void send(const std::vector<std::uint8_t>& frame) override {
    std::lock_guard<std::mutex> lock(out_->mu);
    if (out_->closed) throw TransportError("loopback peer is closed");
    out_->frames.push_back(frame);
    out_->cv.notify_one();
  }

  std::vector<std::uint8_t> receive() override {
    std::unique_lock<std::mutex> lock(in_->mu);
    in_->cv.wait(lock, [&] { return !in_->frames.empty() || in_->closed; });
    if (in_->frames.empty()) throw TransportError("loopback link closed");
    auto frame = std::move(in_->frames.front());
    in_->frames.pop_front();
    return frame;
  }

  void close() override {
    for (auto* q : {in_.get(), out_.get()}) {
      std::lock_guard<std::mutex> lock(q->mu);
      q->closed = true;
      q->cv.notify_all();
    }
  }

 private:
  std::shared_ptr<Queue> in_, out_;
};

// ------------------------------------------------------------------ tcp

std::string errno_text(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

class TcpEnd final : public Transport {
 public:
  explicit TcpEnd(int fd) : fd_(fd) {}
  ~TcpEnd() override {
    if (fd_ >= 0) ::close(fd_);
  }

  void send(const std::vector<std::uint8_t>& frame) override {
    std::size_t sent = 0;
    while (sent < frame.size()) {
      const ssize_t n = ::send(fd_, frame.data() + sent, frame.size() - sent, MSG_NOSIGNAL);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) throw TransportError(errno_text("tcp send"));
      sent += static_cast<std::size_t>(n);
    }
  }

  std::vector<std::uint8_t> receive() override {
    std::vector<std::uint8_t> frame(kFrameHeaderSize);
    read_exact(frame.data(), frame.size());
    const std::uint64_t len = frame_payload_length(frame);
    frame.resize(kFrameHeaderSize + static_cast<std::size_t>(len));
    read_exact(frame.data() + kFrameHeaderSize, static_cast<std::size_t>(len));
    return frame;
  }

  void close() override { ::shutdown(fd_, SHUT_RDWR); }

 private:
  void read_exact(std::uint8_t* dst, std::size_t n) {
    std::size_t got = 0;
    while (got < n) {
      const ssize_t r = ::recv(fd_, dst + got, n - got, 0);
      if (r < 0 && errno == EINTR) continue;
      if (r == 0) throw TransportError("tcp peer closed the connection");
      if (r < 0) throw TransportError(errno_text("tcp recv"));
      got += static_cast<std::size_t>(r);
    }
  }

  int fd_;
};

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

}  // namespace

TransportPair make_loopback_pair() {
  auto a = std::make_shared<Queue>();
  auto b = std::make_shared<Queue>();
  return {std::make_unique<LoopbackEnd>(a, b), std::make_unique<LoopbackEnd>(b, a)};
}

TransportPair make_tcp_pair() {
  const int listener = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listener < 0) throw TransportError(errno_text("socket"));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = 0;
  socklen_t len = sizeof(addr);
  if (::bind(listener, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0 ||
      ::listen(listener, 1) < 0 ||
      ::getsockname(listener, reinterpret_cast<sockaddr*>(&addr), &len) < 0) {
    const std::string msg = errno_text("tcp listen");
    ::close(listener);
    throw TransportError(msg);
  }
  const int client = ::socket(AF_INET, SOCK_STREAM, 0);
  if (client < 0 || ::connect(client, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
    const std::string msg = errno_text("tcp connect");
    if (client >= 0) ::close(client);
    ::close(listener);
    throw TransportError(msg);
  }
  const int server = ::accept(listener, nullptr, nullptr);
  ::close(listener);
  if (server < 0) {
    const std::string msg = errno_text("tcp accept");
    ::close(client);
    throw TransportError(msg);
  }
  set_nodelay(client);
  set_nodelay(server);
  return {std::make_unique<TcpEnd>(server), std::make_unique<TcpEnd>(client)};
}

TransportKind parse_transport(const std::string& name) {
  if (name == "loopback") return TransportKind::kLoopback;
  if (name == "tcp") return TransportKind::kTcp;
  throw ConfigError("transport must be 'loopback' or 'tcp', got '" + name + "'");
}

TransportPair make_transport_pair(TransportKind kind) {
  return kind == TransportKind::kTcp ? make_tcp_pair() : make_loopback_pair();
}

}  // namespace sap::protocol
