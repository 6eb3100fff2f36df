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

#ifndef SAP_PROTOCOL_TRANSPORT_H_
#define SAP_PROTOCOL_TRANSPORT_H_

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace sap::protocol {

// Ordered, reliable delivery of whole frames in each direction. Failures
// abort: receive() on a closed or broken link throws TransportError.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual void send(const std::vector<std::uint8_t>& frame) = 0;
  virtual std::vector<std::uint8_t> receive() = 0;
  // Wakes the peer's pending receive() with a TransportError.
  virtual void close() = 0;
};

using TransportPair = std::pair<std::unique_ptr<Transport>, std::unique_ptr<Transport>>;

// In-process duplex queue.
TransportPair make_loopback_pair();
// Two connected TCP sockets on 127.0.0.1 (ephemeral port).
TransportPair make_tcp_pair();

enum class TransportKind { kLoopback, kTcp };
TransportKind parse_transport(const std::string& name);  // ConfigError
TransportPair make_transport_pair(TransportKind kind);

}  // namespace sap::protocol

#endif  // SAP_PROTOCOL_TRANSPORT_H_
