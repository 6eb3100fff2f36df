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

#ifndef SAP_PROTOCOL_MESSAGE_H_
#define SAP_PROTOCOL_MESSAGE_H_

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sap/numerics/tensor.h"

namespace sap::protocol {

using numerics::Tensor;

enum class MessageType : std::uint8_t {
  kBottomModel = 1,
  kRepBatchFull = 2,
  kRepBatch = 3,
  kOutputBatch = 4,
  kOutputGrad = 5,
  kInputGrad = 6,
  kEvalRequest = 7,
  kEvalResponse = 8,
  kDone = 9,
};

inline constexpr std::array<MessageType, 9> kAllMessageTypes = {
    MessageType::kBottomModel, MessageType::kRepBatchFull, MessageType::kRepBatch,
    MessageType::kOutputBatch, MessageType::kOutputGrad,   MessageType::kInputGrad,
    MessageType::kEvalRequest, MessageType::kEvalResponse, MessageType::kDone};

std::string message_type_name(MessageType type);  // "REP_BATCH", ...

using SessionId = std::array<std::uint8_t, 16>;

// Payload layout (all integers little-endian):
//   u32 n_tensors, then per tensor: u8 rank, u64 dims[rank], f32 data
//   u64 n_ids, u64 ids[n_ids]
//   u64 mask_len, u8 mask[mask_len]
//   u64 meta_len, meta JSON bytes (empty when meta is null)
struct Message {
  MessageType type = MessageType::kDone;
  SessionId session{};
  std::uint64_t seq = 0;
  std::vector<Tensor> tensors;
  std::vector<std::uint64_t> ids;
  std::vector<std::uint8_t> mask;
  nlohmann::json meta;

  bool operator==(const Message& other) const;
};

// Frame: "SAP1" | u8 type | 16-byte session id | u64 seq | u64 payload_len | payload.
inline constexpr std::size_t kFrameHeaderSize = 4 + 1 + 16 + 8 + 8;

std::vector<std::uint8_t> encode_message(const Message& msg);
// Throws DecodeError on bad magic, unknown type, truncation or trailing bytes.
Message decode_message(std::span<const std::uint8_t> bytes);
// Payload length stored in a frame header; throws DecodeError.
std::uint64_t frame_payload_length(std::span<const std::uint8_t> header);

enum class Party { kVendor, kCustomer };

// Schema check applied to every outgoing message: allowed types per sender,
// allowed metadata keys and tensor ranks. The customer may only send
// privatized representations, output-layer gradients and control metadata;
// the vendor never sends top-model parameters. Throws ProtocolError.
void check_outgoing(const Message& msg, Party sender);

}  // namespace sap::protocol

#endif  // SAP_PROTOCOL_MESSAGE_H_
