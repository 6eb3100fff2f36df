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

#include "sap/protocol/message.h"

#include <cstring>
#include <set>

#include "sap/errors.h"

namespace sap::protocol {

namespace {

constexpr char kMagic[4] = {'S', 'A', 'P', '1'};

class Writer {
 public:
  void u8(std::uint8_t v) { out.push_back(v); }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  void take(void* dst, std::size_t n, const char* what) {
    if (n > bytes_.size() - pos_) throw DecodeError(std::string("truncated message while reading ") + what);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::uint8_t u8(const char* what) {
    std::uint8_t v;
    take(&v, 1, what);
    return v;
  }
  std::uint32_t u32(const char* what) {
    std::uint32_t v;
    take(&v, 4, what);
    return v;
  }
  std::uint64_t u64(const char* what) {
    std::uint64_t v;
    take(&v, 8, what);
    return v;
  }
  // Guards element counts against the bytes actually left.
  std::size_t count(std::uint64_t n, std::size_t elem, const char* what) const {
    if (elem && n > (bytes_.size() - pos_) / elem) {
      throw DecodeError(std::string("truncated message: ") + what + " count exceeds payload");
    }
    return static_cast<std::size_t>(n);
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

bool known_type(std::uint8_t t) { return t >= 1 && t <= 9; }

}  // namespace

std::string message_type_name(MessageType type) {
  switch (type) {
    case MessageType::kBottomModel: return "BOTTOM_MODEL";
    case MessageType::kRepBatchFull: return "REP_BATCH_FULL";
    case MessageType::kRepBatch: return "REP_BATCH";
    case MessageType::kOutputBatch: return "OUTPUT_BATCH";
    case MessageType::kOutputGrad: return "OUTPUT_GRAD";
    case MessageType::kInputGrad: return "INPUT_GRAD";
    case MessageType::kEvalRequest: return "EVAL_REQUEST";
    case MessageType::kEvalResponse: return "EVAL_RESPONSE";
    case MessageType::kDone: return "DONE";
  }
  return "UNKNOWN";
}

bool Message::operator==(const Message& other) const {
  if (type != other.type || session != other.session || seq != other.seq || ids != other.ids ||
      mask != other.mask || meta != other.meta || tensors.size() != other.tensors.size()) {
    return false;
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const Tensor& a = tensors[i];
    const Tensor& b = other.tensors[i];
    if (a.shape() != b.shape()) return false;
    // Bit patterns, so NaN payloads and signed zeros compare exactly.
    if (std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(float)) != 0) return false;
  }
  return true;
}

std::vector<std::uint8_t> encode_message(const Message& msg) {
  Writer p;
  if (msg.tensors.size() > UINT32_MAX) throw ProtocolError("too many tensors in one message");
  p.u32(static_cast<std::uint32_t>(msg.tensors.size()));
  for (const Tensor& t : msg.tensors) {
    p.u8(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) p.u64(d);
    p.raw(t.data().data(), t.size() * sizeof(float));
  }
  p.u64(msg.ids.size());
  p.raw(msg.ids.data(), msg.ids.size() * 8);
  p.u64(msg.mask.size());
  p.raw(msg.mask.data(), msg.mask.size());
  const std::string meta = msg.meta.is_null() ? std::string() : msg.meta.dump();
  p.u64(meta.size());
  p.raw(meta.data(), meta.size());

  Writer f;
  f.raw(kMagic, 4);
  f.u8(static_cast<std::uint8_t>(msg.type));
  f.raw(msg.session.data(), msg.session.size());
  f.u64(msg.seq);
  f.u64(p.out.size());
  f.out.insert(f.out.end(), p.out.begin(), p.out.end());
  return std::move(f.out);
}

std::uint64_t frame_payload_length(std::span<const std::uint8_t> header) {
  if (header.size() < kFrameHeaderSize) throw DecodeError("truncated frame header");
  if (std::memcmp(header.data(), kMagic, 4) != 0) throw DecodeError("bad frame magic");
  if (!known_type(header[4])) throw DecodeError("unknown message type " + std::to_string(header[4]));
  std::uint64_t len;
  std::memcpy(&len, header.data() + 29, 8);
  return len;
}

Message decode_message(std::span<const std::uint8_t> bytes) {
  const std::uint64_t payload_len = frame_payload_length(bytes);
  if (payload_len != bytes.size() - kFrameHeaderSize) {
    throw DecodeError("frame length " + std::to_string(bytes.size()) + " disagrees with payload length " +
                      std::to_string(payload_len));
  }
  Reader r(bytes);
  char magic[4];
  r.take(magic, 4, "magic");
  Message m;
  m.type = static_cast<MessageType>(r.u8("type"));
  r.take(m.session.data(), m.session.size(), "session id");
  m.seq = r.u64("seq");
  r.u64("payload length");

  const std::uint32_t n_tensors = r.u32("tensor count");
  r.count(n_tensors, 1, "tensor");
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    const std::uint8_t rank = r.u8("tensor rank");
    if (rank > 3) throw DecodeError("tensor rank " + std::to_string(rank) + " exceeds 3");
    numerics::Shape shape(rank);
    std::size_t size = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(r.u64("tensor dim"));
      if (d != 0 && size > SIZE_MAX / d) throw DecodeError("tensor dims overflow");
      size *= d;
    }
    r.count(size, sizeof(float), "tensor element");
    std::vector<float> data(size);
    r.take(data.data(), size * sizeof(float), "tensor data");
    m.tensors.emplace_back(std::move(shape), std::move(data));
  }
  const std::size_t n_ids = r.count(r.u64("id count"), 8, "id");
  m.ids.resize(n_ids);
  r.take(m.ids.data(), n_ids * 8, "ids");
  const std::size_t mask_len = r.count(r.u64("mask length"), 1, "mask");
  m.mask.resize(mask_len);
  r.take(m.mask.data(), mask_len, "mask");
  const std::size_t meta_len = r.count(r.u64("meta length"), 1, "meta");
  std::string meta(meta_len, '\0');
  r.take(meta.data(), meta_len, "meta");
  if (r.remaining() != 0) throw DecodeError("trailing bytes after payload");
  if (!meta.empty()) {
    m.meta = nlohmann::json::parse(meta, nullptr, false);
    if (m.meta.is_discarded()) throw DecodeError("malformed metadata JSON");
  }
  return m;
}

void check_outgoing(const Message& msg, Party sender) {
  static const std::set<MessageType> customer_types = {
      MessageType::kRepBatchFull, MessageType::kRepBatch, MessageType::kOutputGrad,
      MessageType::kEvalRequest, MessageType::kDone};
  static const std::set<MessageType> vendor_types = {
      MessageType::kBottomModel, MessageType::kOutputBatch, MessageType::kInputGrad,
      MessageType::kEvalResponse, MessageType::kDone};
  const bool customer = sender == Party::kCustomer;
  const std::string name = message_type_name(msg.type);
  if (!(customer ? customer_types : vendor_types).count(msg.type)) {
    throw ProtocolError((customer ? "customer" : "vendor") + std::string(" may not send ") + name);
  }
  static const std::set<std::string> control_keys = {"epoch", "batch", "batches", "pass", "request"};
  if (!msg.meta.is_null()) {
    if (!msg.meta.is_object()) throw ProtocolError(name + " metadata must be an object");
    for (auto it = msg.meta.begin(); it != msg.meta.end(); ++it) {
      const bool bottom_key = msg.type == MessageType::kBottomModel &&
                              (it.key() == "config" || it.key() == "split" || it.key() == "names");
      if (bottom_key) continue;
      if (!control_keys.count(it.key()) || !it.value().is_number_unsigned()) {
        throw ProtocolError(name + " carries disallowed metadata '" + it.key() + "'");
      }
    }
  }
  auto expect_tensors = [&](std::size_t count, std::size_t rank) {
    if (msg.tensors.size() != count) throw ProtocolError(name + " has the wrong number of tensors");
    for (const Tensor& t : msg.tensors) {
      if (t.rank() != rank) throw ProtocolError(name + " tensor has rank " + std::to_string(t.rank()));
    }
  };
  switch (msg.type) {
    case MessageType::kRepBatchFull:
    case MessageType::kRepBatch:
    case MessageType::kEvalRequest: {
      expect_tensors(1, 3);
      const Tensor& reps = msg.tensors[0];
      if (msg.ids.size() != reps.dim(0) || msg.mask.size() != reps.dim(0) * reps.dim(1)) {
        throw ProtocolError(name + " ids or mask disagree with the representation shape");
      }
      break;
    }
    case MessageType::kOutputGrad:
    case MessageType::kOutputBatch:
    case MessageType::kEvalResponse:
      expect_tensors(1, 2);
      if (!msg.mask.empty()) throw ProtocolError(name + " carries a mask");
      break;
    case MessageType::kInputGrad:
      expect_tensors(1, 3);
      break;
    case MessageType::kDone:
      expect_tensors(0, 0);
      if (!msg.ids.empty() || !msg.mask.empty()) throw ProtocolError("DONE carries a payload");
      break;
    case MessageType::kBottomModel: {
      if (!msg.meta.contains("names") || msg.meta["names"].size() != msg.tensors.size()) {
        throw ProtocolError("BOTTOM_MODEL must name every tensor");
      }
      const std::size_t split = msg.meta.value("split", std::size_t{0});
      for (const auto& n : msg.meta["names"]) {
        const std::string s = n.get<std::string>();
        bool top = s.rfind("head.", 0) == 0 || s.find(".lora.") != std::string::npos;
        if (s.rfind("block.", 0) == 0) top |= std::stoul(s.substr(6)) >= split;
        if (top) throw ProtocolError("BOTTOM_MODEL may not carry top-model parameter " + s);
      }
      break;
    }
  }
  if (customer && msg.type == MessageType::kOutputGrad && !msg.ids.empty()) {
    throw ProtocolError("OUTPUT_GRAD carries ids");
  }
}

}  // namespace sap::protocol
