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

#include "sap/protocol/transcript.h"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "sap/errors.h"
#include "sap/numerics/hash.h"

namespace sap::protocol {

namespace {

std::string party_name(Party p) { return p == Party::kVendor ? "vendor" : "customer"; }

MessageType type_from_name(const std::string& name) {
  for (MessageType t : kAllMessageTypes) {
    if (message_type_name(t) == name) return t;
  }
  throw ProtocolError("unknown message type '" + name + "' in transcript");
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ProtocolError("missing payload dump " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

nlohmann::json TranscriptEntry::to_json() const {
  nlohmann::json j = {{"index", index},  {"from", party_name(from)}, {"type", message_type_name(type)},
                      {"seq", seq},      {"bytes", bytes},           {"hash", hash}};
  if (!dump.empty()) j["dump"] = dump;
  return j;
}

TranscriptEntry TranscriptEntry::from_json(const nlohmann::json& j) {
  TranscriptEntry e;
  e.index = j.at("index").get<std::size_t>();
  const std::string from = j.at("from").get<std::string>();
  if (from != "vendor" && from != "customer") throw ProtocolError("bad sender '" + from + "'");
  e.from = from == "vendor" ? Party::kVendor : Party::kCustomer;
  e.type = type_from_name(j.at("type").get<std::string>());
  e.seq = j.at("seq").get<std::uint64_t>();
  e.bytes = j.at("bytes").get<std::size_t>();
  e.hash = j.at("hash").get<std::string>();
  e.dump = j.value("dump", std::string());
  return e;
}

Transcript::Transcript(Options options) : options_(std::move(options)) {
  if (options_.dump_dir) std::filesystem::create_directories(*options_.dump_dir);
}

void Transcript::record(Party from, const std::vector<std::uint8_t>& frame) {
  // Header fields are read straight from the frame so a log entry always
  // describes the bytes on the wire.
  frame_payload_length(frame);
  TranscriptEntry e;
  e.index = entries_.size();
  e.from = from;
  e.type = static_cast<MessageType>(frame[4]);
  std::memcpy(&e.seq, frame.data() + 21, 8);
  e.bytes = frame.size();
  e.hash = numerics::blake2b_hex(frame);
  if (options_.dump_dir) {
    char name[96];
    std::snprintf(name, sizeof(name), "%06zu_%s_%s.bin", e.index, party_name(from).c_str(),
                  message_type_name(e.type).c_str());
    e.dump = name;
    std::ofstream out(*options_.dump_dir / name, std::ios::binary);
    out.write(reinterpret_cast<const char*>(frame.data()), static_cast<std::streamsize>(frame.size()));
    if (!out) throw ProtocolError("cannot write payload dump " + e.dump);
  }
  if (options_.keep_frames) frames_.push_back(frame);
  entries_.push_back(std::move(e));
}

std::size_t Transcript::count(MessageType type) const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.type == type;
  return n;
}

std::string Transcript::digest() const {
  numerics::Hasher h;
  for (const auto& e : entries_) {
    auto j = e.to_json();
    j.erase("dump");
    h.update(std::string_view(j.dump()));
  }
  return h.hex_digest();
}

void Transcript::write_jsonl(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ProtocolError("cannot write transcript " + path.string());
  for (const auto& e : entries_) out << e.to_json().dump() << '\n';
}

std::vector<TranscriptEntry> Transcript::read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ProtocolError("cannot read transcript " + path.string());
  std::vector<TranscriptEntry> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw ProtocolError("malformed transcript line in " + path.string());
    out.push_back(TranscriptEntry::from_json(j));
  }
  return out;
}

std::size_t verify_transcript(const std::filesystem::path& jsonl, const std::filesystem::path& dump_dir) {
  std::size_t verified = 0;
  for (const auto& e : Transcript::read_jsonl(jsonl)) {
    if (e.dump.empty()) throw ProtocolError("entry " + std::to_string(e.index) + " has no dump");
    const auto frame = read_file(dump_dir / e.dump);
    if (frame.size() != e.bytes || numerics::blake2b_hex(frame) != e.hash) {
      throw ProtocolError("hash mismatch for transcript entry " + std::to_string(e.index));
    }
    const Message m = decode_message(frame);
    if (m.type != e.type || m.seq != e.seq) {
      throw ProtocolError("header mismatch for transcript entry " + std::to_string(e.index));
    }
    ++verified;
  }
  return verified;
}

std::vector<Message> load_dumped_messages(const std::filesystem::path& jsonl,
                                          const std::filesystem::path& dump_dir,
                                          std::initializer_list<MessageType> types) {
  std::vector<Message> out;
  for (const auto& e : Transcript::read_jsonl(jsonl)) {
    if (std::find(types.begin(), types.end(), e.type) == types.end()) continue;
    if (e.dump.empty()) throw ProtocolError("transcript has no payload dumps; rerun with --dump-payloads");
    out.push_back(decode_message(read_file(dump_dir / e.dump)));
  }
  return out;
}

}  // namespace sap::protocol
