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

#ifndef SAP_PROTOCOL_TRANSCRIPT_H_
#define SAP_PROTOCOL_TRANSCRIPT_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sap/protocol/message.h"

namespace sap::protocol {

struct TranscriptEntry {
  std::size_t index = 0;
  Party from = Party::kVendor;
  MessageType type = MessageType::kDone;
  std::uint64_t seq = 0;
  std::size_t bytes = 0;
  std::string hash;  // BLAKE2b-256 of the whole frame, hex
  std::string dump;  // file name inside the dump directory, if any

  nlohmann::json to_json() const;
  static TranscriptEntry from_json(const nlohmann::json& j);
};

// Append-only log of every frame one party sent or received.
class Transcript {
 public:
  struct Options {
    std::optional<std::filesystem::path> dump_dir;  // raw frames written here
    bool keep_frames = false;                       // raw frames kept in memory
  };

  Transcript() = default;
  explicit Transcript(Options options);

  void record(Party from, const std::vector<std::uint8_t>& frame);

  const std::vector<TranscriptEntry>& entries() const { return entries_; }
  // Frames in record order; empty unless keep_frames.
  const std::vector<std::vector<std::uint8_t>>& frames() const { return frames_; }
  std::size_t count(MessageType type) const;
  // Hash over the JSON lines; equal transcripts have equal digests.
  std::string digest() const;

  void write_jsonl(const std::filesystem::path& path) const;
  static std::vector<TranscriptEntry> read_jsonl(const std::filesystem::path& path);

 private:
  Options options_;
  std::vector<TranscriptEntry> entries_;
  std::vector<std::vector<std::uint8_t>> frames_;
};

// Recomputes every dumped frame's hash and compares it with the log.
// Returns the number of verified entries; throws ProtocolError on the first
// mismatch or missing dump.
std::size_t verify_transcript(const std::filesystem::path& jsonl, const std::filesystem::path& dump_dir);

// Frames of the given types from a dump directory, in log order.
std::vector<Message> load_dumped_messages(const std::filesystem::path& jsonl,
                                          const std::filesystem::path& dump_dir,
                                          std::initializer_list<MessageType> types);

}  // namespace sap::protocol

#endif  // SAP_PROTOCOL_TRANSCRIPT_H_
