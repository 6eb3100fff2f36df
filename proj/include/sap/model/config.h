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

#ifndef SAP_MODEL_CONFIG_H_
#define SAP_MODEL_CONFIG_H_

#include <cstddef>
#include <cstdint>

#include "json.hpp"

namespace sap::model {

// Reserved vocabulary ids.
inline constexpr std::int32_t kPad = 0;
inline constexpr std::int32_t kUnk = 1;
inline constexpr std::int32_t kCls = 2;
inline constexpr std::int32_t kSep = 3;

inline bool is_special(std::int32_t id) { return id == kPad || id == kCls || id == kSep; }

struct PLMConfig {
  std::size_t vocab_size = 2000;
  std::size_t embed_dim = 64;
  std::size_t num_blocks = 8;
  std::size_t num_heads = 4;
  std::size_t ffn_dim = 128;
  std::size_t max_seq_len = 64;
  std::size_t num_classes = 2;
  std::uint64_t seed = 0;
  double init_std = 0.02;
  // Token embedding rows are drawn with their own scale. A wider spread
  // than the block weights keeps nearest-neighbor remapping meaningful for
  // privacy parameters in the tens.
  double token_embed_std = 0.08;
  std::size_t lora_rank = 8;
  double lora_alpha = 16.0;

  // Throws ConfigError.
  void validate() const;
  std::size_t head_dim() const { return embed_dim / num_heads; }
};

void to_json(nlohmann::json& j, const PLMConfig& c);
void from_json(const nlohmann::json& j, PLMConfig& c);

}  // namespace sap::model

#endif  // SAP_MODEL_CONFIG_H_
