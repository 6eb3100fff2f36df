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

#ifndef SAP_NUMERICS_HASH_H_
#define SAP_NUMERICS_HASH_H_

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include "sap/numerics/tensor.h"

namespace sap::numerics {

// Incremental BLAKE2b-256 (libsodium). Digest is rendered as lowercase hex.
class Hasher {
 public:
  Hasher();
  ~Hasher();
  Hasher(const Hasher&) = delete;
  Hasher& operator=(const Hasher&) = delete;

  Hasher& update(std::span<const std::uint8_t> bytes);
  Hasher& update(std::string_view text);
  Hasher& update_u64(std::uint64_t value);
  // Shape followed by the raw little-endian data.
  Hasher& update(const Tensor& tensor);
  std::string hex_digest();

 private:
  struct State;
  State* state_;
};

std::string blake2b_hex(std::span<const std::uint8_t> bytes);

}  // namespace sap::numerics

#endif  // SAP_NUMERICS_HASH_H_
