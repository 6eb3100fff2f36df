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

#include "sap/numerics/hash.h"

#include <sodium.h>

#include <bit>
#include <cstring>
#include <stdexcept>

namespace sap::numerics {

static_assert(std::endian::native == std::endian::little,
              "raw tensor payloads assume a little-endian host");

struct Hasher::State {
  crypto_generichash_state st;
};

Hasher::Hasher() : state_(new State) {
  if (sodium_init() < 0) throw std::runtime_error("libsodium initialization failed");
  crypto_generichash_init(&state_->st, nullptr, 0, 32);
}

Hasher::~Hasher() { delete state_; }

Hasher& Hasher::update(std::span<const std::uint8_t> bytes) {
  crypto_generichash_update(&state_->st, bytes.data(), bytes.size());
  return *this;
}

Hasher& Hasher::update(std::string_view text) {
  update_u64(text.size());
  return update({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

Hasher& Hasher::update_u64(std::uint64_t value) {
  std::uint8_t buf[8];
  std::memcpy(buf, &value, 8);
  return update(buf);
}

Hasher& Hasher::update(const Tensor& tensor) {
  update_u64(tensor.rank());
  for (std::size_t d : tensor.shape()) update_u64(d);
  auto data = tensor.data();
  return update({reinterpret_cast<const std::uint8_t*>(data.data()), data.size_bytes()});
}

std::string Hasher::hex_digest() {
  unsigned char out[32];
  crypto_generichash_final(&state_->st, out, sizeof out);
  char hex[65];
  sodium_bin2hex(hex, sizeof hex, out, sizeof out);
  return std::string(hex);
}

std::string blake2b_hex(std::span<const std::uint8_t> bytes) {
  Hasher h;
  h.update(bytes);
  return h.hex_digest();
}

}  // namespace sap::numerics
