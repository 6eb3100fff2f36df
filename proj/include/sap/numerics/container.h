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

#ifndef SAP_NUMERICS_CONTAINER_H_
#define SAP_NUMERICS_CONTAINER_H_

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "sap/numerics/tensor.h"

namespace sap::numerics {

// Binary tensor container used for checkpoints and corpus caches:
//
//   "SAPC" | u64 header_len | header JSON | payload
//
// The header is {"meta": <caller JSON>, "tensors": [{name, shape, offset}]}
// where offset is the byte offset of the tensor inside the payload. Payload
// values are little-endian 32-bit floats.
struct Container {
  nlohmann::json meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;
};

void write_container(const std::filesystem::path& path, const nlohmann::json& meta,
                     const std::vector<std::pair<std::string, const Tensor*>>& tensors);
Container read_container(const std::filesystem::path& path);

}  // namespace sap::numerics

#endif  // SAP_NUMERICS_CONTAINER_H_
