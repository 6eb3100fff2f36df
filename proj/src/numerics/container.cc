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

#include "sap/numerics/container.h"

#include <cstring>
#include <fstream>

#include "sap/errors.h"

namespace sap::numerics {

namespace {

constexpr char kMagic[4] = {'S', 'A', 'P', 'C'};

}  // namespace

const Tensor& Container::get(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw DataError("container has no tensor '" + name + "'");
}

bool Container::contains(const std::string& name) const {
  for (const auto& entry : tensors) {
    if (entry.first == name) return true;
  }
  return false;
}

void write_container(const std::filesystem::path& path, const nlohmann::json& meta,
                     const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
  nlohmann::json directory = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    directory.push_back({{"name", name}, {"shape", t->shape()}, {"offset", offset}});
    offset += t->size() * sizeof(float);
  }
  const std::string header = nlohmann::json{{"meta", meta}, {"tensors", directory}}.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  const std::uint64_t len = header.size();
  out.write(kMagic, 4);
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& entry : tensors) {
    auto data = entry.second->data();
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size_bytes()));
  }
  if (!out) throw DataError("write failed for " + path.string());
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  char magic[4];
  std::uint64_t len = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&len), 8);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError(path.string() + " is not a tensor container");
  }
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError("truncated container header in " + path.string());

  nlohmann::json parsed;
  try {
    parsed = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad container header: " + std::string(e.what()));
  }
  const auto payload_start = in.tellg();
  Container result;
  result.meta = parsed.at("meta");
  for (const auto& entry : parsed.at("tensors")) {
    Shape shape = entry.at("shape").get<Shape>();
    std::vector<float> data(shape_size(shape));
    in.seekg(payload_start + static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!in) throw DataError("truncated container payload in " + path.string());
    result.tensors.emplace_back(entry.at("name").get<std::string>(),
                                Tensor(std::move(shape), std::move(data)));
  }
  return result;
}

}  // namespace sap::numerics
