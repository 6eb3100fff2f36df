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

#include "sap/model/checkpoint.h"

#include "sap/errors.h"
#include "sap/numerics/container.h"

namespace sap::model {

void save_checkpoint(const std::filesystem::path& path, const PLM& plm,
                     const nlohmann::json& extra) {
  std::vector<std::pair<std::string, const Tensor*>> entries;
  for (const auto& p : parameters(plm)) entries.emplace_back(p.name, p.tensor);
  numerics::write_container(path, {{"config", plm.config}, {"extra", extra}}, entries);
}

PLM load_checkpoint(const std::filesystem::path& path) {
  numerics::Container c = numerics::read_container(path);
  PLMConfig config = c.meta.at("config").get<PLMConfig>();
  PLM plm = build_plm(config);
  for (std::size_t i = 0; i < plm.blocks.size(); ++i) {
    if (c.contains("block." + std::to_string(i) + ".lora.q_a")) {
      const std::size_t d = config.embed_dim, r = config.lora_rank;
      auto& b = plm.blocks[i];
      b.has_lora = true;
      b.lora = {Tensor({d, r}), Tensor({r, d}), Tensor({d, r}), Tensor({r, d})};
    }
  }
  for (auto& p : parameters(plm)) {
    const Tensor& stored = c.get(p.name);
    if (stored.shape() != p.tensor->shape()) {
      throw DataError("checkpoint tensor " + p.name + " has shape " +
                      numerics::shape_string(stored.shape()));
    }
    *p.tensor = stored;
  }
  return plm;
}

}  // namespace sap::model
