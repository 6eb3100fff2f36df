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

#ifndef SAP_MODEL_PRETRAIN_H_
#define SAP_MODEL_PRETRAIN_H_

#include <cstdint>
#include <vector>

#include "json.hpp"
#include "sap/model/plm.h"

namespace sap::model {

// Masked-token warm-up standing in for pre-training. Positions are masked
// with UNK and predicted through the tied token-embedding matrix.
struct WarmupConfig {
  bool enabled = true;
  std::size_t epochs = 1;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double mask_prob = 0.15;
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const WarmupConfig& c);
void from_json(const nlohmann::json& j, WarmupConfig& c);

// Trains every base parameter except the classifier head. Returns the mean
// masked-token loss per epoch.
std::vector<double> mlm_warmup(PLM& plm, const std::vector<std::vector<std::int32_t>>& sequences,
                               const WarmupConfig& config);

}  // namespace sap::model

#endif  // SAP_MODEL_PRETRAIN_H_
