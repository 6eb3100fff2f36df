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

#ifndef SAP_MODEL_OPTIM_H_
#define SAP_MODEL_OPTIM_H_

#include <cstdint>
#include <vector>

#include "json.hpp"
#include "sap/model/plm.h"

namespace sap::model {

struct AdamWConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

void to_json(nlohmann::json& j, const AdamWConfig& c);
void from_json(const nlohmann::json& j, AdamWConfig& c);

struct AdamWState {
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  bool operator==(const AdamWState&) const = default;
};

// One decoupled-weight-decay Adam update of every tensor from its grad()
// buffer:
//   p <- p * (1 - lr * wd)            (only where decay is set)
//   m <- b1 m + (1 - b1) g;  v <- b2 v + (1 - b2) g^2
//   p <- p - lr * m_hat / (sqrt(v_hat) + eps)
// State is created on the first call and must keep the same layout.
void adamw_step(const std::vector<TrainableTensor>& params, AdamWState& state, double lr,
                const AdamWConfig& config);

// base_lr * (1 - step / total_steps). total_steps == 0 yields base_lr.
double linear_lr(std::uint64_t step, std::uint64_t total_steps, double base_lr);

void zero_grads(const std::vector<TrainableTensor>& params);

}  // namespace sap::model

#endif  // SAP_MODEL_OPTIM_H_
