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

#include "sap/model/optim.h"

#include <cmath>

#include "sap/errors.h"

namespace sap::model {

void to_json(nlohmann::json& j, const AdamWConfig& c) {
  j = {{"lr", c.lr},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"eps", c.eps},
       {"weight_decay", c.weight_decay}};
}

void from_json(const nlohmann::json& j, AdamWConfig& c) {
  AdamWConfig d;
  c.lr = j.value("lr", d.lr);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.eps = j.value("eps", d.eps);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
}

void adamw_step(const std::vector<TrainableTensor>& params, AdamWState& state, double lr,
                const AdamWConfig& config) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor->size(), 0.0);
      state.v.emplace_back(p.tensor->size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("optimizer state does not match parameters");
  ++state.step;
  const double c1 = 1.0 - std::pow(config.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, double(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& t = *params[k].tensor;
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != t.size()) throw DimensionError("optimizer state does not match parameters");
    auto data = t.data();
    auto grad = t.grad();
    const double shrink = params[k].decay ? 1.0 - lr * config.weight_decay : 1.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = grad[i];
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
      const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + config.eps);
      data[i] = static_cast<float>(double(data[i]) * shrink - lr * update);
    }
    t.check_finite("adamw_step");
  }
}

double linear_lr(std::uint64_t step, std::uint64_t total_steps, double base_lr) {
  if (total_steps == 0) return base_lr;
  if (step > total_steps) throw ConfigError("learning-rate step beyond schedule");
  return base_lr * (1.0 - double(step) / double(total_steps));
}

void zero_grads(const std::vector<TrainableTensor>& params) {
  for (const auto& p : params) p.tensor->zero_grad();
}

}  // namespace sap::model
