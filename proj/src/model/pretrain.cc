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

#include "sap/model/pretrain.h"

#include <algorithm>
#include <numeric>

#include "sap/errors.h"
#include "sap/model/forward.h"
#include "sap/model/optim.h"
#include "sap/numerics/random.h"

namespace sap::model {

void to_json(nlohmann::json& j, const WarmupConfig& c) {
  j = {{"enabled", c.enabled},   {"epochs", c.epochs},       {"batch_size", c.batch_size},
       {"lr", c.lr},             {"mask_prob", c.mask_prob}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, WarmupConfig& c) {
  WarmupConfig d;
  c.enabled = j.value("enabled", d.enabled);
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.lr = j.value("lr", d.lr);
  c.mask_prob = j.value("mask_prob", d.mask_prob);
  c.seed = j.value("seed", d.seed);
}

std::vector<double> mlm_warmup(PLM& plm, const std::vector<std::vector<std::int32_t>>& sequences,
                               const WarmupConfig& config) {
  std::vector<double> epoch_losses;
  if (!config.enabled || sequences.empty() || config.epochs == 0) return epoch_losses;
  if (config.batch_size == 0) throw ConfigError("warm-up batch_size must be positive");

  std::vector<TrainableTensor> trainables;
  for (auto& p : parameters(plm)) {
    if (p.name.rfind("head.", 0) == 0 || p.name.find(".lora.") != std::string::npos) continue;
    p.tensor->set_requires_grad(true);
    trainables.push_back({p.tensor, false});
  }
  AdamWConfig adam;
  adam.weight_decay = 0.0;
  AdamWState state;
  const std::size_t batches = (sequences.size() + config.batch_size - 1) / config.batch_size;
  const std::uint64_t total = batches * config.epochs;

  std::vector<std::size_t> order(sequences.size());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    numerics::Rng rng = numerics::make_rng(config.seed, {0x6d6c6d, epoch});
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::bernoulli_distribution coin(config.mask_prob);
    double loss_sum = 0.0;
    for (std::size_t bi = 0; bi < batches; ++bi) {
      const std::size_t lo = bi * config.batch_size;
      const std::size_t hi = std::min(sequences.size(), lo + config.batch_size);
      std::vector<std::vector<std::int32_t>> rows;
      for (std::size_t i = lo; i < hi; ++i) rows.push_back(sequences[order[i]]);
      TokenBatch batch = TokenBatch::from_sequences(rows);

      std::vector<std::size_t> positions;
      std::vector<std::int32_t> targets;
      std::vector<std::size_t> content;
      for (std::size_t k = 0; k < batch.ids.size(); ++k) {
        if (is_special(batch.ids[k])) continue;
        content.push_back(k);
        if (coin(rng)) {
          positions.push_back(k);
          targets.push_back(batch.ids[k]);
        }
      }
      if (content.empty()) continue;
      if (positions.empty()) {
        const std::size_t k = content[rng() % content.size()];
        positions.push_back(k);
        targets.push_back(batch.ids[k]);
      }
      for (std::size_t k : positions) batch.ids[k] = kUnk;

      numerics::Graph g;
      Var table = g.parameter(plm.token_embedding);
      Var x = g.embedding(table, batch.ids, batch.batch, batch.seq);
      x = g.add_bias(x, g.parameter(plm.position_embedding));
      for (auto& block : plm.blocks) x = encoder_block(g, block, plm.config, x, batch.mask);
      Var logits = g.matmul(g.gather_positions(x, positions), table, true);
      Var loss = g.cross_entropy(logits, targets);
      zero_grads(trainables);
      g.backward(loss);
      const std::uint64_t step = epoch * batches + bi;
      adamw_step(trainables, state, linear_lr(step, total, config.lr), adam);
      loss_sum += g.value(loss)[0];
    }
    epoch_losses.push_back(loss_sum / double(batches));
  }
  for (auto& t : trainables) t.tensor->set_requires_grad(false);
  return epoch_losses;
}

}  // namespace sap::model
