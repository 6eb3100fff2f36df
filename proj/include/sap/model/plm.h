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

#ifndef SAP_MODEL_PLM_H_
#define SAP_MODEL_PLM_H_

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sap/model/config.h"
#include "sap/numerics/random.h"
#include "sap/numerics/tensor.h"

namespace sap::model {

using numerics::Tensor;

// Low-rank adapter on the query and value projections of one block:
// delta(x) = (alpha / rank) * x * A * B.
struct LoraAdapter {
  Tensor q_a, q_b;  // [d, r], [r, d]
  Tensor v_a, v_b;
};

// Post-LN transformer encoder block. Weights are stored [d_in, d_out].
struct EncoderBlock {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln1_gamma, ln1_beta;
  Tensor w1, b1, w2, b2;
  Tensor ln2_gamma, ln2_beta;
  bool has_lora = false;
  LoraAdapter lora;
};

struct PLM {
  PLMConfig config;
  Tensor token_embedding;     // [V, d]
  Tensor position_embedding;  // [n, d]
  std::vector<EncoderBlock> blocks;
  Tensor head_w;  // [d, C]
  Tensor head_b;  // [C]
};

// Customer side: embeddings plus the first `split` blocks.
struct BottomModel {
  PLMConfig config;
  std::size_t split = 0;
  bool frozen = true;
  Tensor token_embedding;
  Tensor position_embedding;
  std::vector<EncoderBlock> blocks;
};

// Vendor side: blocks [split, L) and the classifier head.
struct TopModel {
  PLMConfig config;
  std::size_t split = 0;
  std::vector<EncoderBlock> blocks;
  Tensor head_w;
  Tensor head_b;
};

struct NamedTensor {
  std::string name;
  Tensor* tensor;
};
struct ConstNamedTensor {
  std::string name;
  const Tensor* tensor;
};

// Seeded initialization: block and head weights ~ N(0, init_std^2), token
// embeddings ~ N(0, token_embed_std^2), biases 0, LayerNorm gain 1.
PLM build_plm(const PLMConfig& config);

// Closed-form number of base (non-adapter) parameters.
std::size_t parameter_count(const PLM& plm);

// Copies the model apart at block index `split`. Throws SplitError.
std::pair<BottomModel, TopModel> split_model(const PLM& plm, std::size_t split);
// Inverse of split_model. Throws SplitError on mismatched halves.
PLM merge_model(const BottomModel& bottom, const TopModel& top);

// Stable parameter names, e.g. "embed.token", "block.3.attn.wq",
// "block.3.lora.q_a", "head.w". Block indices are global (not relative to
// the split), so names survive split/merge unchanged.
std::vector<NamedTensor> parameters(PLM& plm);
std::vector<NamedTensor> parameters(BottomModel& bottom);
std::vector<NamedTensor> parameters(TopModel& top);
std::vector<ConstNamedTensor> parameters(const PLM& plm);
std::vector<ConstNamedTensor> parameters(const BottomModel& bottom);
std::vector<ConstNamedTensor> parameters(const TopModel& top);

// BLAKE2b over every (name, shape, data) in order.
std::string parameter_checksum(const std::vector<ConstNamedTensor>& params);
std::string parameter_checksum(const PLM& plm);
std::string parameter_checksum(const BottomModel& bottom);
std::string parameter_checksum(const TopModel& top);

// Attaches zero-initialized-B adapters to every top block that lacks one.
// A ~ U(-1/sqrt(d), 1/sqrt(d)).
void attach_lora(TopModel& top, std::uint64_t seed);

// Trainable tensors of the vendor side: adapters and head. `decay` marks
// tensors that receive decoupled weight decay.
struct TrainableTensor {
  Tensor* tensor;
  bool decay;
};
std::vector<TrainableTensor> top_trainables(TopModel& top);
std::vector<TrainableTensor> bottom_trainables(BottomModel& bottom);

// Sets requires_grad on the tensors the owning party trains, clears it on
// all others.
void set_trainable(TopModel& top);
void set_trainable(BottomModel& bottom);

}  // namespace sap::model

#endif  // SAP_MODEL_PLM_H_
