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

#ifndef SAP_MODEL_FORWARD_H_
#define SAP_MODEL_FORWARD_H_

#include <cstdint>
#include <span>
#include <vector>

#include "sap/model/plm.h"
#include "sap/numerics/graph.h"

namespace sap::model {

using numerics::BasicGraph;
using numerics::Var;

// A batch of padded token sequences, row-major [batch, seq].
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<std::int32_t> ids;
  std::vector<std::uint8_t> mask;  // 1 where the id is not PAD

  // All sequences must have the same length.
  static TokenBatch from_sequences(std::span<const std::vector<std::int32_t>> sequences);
  // Number of leading positions that contain any non-PAD token.
  std::size_t active_length() const;
};

// Checks ids against the vocabulary and the sequence length against the
// positional table. Throws VocabError / DimensionError.
void validate_batch(const PLMConfig& config, const TokenBatch& batch);

// Embedding lookup plus positions followed by the bottom blocks; [b, n, d].
// When `grad_ids` is non-empty the embedding gradient is routed to those ids
// instead of `batch.ids`.
template <typename Real>
Var forward_bottom(BasicGraph<Real>& g, BottomModel& bottom, const TokenBatch& batch,
                   std::span<const std::int32_t> grad_ids = {});

// Top blocks over `reps` [b, n, d], truncated to the longest unmasked prefix
// of the batch. Returns hidden states [b, n', d].
template <typename Real>
Var encode_top(BasicGraph<Real>& g, TopModel& top, Var reps, std::span<const std::uint8_t> mask);

// encode_top followed by the classifier head at the CLS position; [b, C].
template <typename Real>
Var forward_top(BasicGraph<Real>& g, TopModel& top, Var reps, std::span<const std::uint8_t> mask);

// One block applied to x [b, n, d] with key mask [b, n].
template <typename Real>
Var encoder_block(BasicGraph<Real>& g, EncoderBlock& block, const PLMConfig& config, Var x,
                  std::span<const std::uint8_t> mask);

// Graph-free conveniences (float, no gradients kept).
Tensor bottom_representations(BottomModel& bottom, const TokenBatch& batch);
Tensor top_logits(TopModel& top, const Tensor& reps, std::span<const std::uint8_t> mask);
// Unsplit forward of the whole PLM: [b, C].
Tensor plm_logits(PLM& plm, const TokenBatch& batch);

// Index of the largest logit per row; ties go to the lower class.
std::vector<std::int32_t> argmax_rows(const Tensor& logits);

}  // namespace sap::model

#endif  // SAP_MODEL_FORWARD_H_
