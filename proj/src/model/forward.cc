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

#include "sap/model/forward.h"

#include <cmath>

#include "sap/errors.h"

namespace sap::model {

using numerics::Shape;

TokenBatch TokenBatch::from_sequences(std::span<const std::vector<std::int32_t>> sequences) {
  TokenBatch b;
  b.batch = sequences.size();
  b.seq = sequences.empty() ? 0 : sequences.front().size();
  b.ids.reserve(b.batch * b.seq);
  for (const auto& s : sequences) {
    if (s.size() != b.seq) throw DimensionError("sequences in a batch must share one length");
    b.ids.insert(b.ids.end(), s.begin(), s.end());
  }
  b.mask.resize(b.ids.size());
  for (std::size_t i = 0; i < b.ids.size(); ++i) b.mask[i] = b.ids[i] != kPad;
  return b;
}

std::size_t TokenBatch::active_length() const {
  std::size_t len = 0;
  for (std::size_t i = 0; i < batch; ++i) {
    for (std::size_t t = seq; t > len; --t) {
      if (mask[i * seq + t - 1]) {
        len = t;
        break;
      }
    }
  }
  return len;
}

void validate_batch(const PLMConfig& config, const TokenBatch& batch) {
  if (batch.seq > config.max_seq_len) {
    throw DimensionError("sequence length " + std::to_string(batch.seq) + " exceeds max_seq_len " +
                         std::to_string(config.max_seq_len));
  }
  if (batch.ids.size() != batch.batch * batch.seq || batch.mask.size() != batch.ids.size()) {
    throw DimensionError("token batch storage does not match its shape");
  }
  for (std::int32_t id : batch.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= config.vocab_size) {
      throw VocabError("token id " + std::to_string(id) + " outside vocabulary of size " +
                       std::to_string(config.vocab_size));
    }
  }
}

namespace {

template <typename Real>
Var projection(BasicGraph<Real>& g, Var x2, Tensor& w, Tensor& b) {
  return g.add_bias(g.matmul(x2, g.parameter(w)), g.parameter(b));
}

template <typename Real>
Var lora_delta(BasicGraph<Real>& g, Var x2, Tensor& a, Tensor& b, double scale) {
  return g.scale(g.matmul(g.matmul(x2, g.parameter(a)), g.parameter(b)), scale);
}

}  // namespace

template <typename Real>
Var encoder_block(BasicGraph<Real>& g, EncoderBlock& block, const PLMConfig& config, Var x,
                  std::span<const std::uint8_t> mask) {
  const Shape shape = g.value(x).shape();
  if (shape.size() != 3 || shape[2] != config.embed_dim) {
    throw DimensionError("encoder block expects [b, n, " + std::to_string(config.embed_dim) +
                         "], got " + numerics::shape_string(shape));
  }
  const std::size_t b = shape[0], n = shape[1], d = shape[2], h = config.num_heads;
  Var x2 = g.reshape(x, {b * n, d});

  Var q = projection(g, x2, block.wq, block.bq);
  Var k = projection(g, x2, block.wk, block.bk);
  Var v = projection(g, x2, block.wv, block.bv);
  if (block.has_lora) {
    const double s = config.lora_alpha / double(config.lora_rank);
    q = g.add(q, lora_delta(g, x2, block.lora.q_a, block.lora.q_b, s));
    v = g.add(v, lora_delta(g, x2, block.lora.v_a, block.lora.v_b, s));
  }
  q = g.split_heads(g.reshape(q, {b, n, d}), h);
  k = g.split_heads(g.reshape(k, {b, n, d}), h);
  v = g.split_heads(g.reshape(v, {b, n, d}), h);

  Var scores = g.scale(g.batched_matmul(q, k, true), 1.0 / std::sqrt(double(config.head_dim())));
  Var attn = g.masked_softmax(scores, mask, h);
  Var ctx = g.reshape(g.merge_heads(g.batched_matmul(attn, v), h), {b * n, d});
  Var o = projection(g, ctx, block.wo, block.bo);
  Var h1 = g.layer_norm(g.add(x2, o), g.parameter(block.ln1_gamma), g.parameter(block.ln1_beta));

  Var f = g.gelu(projection(g, h1, block.w1, block.b1));
  f = projection(g, f, block.w2, block.b2);
  Var y = g.layer_norm(g.add(h1, f), g.parameter(block.ln2_gamma), g.parameter(block.ln2_beta));
  return g.reshape(y, {b, n, d});
}

template <typename Real>
Var forward_bottom(BasicGraph<Real>& g, BottomModel& bottom, const TokenBatch& batch,
                   std::span<const std::int32_t> grad_ids) {
  validate_batch(bottom.config, batch);
  Var table = g.parameter(bottom.token_embedding);
  Var x = g.embedding(table, batch.ids, batch.batch, batch.seq, grad_ids);
  Var pos = g.parameter(bottom.position_embedding);
  if (batch.seq != bottom.config.max_seq_len) {
    // Only the first `seq` positional rows apply.
    std::vector<std::int32_t> rows(batch.seq);
    for (std::size_t t = 0; t < batch.seq; ++t) rows[t] = static_cast<std::int32_t>(t);
    pos = g.reshape(g.embedding(pos, rows, 1, batch.seq), {batch.seq, bottom.config.embed_dim});
  }
  x = g.add_bias(x, pos);
  for (auto& block : bottom.blocks) x = encoder_block(g, block, bottom.config, x, batch.mask);
  return x;
}

template <typename Real>
Var encode_top(BasicGraph<Real>& g, TopModel& top, Var reps, std::span<const std::uint8_t> mask) {
  const Shape& shape = g.value(reps).shape();
  if (shape.size() != 3 || shape[2] != top.config.embed_dim || shape[1] > top.config.max_seq_len ||
      mask.size() != shape[0] * shape[1]) {
    throw DimensionError("top model input " + numerics::shape_string(shape) +
                         " does not match the model configuration");
  }
  const std::size_t b = shape[0], n = shape[1];
  std::size_t len = 1;
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t t = n; t > len; --t) {
      if (mask[i * n + t - 1]) {
        len = t;
        break;
      }
    }
  }
  Var x = reps;
  std::vector<std::uint8_t> cut(mask.begin(), mask.end());
  if (len < n) {
    x = g.truncate_sequence(reps, len);
    cut.resize(b * len);
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t t = 0; t < len; ++t) cut[i * len + t] = mask[i * n + t];
    }
  }
  for (auto& block : top.blocks) x = encoder_block(g, block, top.config, x, cut);
  return x;
}

template <typename Real>
Var forward_top(BasicGraph<Real>& g, TopModel& top, Var reps, std::span<const std::uint8_t> mask) {
  Var hidden = encode_top(g, top, reps, mask);
  Var cls = g.select_position(hidden, 0);
  return g.add_bias(g.matmul(cls, g.parameter(top.head_w)), g.parameter(top.head_b));
}

#define SAP_INSTANTIATE(Real)                                                                    \
  template Var encoder_block<Real>(BasicGraph<Real>&, EncoderBlock&, const PLMConfig&, Var,     \
                                   std::span<const std::uint8_t>);                              \
  template Var forward_bottom<Real>(BasicGraph<Real>&, BottomModel&, const TokenBatch&,         \
                                    std::span<const std::int32_t>);                             \
  template Var encode_top<Real>(BasicGraph<Real>&, TopModel&, Var, std::span<const std::uint8_t>); \
  template Var forward_top<Real>(BasicGraph<Real>&, TopModel&, Var, std::span<const std::uint8_t>);
SAP_INSTANTIATE(float)
SAP_INSTANTIATE(double)
#undef SAP_INSTANTIATE

Tensor bottom_representations(BottomModel& bottom, const TokenBatch& batch) {
  numerics::Graph g;
  return g.value(forward_bottom(g, bottom, batch));
}

Tensor top_logits(TopModel& top, const Tensor& reps, std::span<const std::uint8_t> mask) {
  numerics::Graph g;
  return g.value(forward_top(g, top, g.constant(reps), mask));
}

Tensor plm_logits(PLM& plm, const TokenBatch& batch) {
  validate_batch(plm.config, batch);
  numerics::Graph g;
  Var x = g.embedding(g.parameter(plm.token_embedding), batch.ids, batch.batch, batch.seq);
  Var pos = g.parameter(plm.position_embedding);
  if (batch.seq != plm.config.max_seq_len) {
    std::vector<std::int32_t> rows(batch.seq);
    for (std::size_t t = 0; t < batch.seq; ++t) rows[t] = static_cast<std::int32_t>(t);
    pos = g.reshape(g.embedding(pos, rows, 1, batch.seq), {batch.seq, plm.config.embed_dim});
  }
  x = g.add_bias(x, pos);
  for (auto& block : plm.blocks) x = encoder_block(g, block, plm.config, x, batch.mask);
  Var cls = g.select_position(x, 0);
  return g.value(g.add_bias(g.matmul(cls, g.parameter(plm.head_w)), g.parameter(plm.head_b)));
}

std::vector<std::int32_t> argmax_rows(const Tensor& logits) {
  std::vector<std::int32_t> out(logits.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.dim(1); ++j) {
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    }
    out[i] = static_cast<std::int32_t>(best);
  }
  return out;
}

}  // namespace sap::model
