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

#include "sap/model/plm.h"

#include <cmath>

#include "sap/errors.h"
#include "sap/numerics/hash.h"

namespace sap::model {

namespace {

using numerics::normal_tensor;
using numerics::Rng;

EncoderBlock make_block(const PLMConfig& c, Rng& rng) {
  const std::size_t d = c.embed_dim, f = c.ffn_dim;
  EncoderBlock b;
  b.wq = normal_tensor({d, d}, c.init_std, rng);
  b.wk = normal_tensor({d, d}, c.init_std, rng);
  b.wv = normal_tensor({d, d}, c.init_std, rng);
  b.wo = normal_tensor({d, d}, c.init_std, rng);
  b.bq = Tensor({d});
  b.bk = Tensor({d});
  b.bv = Tensor({d});
  b.bo = Tensor({d});
  b.ln1_gamma = Tensor::full({d}, 1.0f);
  b.ln1_beta = Tensor({d});
  b.w1 = normal_tensor({d, f}, c.init_std, rng);
  b.b1 = Tensor({f});
  b.w2 = normal_tensor({f, d}, c.init_std, rng);
  b.b2 = Tensor({d});
  b.ln2_gamma = Tensor::full({d}, 1.0f);
  b.ln2_beta = Tensor({d});
  return b;
}

template <typename Block, typename Out>
void visit_block(Block& b, std::size_t index, Out& out) {
  const std::string p = "block." + std::to_string(index) + ".";
  out.push_back({p + "attn.wq", &b.wq});
  out.push_back({p + "attn.bq", &b.bq});
  out.push_back({p + "attn.wk", &b.wk});
  out.push_back({p + "attn.bk", &b.bk});
  out.push_back({p + "attn.wv", &b.wv});
  out.push_back({p + "attn.bv", &b.bv});
  out.push_back({p + "attn.wo", &b.wo});
  out.push_back({p + "attn.bo", &b.bo});
  out.push_back({p + "ln1.gamma", &b.ln1_gamma});
  out.push_back({p + "ln1.beta", &b.ln1_beta});
  out.push_back({p + "ffn.w1", &b.w1});
  out.push_back({p + "ffn.b1", &b.b1});
  out.push_back({p + "ffn.w2", &b.w2});
  out.push_back({p + "ffn.b2", &b.b2});
  out.push_back({p + "ln2.gamma", &b.ln2_gamma});
  out.push_back({p + "ln2.beta", &b.ln2_beta});
  if (b.has_lora) {
    out.push_back({p + "lora.q_a", &b.lora.q_a});
    out.push_back({p + "lora.q_b", &b.lora.q_b});
    out.push_back({p + "lora.v_a", &b.lora.v_a});
    out.push_back({p + "lora.v_b", &b.lora.v_b});
  }
}

template <typename Bottom, typename Out>
void visit_bottom(Bottom& m, Out& out) {
  out.push_back({"embed.token", &m.token_embedding});
  out.push_back({"embed.position", &m.position_embedding});
  for (std::size_t i = 0; i < m.blocks.size(); ++i) visit_block(m.blocks[i], i, out);
}

template <typename Top, typename Out>
void visit_top(Top& m, std::size_t first, Out& out) {
  for (std::size_t i = 0; i < m.blocks.size(); ++i) visit_block(m.blocks[i], first + i, out);
  out.push_back({"head.w", &m.head_w});
  out.push_back({"head.b", &m.head_b});
}

template <typename Out, typename Plm>
Out visit_plm(Plm& plm) {
  Out out;
  out.push_back({"embed.token", &plm.token_embedding});
  out.push_back({"embed.position", &plm.position_embedding});
  for (std::size_t i = 0; i < plm.blocks.size(); ++i) visit_block(plm.blocks[i], i, out);
  out.push_back({"head.w", &plm.head_w});
  out.push_back({"head.b", &plm.head_b});
  return out;
}

void set_block_grad(EncoderBlock& b, bool base, bool lora) {
  std::vector<NamedTensor> named;
  visit_block(b, 0, named);
  for (auto& [name, t] : named) {
    const bool is_lora = name.find(".lora.") != std::string::npos;
    t->set_requires_grad(is_lora ? lora : base);
  }
}

}  // namespace

PLM build_plm(const PLMConfig& config) {
  config.validate();
  Rng rng = numerics::make_rng(config.seed, {0x706c6d});
  PLM plm;
  plm.config = config;
  const std::size_t d = config.embed_dim;
  plm.token_embedding = normal_tensor({config.vocab_size, d}, config.token_embed_std, rng);
  plm.position_embedding = normal_tensor({config.max_seq_len, d}, config.init_std, rng);
  for (std::size_t i = 0; i < config.num_blocks; ++i) plm.blocks.push_back(make_block(config, rng));
  plm.head_w = normal_tensor({d, config.num_classes}, config.init_std, rng);
  plm.head_b = Tensor({config.num_classes});
  return plm;
}

std::size_t parameter_count(const PLM& plm) {
  std::size_t n = 0;
  for (const auto& p : parameters(plm)) {
    if (p.name.find(".lora.") == std::string::npos) n += p.tensor->size();
  }
  return n;
}

std::pair<BottomModel, TopModel> split_model(const PLM& plm, std::size_t split) {
  if (split > plm.blocks.size()) {
    throw SplitError("split position " + std::to_string(split) + " outside [0, " +
                     std::to_string(plm.blocks.size()) + "]");
  }
  BottomModel bottom;
  bottom.config = plm.config;
  bottom.split = split;
  bottom.token_embedding = plm.token_embedding;
  bottom.position_embedding = plm.position_embedding;
  bottom.blocks.assign(plm.blocks.begin(), plm.blocks.begin() + static_cast<std::ptrdiff_t>(split));
  for (auto& b : bottom.blocks) b.has_lora = false;

  TopModel top;
  top.config = plm.config;
  top.split = split;
  top.blocks.assign(plm.blocks.begin() + static_cast<std::ptrdiff_t>(split), plm.blocks.end());
  top.head_w = plm.head_w;
  top.head_b = plm.head_b;
  return {std::move(bottom), std::move(top)};
}

PLM merge_model(const BottomModel& bottom, const TopModel& top) {
  if (bottom.split != top.split || bottom.blocks.size() != bottom.split ||
      bottom.split + top.blocks.size() != bottom.config.num_blocks) {
    throw SplitError("bottom and top halves do not fit together");
  }
  PLM plm;
  plm.config = bottom.config;
  plm.token_embedding = bottom.token_embedding;
  plm.position_embedding = bottom.position_embedding;
  plm.blocks = bottom.blocks;
  plm.blocks.insert(plm.blocks.end(), top.blocks.begin(), top.blocks.end());
  plm.head_w = top.head_w;
  plm.head_b = top.head_b;
  return plm;
}

std::vector<NamedTensor> parameters(PLM& plm) { return visit_plm<std::vector<NamedTensor>>(plm); }
std::vector<ConstNamedTensor> parameters(const PLM& plm) {
  return visit_plm<std::vector<ConstNamedTensor>>(plm);
}

std::vector<NamedTensor> parameters(BottomModel& bottom) {
  std::vector<NamedTensor> out;
  visit_bottom(bottom, out);
  return out;
}
std::vector<ConstNamedTensor> parameters(const BottomModel& bottom) {
  std::vector<ConstNamedTensor> out;
  visit_bottom(bottom, out);
  return out;
}

std::vector<NamedTensor> parameters(TopModel& top) {
  std::vector<NamedTensor> out;
  visit_top(top, top.split, out);
  return out;
}
std::vector<ConstNamedTensor> parameters(const TopModel& top) {
  std::vector<ConstNamedTensor> out;
  visit_top(top, top.split, out);
  return out;
}

std::string parameter_checksum(const std::vector<ConstNamedTensor>& params) {
  numerics::Hasher h;
  for (const auto& p : params) {
    h.update(std::string_view(p.name));
    h.update(*p.tensor);
  }
  return h.hex_digest();
}

std::string parameter_checksum(const PLM& plm) { return parameter_checksum(parameters(plm)); }
std::string parameter_checksum(const BottomModel& bottom) {
  return parameter_checksum(parameters(bottom));
}
std::string parameter_checksum(const TopModel& top) { return parameter_checksum(parameters(top)); }

void attach_lora(TopModel& top, std::uint64_t seed) {
  const std::size_t d = top.config.embed_dim, r = top.config.lora_rank;
  const double limit = 1.0 / std::sqrt(double(d));
  for (std::size_t i = 0; i < top.blocks.size(); ++i) {
    EncoderBlock& b = top.blocks[i];
    if (b.has_lora) continue;
    Rng rng = numerics::make_rng(seed, {0x6c6f7261, top.split + i});
    b.lora.q_a = numerics::uniform_tensor({d, r}, limit, rng);
    b.lora.q_b = Tensor({r, d});
    b.lora.v_a = numerics::uniform_tensor({d, r}, limit, rng);
    b.lora.v_b = Tensor({r, d});
    b.has_lora = true;
  }
}

std::vector<TrainableTensor> top_trainables(TopModel& top) {
  std::vector<TrainableTensor> out;
  for (auto& b : top.blocks) {
    if (!b.has_lora) continue;
    out.push_back({&b.lora.q_a, true});
    out.push_back({&b.lora.q_b, true});
    out.push_back({&b.lora.v_a, true});
    out.push_back({&b.lora.v_b, true});
  }
  out.push_back({&top.head_w, true});
  out.push_back({&top.head_b, false});
  return out;
}

std::vector<TrainableTensor> bottom_trainables(BottomModel& bottom) {
  std::vector<TrainableTensor> out;
  if (bottom.frozen) return out;
  for (auto& p : parameters(bottom)) out.push_back({p.tensor, false});
  return out;
}

void set_trainable(TopModel& top) {
  for (auto& b : top.blocks) set_block_grad(b, false, true);
  top.head_w.set_requires_grad(true);
  top.head_b.set_requires_grad(true);
}

void set_trainable(BottomModel& bottom) {
  const bool train = !bottom.frozen;
  bottom.token_embedding.set_requires_grad(train);
  bottom.position_embedding.set_requires_grad(train);
  for (auto& b : bottom.blocks) set_block_grad(b, train, false);
}

}  // namespace sap::model
