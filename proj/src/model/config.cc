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

#include "sap/model/config.h"

#include <string>

#include "sap/errors.h"

namespace sap::model {

void PLMConfig::validate() const {
  if (vocab_size < 4) throw ConfigError("vocab_size must be at least 4");
  if (embed_dim == 0 || num_heads == 0) throw ConfigError("embed_dim and num_heads must be positive");
  if (embed_dim % num_heads != 0) {
    throw ConfigError("embed_dim " + std::to_string(embed_dim) +
                      " is not divisible by num_heads " + std::to_string(num_heads));
  }
  if (ffn_dim == 0) throw ConfigError("ffn_dim must be positive");
  if (max_seq_len < 2) throw ConfigError("max_seq_len must leave room for CLS and SEP");
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (!(init_std > 0) || !(token_embed_std > 0)) throw ConfigError("init scales must be positive");
  if (lora_rank == 0) throw ConfigError("lora_rank must be positive");
}

void to_json(nlohmann::json& j, const PLMConfig& c) {
  j = {{"vocab_size", c.vocab_size},   {"embed_dim", c.embed_dim},
       {"num_blocks", c.num_blocks},   {"num_heads", c.num_heads},
       {"ffn_dim", c.ffn_dim},         {"max_seq_len", c.max_seq_len},
       {"num_classes", c.num_classes}, {"seed", c.seed},
       {"init_std", c.init_std},       {"token_embed_std", c.token_embed_std},
       {"lora_rank", c.lora_rank},     {"lora_alpha", c.lora_alpha}};
}

void from_json(const nlohmann::json& j, PLMConfig& c) {
  PLMConfig d;
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.embed_dim = j.value("embed_dim", d.embed_dim);
  c.num_blocks = j.value("num_blocks", d.num_blocks);
  c.num_heads = j.value("num_heads", d.num_heads);
  c.ffn_dim = j.value("ffn_dim", d.ffn_dim);
  c.max_seq_len = j.value("max_seq_len", d.max_seq_len);
  c.num_classes = j.value("num_classes", d.num_classes);
  c.seed = j.value("seed", d.seed);
  c.init_std = j.value("init_std", d.init_std);
  c.token_embed_std = j.value("token_embed_std", d.token_embed_std);
  c.lora_rank = j.value("lora_rank", d.lora_rank);
  c.lora_alpha = j.value("lora_alpha", d.lora_alpha);
}

}  // namespace sap::model
