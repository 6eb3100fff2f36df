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

#ifndef SAP_ATTACKS_ATTACKS_H_
#define SAP_ATTACKS_ATTACKS_H_

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sap/model/plm.h"
#include "sap/numerics/tensor.h"
#include "sap/protocol/message.h"

namespace sap::attacks {

using numerics::Tensor;

// Representations seen by the vendor: [N, n, d] plus the non-PAD mask and
// the sample ids they were sent under.
struct Observations {
  std::vector<std::uint64_t> ids;
  Tensor reps;
  std::vector<std::uint8_t> mask;  // [N * n]

  std::size_t size() const { return ids.size(); }
  std::size_t seq_len() const { return reps.rank() == 3 ? reps.dim(1) : 0; }
  // Rows [lo, hi) as a new set.
  Observations slice(std::size_t lo, std::size_t hi) const;
  Observations select(std::span<const std::size_t> rows) const;
};

// REP_BATCH_FULL, REP_BATCH and EVAL_REQUEST payloads concatenated in order.
Observations collect_observations(std::span<const protocol::Message> messages);
// REP_BATCH payloads grouped by their "epoch" metadata; one set per epoch.
std::vector<Observations> observations_by_epoch(std::span<const protocol::Message> messages);

// sample id -> original token ids
using GroundTruth = std::map<std::uint64_t, std::vector<std::int32_t>>;

struct SampleRecovery {
  std::uint64_t sample_id = 0;
  std::vector<std::int32_t> predicted;  // per position; -1 where not attacked
  std::vector<std::uint8_t> scored;     // content positions (non-PAD, not CLS/SEP)
  std::vector<std::uint8_t> correct;
};

struct AttackReport {
  std::string attack;
  double success = 0.0;  // X
  double empirical_privacy = 1.0;
  std::size_t scored = 0;
  std::size_t recovered = 0;
  std::size_t failed_samples = 0;
  std::vector<SampleRecovery> samples;
  nlohmann::json config;

  // Summary without per-sample detail unless `detail`.
  nlohmann::json to_json(bool detail = false) const;
};

// 1 - X. Throws AttackError outside [0, 1].
double empirical_privacy(double x);

// Nearest E row per observed position, after subtracting the known initial
// positional row (representations at the embedding layer carry E[t] + P[j]).
// Throws AttackError on a width mismatch or missing ground truth.
AttackReport eia_nearest_neighbor(const Observations& obs, const Tensor& token_embedding,
                                  const Tensor& position_embedding, const GroundTruth& truth);

struct EiaOptConfig {
  std::size_t steps = 500;
  double tau_start = 1.0;
  double tau_end = 0.1;
  double lr = 0.1;
  double momentum = 0.9;
  std::size_t chunk = 16;  // samples optimized together (independent losses)
  // Start Z at scale * one-hot of these ids instead of 0 (keyed by sample id).
  const GroundTruth* init_tokens = nullptr;
  double init_scale = 30.0;
};
void to_json(nlohmann::json& j, const EiaOptConfig& c);

// Word-selection inversion against the attacker's copy of the bottom model:
// minimize || f_b(softmax(Z / tau) E + P) - h_obs ||^2 over non-PAD positions.
// Chunks whose optimization produces a non-finite value count as failed
// (no recovered tokens).
AttackReport eia_optimization(const Observations& obs, model::BottomModel& bottom, const GroundTruth& truth,
                              const EiaOptConfig& config = {});

// Position recovered if any report recovered it. Throws AttackError when the
// reports cover different samples.
AttackReport eia_union(std::span<const AttackReport> reports);

struct AiaConfig {
  std::size_t hidden = 32;
  std::size_t epochs = 300;
  double lr = 1e-2;
  double weight_decay = 1e-3;
  std::uint64_t seed = 0;
};
void to_json(nlohmann::json& j, const AiaConfig& c);

// Mean-pooled, standardized representations -> 2-layer tanh probe trained on
// the labeled set; X is the accuracy on the targets. Throws AttackError when
// the labeled set has one class or fewer than 2 samples per class.
AttackReport aia_attack(const Observations& labeled, std::span<const std::int32_t> labeled_attributes,
                        const Observations& targets, std::span<const std::int32_t> target_attributes,
                        const AiaConfig& config = {});

}  // namespace sap::attacks

#endif  // SAP_ATTACKS_ATTACKS_H_
