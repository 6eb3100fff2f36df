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

#include "sap/attacks/attacks.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "sap/errors.h"
#include "sap/model/config.h"
#include "sap/model/forward.h"
#include "sap/model/optim.h"
#include "sap/numerics/graph.h"
#include "sap/numerics/random.h"
#include "sap/privatizer/privatizer.h"

namespace sap::attacks {

using numerics::Graph;
using numerics::Var;
using protocol::Message;
using protocol::MessageType;

// ------------------------------------------------------------------ observations

Observations Observations::slice(std::size_t lo, std::size_t hi) const {
  if (lo > hi || hi > size()) throw AttackError("observation slice out of range");
  const std::size_t n = seq_len(), d = reps.dim(2);
  Observations out;
  out.ids.assign(ids.begin() + long(lo), ids.begin() + long(hi));
  out.reps = Tensor({hi - lo, n, d});
  std::copy(reps.data().begin() + long(lo * n * d), reps.data().begin() + long(hi * n * d), out.reps.data().begin());
  out.mask.assign(mask.begin() + long(lo * n), mask.begin() + long(hi * n));
  return out;
}

Observations Observations::select(std::span<const std::size_t> rows) const {
  const std::size_t n = seq_len(), d = reps.rank() == 3 ? reps.dim(2) : 0;
  Observations out;
  out.reps = Tensor({rows.size(), n, d});
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const std::size_t i = rows[k];
    if (i >= size()) throw AttackError("observation row out of range");
    out.ids.push_back(ids[i]);
    std::copy_n(reps.data().begin() + long(i * n * d), n * d, out.reps.data().begin() + long(k * n * d));
    out.mask.insert(out.mask.end(), mask.begin() + long(i * n), mask.begin() + long((i + 1) * n));
  }
  return out;
}

namespace {

void append(Observations& into, const Message& m) {
  if (m.tensors.size() != 1 || m.tensors[0].rank() != 3) {
    throw AttackError(protocol::message_type_name(m.type) + " does not carry a [N, n, d] tensor");
  }
  const Tensor& r = m.tensors[0];
  if (into.ids.empty() && into.reps.empty()) {
    into.reps = Tensor({0, r.dim(1), r.dim(2)});
  }
  if (r.dim(1) != into.reps.dim(1) || r.dim(2) != into.reps.dim(2)) {
    throw AttackError("observed representations change shape between messages");
  }
  std::vector<float> data = into.reps.storage();
  data.insert(data.end(), r.data().begin(), r.data().end());
  into.reps = Tensor({into.reps.dim(0) + r.dim(0), r.dim(1), r.dim(2)}, std::move(data));
  into.ids.insert(into.ids.end(), m.ids.begin(), m.ids.end());
  into.mask.insert(into.mask.end(), m.mask.begin(), m.mask.end());
}

bool carries_reps(MessageType t) {
  return t == MessageType::kRepBatchFull || t == MessageType::kRepBatch || t == MessageType::kEvalRequest;
}

const std::vector<std::int32_t>& truth_for(const GroundTruth& truth, std::uint64_t id, std::size_t n) {
  auto it = truth.find(id);
  if (it == truth.end()) throw AttackError("no ground truth for sample " + std::to_string(id));
  if (it->second.size() != n) throw AttackError("ground truth length differs for sample " + std::to_string(id));
  return it->second;
}

void check_obs(const Observations& obs) {
  if (obs.reps.rank() != 3 || obs.reps.dim(0) != obs.ids.size() ||
      obs.mask.size() != obs.ids.size() * obs.reps.dim(1)) {
    throw AttackError("observations are inconsistent");
  }
}

void finalize(AttackReport& r) {
  r.scored = r.recovered = 0;
  for (const auto& s : r.samples) {
    for (std::size_t t = 0; t < s.scored.size(); ++t) {
      r.scored += s.scored[t];
      r.recovered += s.scored[t] && s.correct[t];
    }
  }
  r.success = r.scored ? double(r.recovered) / double(r.scored) : 0.0;
  r.empirical_privacy = empirical_privacy(r.success);
}

SampleRecovery score(std::uint64_t id, std::vector<std::int32_t> predicted, std::span<const std::uint8_t> mask,
                     const std::vector<std::int32_t>& truth) {
  SampleRecovery s;
  s.sample_id = id;
  s.predicted = std::move(predicted);
  s.scored.resize(truth.size());
  s.correct.resize(truth.size());
  for (std::size_t t = 0; t < truth.size(); ++t) {
    s.scored[t] = mask[t] && !model::is_special(truth[t]);
    s.correct[t] = s.predicted[t] == truth[t];
  }
  return s;
}

}  // namespace

Observations collect_observations(std::span<const Message> messages) {
  Observations out;
  for (const auto& m : messages) {
    if (carries_reps(m.type)) append(out, m);
  }
  return out;
}

std::vector<Observations> observations_by_epoch(std::span<const Message> messages) {
  std::vector<Observations> out;
  for (const auto& m : messages) {
    if (m.type != MessageType::kRepBatch) continue;
    const std::size_t e = m.meta.value("epoch", std::size_t{0});
    if (out.size() <= e) out.resize(e + 1);
    append(out[e], m);
  }
  return out;
}

// ------------------------------------------------------------------ report

nlohmann::json AttackReport::to_json(bool detail) const {
  nlohmann::json j = {{"attack", attack},   {"success", success},          {"empirical_privacy", empirical_privacy},
                      {"scored", scored},   {"recovered", recovered},      {"failed_samples", failed_samples},
                      {"config", config}};
  if (detail) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& s : samples) rows.push_back({{"sample_id", s.sample_id}, {"predicted", s.predicted}});
    j["samples"] = rows;
  }
  return j;
}

double empirical_privacy(double x) {
  if (!(x >= 0.0 && x <= 1.0)) throw AttackError("attack success rate must lie in [0, 1]");
  return 1.0 - x;
}

// ------------------------------------------------------------------ EIA-NN

AttackReport eia_nearest_neighbor(const Observations& obs, const Tensor& token_embedding,
                                  const Tensor& position_embedding, const GroundTruth& truth) {
  check_obs(obs);
  const std::size_t N = obs.size(), n = obs.seq_len(), d = obs.reps.dim(2);
  if (token_embedding.rank() != 2 || token_embedding.dim(1) != d || position_embedding.dim(1) != d ||
      position_embedding.dim(0) < n) {
    throw AttackError("observed width " + std::to_string(d) + " does not match the embedding tables");
  }
  privatizer::EmbeddingSearch search(token_embedding, {});
  AttackReport r;
  r.attack = "eia_nn";
  std::vector<double> q(d);
  for (std::size_t i = 0; i < N; ++i) {
    const auto& t = truth_for(truth, obs.ids[i], n);
    std::vector<std::int32_t> predicted(n, -1);
    for (std::size_t j = 0; j < n; ++j) {
      if (!obs.mask[i * n + j]) continue;
      for (std::size_t k = 0; k < d; ++k) {
        q[k] = double(obs.reps.at(i, j, k)) - double(position_embedding.at(j, k));
      }
      predicted[j] = search.nearest(q);
    }
    r.samples.push_back(score(obs.ids[i], std::move(predicted), {obs.mask.data() + i * n, n}, t));
  }
  finalize(r);
  return r;
}

// ------------------------------------------------------------------ EIA-opt

void to_json(nlohmann::json& j, const EiaOptConfig& c) {
  j = {{"steps", c.steps}, {"tau_start", c.tau_start}, {"tau_end", c.tau_end},  {"lr", c.lr},
       {"momentum", c.momentum}, {"chunk", c.chunk}, {"init", c.init_tokens ? "truth" : "zero"}};
}

AttackReport eia_optimization(const Observations& obs, model::BottomModel& bottom, const GroundTruth& truth,
                              const EiaOptConfig& config) {
  check_obs(obs);
  if (config.chunk == 0) throw ConfigError("chunk must be positive");
  const std::size_t N = obs.size(), n = obs.seq_len(), d = obs.reps.dim(2), V = bottom.config.vocab_size;
  if (d != bottom.config.embed_dim || n > bottom.config.max_seq_len) {
    throw AttackError("observations do not match the bottom model");
  }
  AttackReport r;
  r.attack = "eia_opt";
  r.config = config;

  // The attacker's copy is used as constants.
  std::vector<std::pair<Tensor*, bool>> restore;
  for (auto& p : model::parameters(bottom)) {
    restore.push_back({p.tensor, p.tensor->requires_grad()});
    p.tensor->set_requires_grad(false);
  }

  for (std::size_t lo = 0; lo < N; lo += config.chunk) {
    const std::size_t hi = std::min(N, lo + config.chunk), B = hi - lo;
    const Observations part = obs.slice(lo, hi);
    // Trailing all-PAD columns never influence unmasked positions.
    std::size_t L = 1;
    for (std::size_t i = 0; i < B; ++i) {
      for (std::size_t t = 0; t < n; ++t) {
        if (part.mask[i * n + t]) L = std::max(L, t + 1);
      }
    }
    Tensor target({B, L, d});
    std::vector<std::uint8_t> mask(B * L);
    for (std::size_t i = 0; i < B; ++i) {
      for (std::size_t t = 0; t < L; ++t) {
        mask[i * L + t] = part.mask[i * n + t];
        for (std::size_t k = 0; k < d; ++k) target.at(i, t, k) = part.reps.at(i, t, k);
      }
    }
    Tensor pos({L, d});
    std::copy_n(bottom.position_embedding.data().begin(), L * d, pos.data().begin());

    Tensor Z({B * L, V});
    if (config.init_tokens) {
      for (std::size_t i = 0; i < B; ++i) {
        const auto& t = truth_for(*config.init_tokens, part.ids[i], n);
        for (std::size_t j = 0; j < L; ++j) Z.at(i * L + j, std::size_t(t[j])) = float(config.init_scale);
      }
    }
    std::vector<double> velocity(Z.size(), 0.0);
    bool failed = false;
    try {
      for (std::size_t step = 0; step < config.steps; ++step) {
        const double frac = config.steps > 1 ? double(step) / double(config.steps - 1) : 1.0;
        const double tau = config.tau_start + (config.tau_end - config.tau_start) * frac;
        Graph g;
        Var z = g.variable(Z);
        Var p = g.softmax(g.scale(z, 1.0 / tau), 1);
        Var x = g.reshape(g.matmul(p, g.parameter(bottom.token_embedding)), {B, L, d});
        x = g.add_bias(x, g.constant(pos));
        for (auto& block : bottom.blocks) x = model::encoder_block(g, block, bottom.config, x, mask);
        Var loss = g.masked_squared_error(x, target, mask);
        g.backward(loss);
        const Tensor grad = g.grad(z);
        for (std::size_t k = 0; k < Z.size(); ++k) {
          velocity[k] = config.momentum * velocity[k] - config.lr * double(grad[k]);
          Z[k] = float(double(Z[k]) + velocity[k]);
        }
        for (float v : Z.data()) {
          if (!std::isfinite(v)) throw NumericError("selection logits diverged");
        }
      }
    } catch (const NumericError&) {
      failed = true;
    }
    for (std::size_t i = 0; i < B; ++i) {
      const auto& t = truth_for(truth, part.ids[i], n);
      std::vector<std::int32_t> predicted(n, -1);
      if (!failed) {
        for (std::size_t j = 0; j < L; ++j) {
          if (!part.mask[i * n + j]) continue;
          const float* row = Z.data().data() + (i * L + j) * V;
          predicted[j] = static_cast<std::int32_t>(std::max_element(row, row + V) - row);
        }
      }
      r.samples.push_back(score(part.ids[i], std::move(predicted), {part.mask.data() + i * n, n}, t));
    }
    if (failed) r.failed_samples += B;
  }
  for (auto& [t, flag] : restore) t->set_requires_grad(flag);
  finalize(r);
  return r;
}

// ------------------------------------------------------------------ union

AttackReport eia_union(std::span<const AttackReport> reports) {
  if (reports.empty()) throw AttackError("union of no reports");
  AttackReport r;
  r.attack = reports[0].attack + "_union";
  r.config = {{"reports", reports.size()}};
  std::map<std::uint64_t, SampleRecovery> merged;
  for (const auto& s : reports[0].samples) {
    if (!merged.emplace(s.sample_id, s).second) throw AttackError("duplicate sample in a report");
  }
  for (std::size_t k = 1; k < reports.size(); ++k) {
    if (reports[k].samples.size() != merged.size()) throw AttackError("reports cover different samples");
    for (const auto& s : reports[k].samples) {
      auto it = merged.find(s.sample_id);
      if (it == merged.end() || it->second.scored != s.scored) {
        throw AttackError("reports cover different samples");
      }
      for (std::size_t t = 0; t < s.correct.size(); ++t) {
        if (s.correct[t] && !it->second.correct[t]) {
          it->second.correct[t] = 1;
          it->second.predicted[t] = s.predicted[t];
        }
      }
    }
  }
  for (auto& [id, s] : merged) r.samples.push_back(std::move(s));
  finalize(r);
  return r;
}

// ------------------------------------------------------------------ AIA

void to_json(nlohmann::json& j, const AiaConfig& c) {
  j = {{"hidden", c.hidden}, {"epochs", c.epochs}, {"lr", c.lr}, {"weight_decay", c.weight_decay}, {"seed", c.seed}};
}

namespace {

Tensor pooled_features(const Observations& obs) {
  check_obs(obs);
  Graph g;
  return g.value(g.mean_pool(g.constant(obs.reps), obs.mask));
}

}  // namespace

AttackReport aia_attack(const Observations& labeled, std::span<const std::int32_t> labeled_attributes,
                        const Observations& targets, std::span<const std::int32_t> target_attributes,
                        const AiaConfig& config) {
  if (labeled.size() != labeled_attributes.size() || targets.size() != target_attributes.size()) {
    throw AttackError("one attribute label per observation required");
  }
  std::map<std::int32_t, std::size_t> per_class;
  for (std::int32_t a : labeled_attributes) {
    if (a < 0) throw AttackError("attribute labels must be nonnegative");
    ++per_class[a];
  }
  if (per_class.size() < 2) throw AttackError("labeled set needs at least two attribute classes");
  for (const auto& [a, c] : per_class) {
    if (c < 2) throw AttackError("attribute " + std::to_string(a) + " has fewer than 2 labeled samples");
  }
  const std::size_t K = std::size_t(per_class.rbegin()->first) + 1;

  Tensor train = pooled_features(labeled);
  Tensor test = pooled_features(targets);
  const std::size_t N = train.dim(0), d = train.dim(1);
  for (std::size_t k = 0; k < d; ++k) {
    double mean = 0, var = 0;
    for (std::size_t i = 0; i < N; ++i) mean += train.at(i, k);
    mean /= double(N);
    for (std::size_t i = 0; i < N; ++i) var += (train.at(i, k) - mean) * (train.at(i, k) - mean);
    const double sd = std::sqrt(var / double(N)) + 1e-6;
    for (std::size_t i = 0; i < N; ++i) train.at(i, k) = float((train.at(i, k) - mean) / sd);
    for (std::size_t i = 0; i < test.dim(0); ++i) test.at(i, k) = float((test.at(i, k) - mean) / sd);
  }

  auto rng = numerics::make_rng(config.seed, {0x616961});
  Tensor w1 = numerics::normal_tensor({d, config.hidden}, 1.0 / std::sqrt(double(d)), rng);
  Tensor b1({config.hidden});
  Tensor w2 = numerics::normal_tensor({config.hidden, K}, 1.0 / std::sqrt(double(config.hidden)), rng);
  Tensor b2({K});
  std::vector<model::TrainableTensor> params = {{&w1, true}, {&b1, false}, {&w2, true}, {&b2, false}};
  for (auto& p : params) p.tensor->set_requires_grad(true);
  model::AdamWConfig opt{config.lr, 0.9, 0.999, 1e-8, config.weight_decay};
  model::AdamWState state;
  std::vector<std::int32_t> y(labeled_attributes.begin(), labeled_attributes.end());
  auto logits_of = [&](Graph& g, const Tensor& x) {
    Var h = g.tanh(g.add_bias(g.matmul(g.constant(x), g.parameter(w1)), g.parameter(b1)));
    return g.add_bias(g.matmul(h, g.parameter(w2)), g.parameter(b2));
  };
  for (std::size_t e = 0; e < config.epochs; ++e) {
    Graph g;
    g.backward(g.cross_entropy(logits_of(g, train), y));
    model::adamw_step(params, state, config.lr, opt);
    model::zero_grads(params);
  }
  Graph g;
  const auto predicted = model::argmax_rows(g.value(logits_of(g, test)));

  AttackReport r;
  r.attack = "aia";
  r.config = config;
  r.config["labeled"] = N;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    SampleRecovery s;
    s.sample_id = targets.ids[i];
    s.predicted = {predicted[i]};
    s.scored = {1};
    s.correct = {std::uint8_t(predicted[i] == target_attributes[i])};
    r.samples.push_back(std::move(s));
  }
  finalize(r);
  return r;
}

}  // namespace sap::attacks
