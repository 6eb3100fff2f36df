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

#include "sap/privatizer/privatizer.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "sap/data/corpus.h"
#include "sap/errors.h"
#include "sap/model/config.h"

namespace sap::privatizer {

namespace {

constexpr std::int32_t kStructural[] = {model::kPad, model::kCls, model::kSep};

}  // namespace

void PrivacyConfig::validate() const {
  if (eta && !(*eta > 0)) throw ConfigError("eta must be positive");
  if (!(cti_budget >= 0 && cti_budget <= 1)) throw ConfigError("cti_budget must lie in [0, 1]");
  if (!(cti_eta_multiplier >= 1)) throw ConfigError("cti_eta_multiplier must be at least 1");
  if (!(smoothing >= 0)) throw ConfigError("smoothing must be nonnegative");
}

void to_json(nlohmann::json& j, const PrivacyConfig& c) {
  j = {{"eta", c.enabled() ? nlohmann::json(*c.eta) : nlohmann::json("none")},
       {"cti_enabled", c.cti_enabled},
       {"cti_budget", c.cti_budget},
       {"cti_eta_multiplier", std::isfinite(c.cti_eta_multiplier)
                                  ? nlohmann::json(c.cti_eta_multiplier)
                                  : nlohmann::json("inf")},
       {"budget_unit", c.budget_unit == BudgetUnit::kOccurrences ? "occurrences" : "vocabulary"},
       {"smoothing", c.smoothing},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, PrivacyConfig& c) {
  c = PrivacyConfig{};
  if (j.contains("eta") && j["eta"].is_number()) c.eta = j["eta"].get<double>();
  c.cti_enabled = j.value("cti_enabled", c.cti_enabled);
  c.cti_budget = j.value("cti_budget", c.cti_budget);
  if (j.contains("cti_eta_multiplier") && j["cti_eta_multiplier"].is_number()) {
    c.cti_eta_multiplier = j["cti_eta_multiplier"].get<double>();
  }
  const std::string unit = j.value("budget_unit", std::string("occurrences"));
  if (unit == "occurrences") {
    c.budget_unit = BudgetUnit::kOccurrences;
  } else if (unit == "vocabulary") {
    c.budget_unit = BudgetUnit::kVocabulary;
  } else {
    throw ConfigError("budget_unit must be 'occurrences' or 'vocabulary'");
  }
  c.smoothing = j.value("smoothing", c.smoothing);
  c.seed = j.value("seed", c.seed);
  c.validate();
}

std::vector<double> sample_dx_noise(std::size_t d, double eta, Rng& rng) {
  if (!(eta > 0)) throw ConfigError("eta must be positive");
  if (d == 0) throw ConfigError("noise dimension must be positive");
  std::gamma_distribution<double> radius(double(d), 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double r = radius(rng) / eta;
  std::vector<double> v(d);
  double norm2 = 0.0;
  do {
    norm2 = 0.0;
    for (double& x : v) {
      x = normal(rng);
      norm2 += x * x;
    }
  } while (norm2 == 0.0);
  const double scale = r / std::sqrt(norm2);
  for (double& x : v) x *= scale;
  return v;
}

EmbeddingSearch::EmbeddingSearch(const Tensor& embedding, std::span<const std::int32_t> excluded) {
  if (embedding.rank() != 2) throw DimensionError("embedding matrix must be rank 2");
  rows_ = embedding.dim(0);
  dim_ = embedding.dim(1);
  table_.assign(embedding.data().begin(), embedding.data().end());
  std::set<std::int32_t> skip(excluded.begin(), excluded.end());
  for (std::size_t i = 0; i < rows_; ++i) {
    if (!skip.count(static_cast<std::int32_t>(i))) candidates_.push_back(static_cast<std::int32_t>(i));
  }
  if (candidates_.empty()) throw ConfigError("nearest-neighbor search has no candidate rows");
}

std::int32_t EmbeddingSearch::nearest(std::span<const double> v) const {
  if (v.size() != dim_) {
    throw DimensionError("query of length " + std::to_string(v.size()) +
                         " against embeddings of width " + std::to_string(dim_));
  }
  std::int32_t best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::int32_t id : candidates_) {
    const double* row = table_.data() + static_cast<std::size_t>(id) * dim_;
    double acc[8] = {};
    std::size_t j = 0;
    for (; j + 8 <= dim_; j += 8) {
      for (std::size_t l = 0; l < 8; ++l) acc[l] += (v[j + l] - row[j + l]) * (v[j + l] - row[j + l]);
    }
    for (; j < dim_; ++j) acc[0] += (v[j] - row[j]) * (v[j] - row[j]);
    const double dist = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    if (dist < best_d) {  // strict: the first (lowest) id wins ties
      best_d = dist;
      best = id;
    }
  }
  return best;
}

std::span<const std::int32_t> structural_ids() { return kStructural; }

std::int32_t nearest_neighbor(std::span<const float> v, const Tensor& embedding,
                              std::span<const std::int32_t> excluded) {
  EmbeddingSearch search(embedding, excluded);
  std::vector<double> q(v.begin(), v.end());
  return search.nearest(q);
}

PrivatizedEmbedding privatize_embedding(std::span<const float> phi, double eta, Rng& rng,
                                        const Tensor& embedding, const EmbeddingSearch& search) {
  if (phi.size() != search.dim()) throw DimensionError("embedding width mismatch");
  std::vector<double> noisy = sample_dx_noise(phi.size(), eta, rng);
  for (std::size_t j = 0; j < phi.size(); ++j) noisy[j] += phi[j];
  PrivatizedEmbedding out;
  out.token = search.nearest(noisy);
  const std::size_t d = search.dim();
  auto row = embedding.data().subspan(static_cast<std::size_t>(out.token) * d, d);
  out.phi_bar.assign(row.begin(), row.end());
  return out;
}

double TokenClassStats::frequency(std::size_t m, std::size_t c) const {
  return (count(m, c) + alpha) / (class_totals[c] + alpha * double(vocab_size));
}

double TokenClassStats::occurrences(std::size_t m) const {
  double s = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) s += count(m, c);
  return s;
}

TokenClassStats token_class_stats(std::span<const std::vector<std::int32_t>> sequences,
                                  std::span<const std::int32_t> labels, std::size_t vocab_size,
                                  std::size_t num_classes, double alpha,
                                  std::span<const std::int32_t> ignore_ids) {
  if (sequences.empty()) throw DataError("token statistics need a nonempty dataset");
  if (sequences.size() != labels.size()) throw DimensionError("one label per sequence required");
  if (!(alpha >= 0)) throw ConfigError("smoothing must be nonnegative");
  TokenClassStats s;
  s.vocab_size = vocab_size;
  s.num_classes = num_classes;
  s.alpha = alpha;
  s.counts.assign(vocab_size * num_classes, 0.0);
  s.class_totals.assign(num_classes, 0.0);
  std::vector<std::size_t> samples_per_class(num_classes, 0);
  const std::set<std::int32_t> ignore(ignore_ids.begin(), ignore_ids.end());
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    const std::int32_t y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw LabelError("label " + std::to_string(y) + " outside [0, " +
                       std::to_string(num_classes) + ")");
    }
    ++samples_per_class[static_cast<std::size_t>(y)];
    for (std::int32_t id : sequences[i]) {
      if (ignore.count(id)) continue;
      if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
        throw VocabError("token id " + std::to_string(id) + " outside vocabulary");
      }
      s.counts[static_cast<std::size_t>(id) * num_classes + static_cast<std::size_t>(y)] += 1.0;
      s.class_totals[static_cast<std::size_t>(y)] += 1.0;
      s.total_occurrences += 1.0;
    }
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (samples_per_class[c] == 0) throw DataError("class " + std::to_string(c) + " has no samples");
  }
  return s;
}

TokenClassStats token_class_stats(const data::Corpus& corpus, double alpha) {
  const auto seqs = corpus.sequences();
  const auto labels = corpus.labels();
  return token_class_stats(seqs, labels, corpus.vocab.size(), corpus.num_classes, alpha,
                           kStructural);
}

UtilityMatrix utility_importance(const TokenClassStats& stats) {
  UtilityMatrix ui;
  ui.vocab_size = stats.vocab_size;
  ui.num_classes = stats.num_classes;
  ui.values.assign(stats.vocab_size * stats.num_classes, 0.0);
  std::vector<double> logp(stats.num_classes);
  for (std::size_t m = 0; m < stats.vocab_size; ++m) {
    for (std::size_t c = 0; c < stats.num_classes; ++c) logp[c] = std::log(stats.frequency(m, c));
    for (std::size_t c = 0; c < stats.num_classes; ++c) {
      double v = 0.0;
      for (std::size_t o = 0; o < stats.num_classes; ++o) {
        if (o != c) v += logp[c] - logp[o];
      }
      ui.values[m * stats.num_classes + c] = v;
    }
  }
  return ui;
}

ContributingSet select_contributing(const UtilityMatrix& ui, const TokenClassStats& stats,
                                    double budget, BudgetUnit unit) {
  if (!(budget >= 0 && budget <= 1)) throw ConfigError("budget must lie in [0, 1]");
  if (ui.vocab_size != stats.vocab_size || ui.num_classes != stats.num_classes) {
    throw DimensionError("utility matrix and statistics disagree on shape");
  }
  const std::size_t V = ui.vocab_size, C = ui.num_classes;
  std::vector<std::vector<std::int32_t>> ranked(C);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t m = 0; m < V; ++m) {
      if (ui.at(m, c) > 0) ranked[c].push_back(static_cast<std::int32_t>(m));
    }
    std::stable_sort(ranked[c].begin(), ranked[c].end(), [&](std::int32_t a, std::int32_t b) {
      const double ua = ui.at(std::size_t(a), c), ub = ui.at(std::size_t(b), c);
      return ua != ub ? ua > ub : a < b;
    });
  }
  double total = stats.total_occurrences;
  if (unit == BudgetUnit::kVocabulary) {
    total = 0;
    for (std::size_t m = 0; m < V; ++m) total += stats.occurrences(m) > 0 ? 1.0 : 0.0;
  }

  ContributingSet out;
  out.per_class.assign(C, {});
  out.membership.assign(V, 0);
  out.limit = budget * total;
  std::size_t longest = 0;
  for (const auto& r : ranked) longest = std::max(longest, r.size());

  std::vector<std::uint8_t> member(V, 0);
  double mass = 0.0;
  for (std::size_t k = 1; k <= longest; ++k) {
    double added = 0.0;
    std::vector<std::int32_t> fresh;
    for (std::size_t c = 0; c < C; ++c) {
      if (k > ranked[c].size()) continue;
      const std::int32_t id = ranked[c][k - 1];
      if (member[std::size_t(id)] || std::find(fresh.begin(), fresh.end(), id) != fresh.end()) continue;
      fresh.push_back(id);
      added += unit == BudgetUnit::kOccurrences ? stats.occurrences(std::size_t(id)) : 1.0;
    }
    if (mass + added > out.limit) break;
    mass += added;
    for (std::int32_t id : fresh) member[std::size_t(id)] = 1;
    out.k = k;
  }
  out.mass = mass;
  for (std::size_t c = 0; c < C; ++c) {
    out.per_class[c].assign(ranked[c].begin(),
                            ranked[c].begin() + static_cast<std::ptrdiff_t>(std::min(out.k, ranked[c].size())));
  }
  out.membership = member;
  for (std::size_t m = 0; m < V; ++m) {
    if (member[m]) out.tokens.push_back(static_cast<std::int32_t>(m));
  }
  return out;
}

nlohmann::json contributing_to_json(const ContributingSet& set, const UtilityMatrix& ui) {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t c = 0; c < set.per_class.size(); ++c) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::int32_t id : set.per_class[c]) rows.push_back({id, ui.at(std::size_t(id), c)});
    j[std::to_string(c)] = rows;
  }
  return j;
}

PrivatizedSequence privatize_sequence(std::span<const std::int32_t> ids, const Tensor& embedding,
                                      const PrivacyConfig& config,
                                      const ContributingSet* contributing, Rng& rng,
                                      const EmbeddingSearch& search) {
  const std::size_t d = embedding.dim(1);
  PrivatizedSequence out;
  out.ids.assign(ids.begin(), ids.end());
  out.embeddings = Tensor({ids.size(), d});
  for (std::size_t t = 0; t < ids.size(); ++t) {
    const std::int32_t id = ids[t];
    if (id < 0 || static_cast<std::size_t>(id) >= embedding.dim(0)) {
      throw VocabError("token id " + std::to_string(id) + " outside vocabulary");
    }
    auto row = embedding.data().subspan(static_cast<std::size_t>(id) * d, d);
    const bool structural = id == model::kPad || id == model::kCls || id == model::kSep;
    double eta = config.enabled() ? *config.eta : std::numeric_limits<double>::infinity();
    if (config.cti_enabled && contributing && contributing->contains(id)) {
      eta *= config.cti_eta_multiplier;
    }
    if (structural || !std::isfinite(eta)) {
      std::copy(row.begin(), row.end(), out.embeddings.data().begin() + static_cast<long>(t * d));
      continue;
    }
    PrivatizedEmbedding p = privatize_embedding(row, eta, rng, embedding, search);
    ++out.perturbed;
    if (p.token != id) ++out.replaced;
    out.ids[t] = p.token;
    std::copy(p.phi_bar.begin(), p.phi_bar.end(),
              out.embeddings.data().begin() + static_cast<long>(t * d));
  }
  return out;
}

Rng sample_stream(const PrivacyConfig& config, std::uint64_t pass, std::uint64_t sample_id) {
  return numerics::make_rng(config.seed, {0x70726976, pass, sample_id});
}

}  // namespace sap::privatizer
