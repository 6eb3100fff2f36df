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

#ifndef SAP_PRIVATIZER_PRIVATIZER_H_
#define SAP_PRIVATIZER_PRIVATIZER_H_

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "sap/numerics/random.h"
#include "sap/numerics/tensor.h"

namespace sap::data {
struct Corpus;
}

namespace sap::privatizer {

using numerics::Rng;
using numerics::Tensor;

enum class BudgetUnit { kOccurrences, kVocabulary };

struct PrivacyConfig {
  // Absent means no privatization (eta = infinity).
  std::optional<double> eta;
  bool cti_enabled = false;
  double cti_budget = 0.01;
  // Contributing tokens are perturbed with eta * multiplier; infinity skips
  // them entirely.
  double cti_eta_multiplier = std::numeric_limits<double>::infinity();
  BudgetUnit budget_unit = BudgetUnit::kOccurrences;
  double smoothing = 1.0;
  std::uint64_t seed = 0;

  bool enabled() const { return eta.has_value() && std::isfinite(*eta); }
  // Throws ConfigError.
  void validate() const;
};

void to_json(nlohmann::json& j, const PrivacyConfig& c);
void from_json(const nlohmann::json& j, PrivacyConfig& c);

// n = r * v with r ~ Gamma(shape d, rate eta) and v uniform on the unit
// sphere. The random draws do not depend on eta (r is a unit-rate draw
// divided by eta), so one seed yields the same direction and a rescaled
// magnitude for every eta. Throws ConfigError for eta <= 0 or d == 0.
std::vector<double> sample_dx_noise(std::size_t d, double eta, Rng& rng);

// Exhaustive Euclidean nearest-neighbor search over the rows of E, with
// distances accumulated in double. Ties go to the lowest id.
class EmbeddingSearch {
 public:
  EmbeddingSearch(const Tensor& embedding, std::span<const std::int32_t> excluded);
  std::int32_t nearest(std::span<const double> v) const;
  std::size_t dim() const { return dim_; }
  std::size_t rows() const { return rows_; }

 private:
  std::size_t rows_ = 0, dim_ = 0;
  std::vector<double> table_;
  std::vector<std::int32_t> candidates_;
};

// PAD, CLS and SEP: never candidates and never perturbed.
std::span<const std::int32_t> structural_ids();

// Free-function form; `excluded` rows are skipped. Throws ConfigError when
// every row is excluded and DimensionError on a length mismatch.
std::int32_t nearest_neighbor(std::span<const float> v, const Tensor& embedding,
                              std::span<const std::int32_t> excluded = {});

struct PrivatizedEmbedding {
  std::vector<float> phi_bar;  // exact row of E
  std::int32_t token = 0;
};

// E[nearest_neighbor(phi + n)] with structural rows excluded.
PrivatizedEmbedding privatize_embedding(std::span<const float> phi, double eta, Rng& rng,
                                        const Tensor& embedding, const EmbeddingSearch& search);

struct TokenClassStats {
  std::size_t vocab_size = 0;
  std::size_t num_classes = 0;
  double alpha = 1.0;
  std::vector<double> counts;        // [vocab_size * num_classes]
  std::vector<double> class_totals;  // sum over tokens per class
  double total_occurrences = 0.0;    // counted tokens over all classes

  double count(std::size_t m, std::size_t c) const { return counts[m * num_classes + c]; }
  // (count + alpha) / (class_total + alpha * vocab_size)
  double frequency(std::size_t m, std::size_t c) const;
  double occurrences(std::size_t m) const;
};

// Counts every id not listed in `ignore_ids`. Throws DataError for an empty
// dataset or a class without samples, LabelError for bad labels.
TokenClassStats token_class_stats(std::span<const std::vector<std::int32_t>> sequences,
                                  std::span<const std::int32_t> labels, std::size_t vocab_size,
                                  std::size_t num_classes, double alpha,
                                  std::span<const std::int32_t> ignore_ids = {});
// Corpus form: PAD, CLS and SEP are not counted.
TokenClassStats token_class_stats(const data::Corpus& corpus, double alpha);

struct UtilityMatrix {
  std::size_t vocab_size = 0;
  std::size_t num_classes = 0;
  std::vector<double> values;  // [vocab_size * num_classes]
  double at(std::size_t m, std::size_t c) const { return values[m * num_classes + c]; }
};

// UI[m][c] = sum over c' != c of ln p(m|c) - ln p(m|c').
UtilityMatrix utility_importance(const TokenClassStats& stats);

struct ContributingSet {
  std::vector<std::vector<std::int32_t>> per_class;  // ranked, best first
  std::vector<std::int32_t> tokens;                   // sorted union
  std::vector<std::uint8_t> membership;               // [vocab_size]
  std::size_t k = 0;
  double mass = 0.0;   // occurrences of the union (or its size, by unit)
  double limit = 0.0;  // budget * total

  bool contains(std::int32_t id) const {
    return id >= 0 && static_cast<std::size_t>(id) < membership.size() &&
           membership[static_cast<std::size_t>(id)];
  }
};

// Ranks tokens with positive UI per class and grows a common k while the
// union stays within budget. Throws ConfigError for a budget outside [0, 1].
ContributingSet select_contributing(const UtilityMatrix& ui, const TokenClassStats& stats,
                                    double budget, BudgetUnit unit = BudgetUnit::kOccurrences);

// {"<class>": [[token id, UI], ...]}
nlohmann::json contributing_to_json(const ContributingSet& set, const UtilityMatrix& ui);

struct PrivatizedSequence {
  std::vector<std::int32_t> ids;  // post-remap token ids
  Tensor embeddings;              // [n, d], rows of E for `ids`
  std::size_t perturbed = 0;      // positions that went through the mechanism
  std::size_t replaced = 0;       // positions whose id changed
};

// Applies the mechanism to every non-structural position. Contributing
// tokens are skipped (or use eta * multiplier when finite) when CTI is on.
// Without privatization the input ids come back unchanged.
PrivatizedSequence privatize_sequence(std::span<const std::int32_t> ids, const Tensor& embedding,
                                      const PrivacyConfig& config,
                                      const ContributingSet* contributing, Rng& rng,
                                      const EmbeddingSearch& search);

// Per-sample stream used by the customer: one stream per (pass, sample id).
Rng sample_stream(const PrivacyConfig& config, std::uint64_t pass, std::uint64_t sample_id);

}  // namespace sap::privatizer

#endif  // SAP_PRIVATIZER_PRIVATIZER_H_
