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

#ifndef SAP_DATA_CORPUS_H_
#define SAP_DATA_CORPUS_H_

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

namespace sap::data {

// Token string <-> id table. Ids 0..3 are PAD, UNK, CLS, SEP.
class Vocab {
 public:
  // Only the reserved tokens.
  Vocab();
  explicit Vocab(std::vector<std::string> tokens);

  std::int32_t id(std::string_view token) const;  // UNK when absent
  bool contains(std::string_view token) const;
  const std::string& token(std::int32_t id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  // {token: id}
  nlohmann::json to_json() const;
  static Vocab from_json(const nlohmann::json& j);

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
};

struct Sample {
  std::uint64_t id = 0;             // stable index in the source corpus
  std::vector<std::int32_t> ids;    // CLS ... SEP PAD..., length max_seq_len
  std::int32_t label = 0;
  std::int32_t attribute = -1;      // -1 when absent
};

struct Corpus {
  std::vector<Sample> samples;
  Vocab vocab;
  std::string split;  // "train", "dev", "test" or "all"
  std::size_t num_classes = 0;
  std::size_t num_attributes = 0;
  std::size_t max_seq_len = 0;

  std::vector<std::vector<std::int32_t>> sequences() const;
  std::vector<std::int32_t> labels() const;
  std::vector<std::int32_t> attributes() const;
  // BLAKE2b over vocab, ids, labels and attributes.
  std::string checksum() const;
};

// Lowercases and splits on whitespace; each punctuation character becomes a
// token of its own.
std::vector<std::string> tokenize(std::string_view text);

// CLS + ids (truncated to max_seq_len - 2) + SEP, padded with PAD.
std::vector<std::int32_t> encode(const std::vector<std::string>& tokens, const Vocab& vocab,
                                 std::size_t max_seq_len);

struct VocabPolicy {
  std::size_t vocab_size = 2000;
  std::size_t max_seq_len = 64;
  bool has_attribute = false;
};

struct DatasetSplits {
  Corpus train, dev, test;
};

// Loads label TAB [attribute TAB] text files. `paths` maps split names
// ("train" required, "dev"/"test" optional) to files. The vocabulary is built
// from the train split: the vocab_size - 4 most frequent tokens, ties broken
// alphabetically. Throws DataError naming the file and line.
DatasetSplits load_tsv(const std::map<std::string, std::filesystem::path>& paths,
                       const VocabPolicy& policy);

struct SynthSpec {
  std::size_t num_classes = 2;
  std::size_t vocab_size = 2000;
  std::size_t max_seq_len = 32;
  std::size_t num_samples = 2500;
  std::size_t min_len = 18;  // content tokens, excluding CLS/SEP
  std::size_t max_len = 28;
  double zipf_exponent = 1.0;
  // Planted discriminative tokens: a sample carries its own class's token
  // with probability p_hi and each other class's token with probability p_lo.
  // Samples that carry their own planted token get no cue tokens.
  std::size_t planted_per_class = 1;
  double p_hi = 0.19;
  double p_lo = 0.004;
  // Weaker class cues for the remaining samples: cue_count tokens drawn from
  // the own class's cue set with probability cue_purity, else from another
  // class's.
  std::size_t cues_per_class = 12;
  std::size_t cue_count = 3;
  double cue_purity = 0.85;
  // Attribute markers, independent of the class label.
  std::size_t num_attributes = 2;
  std::size_t markers_per_attribute = 2;
  double marker_prob = 1.0;
  std::size_t marker_count = 3;  // marker occurrences per marked sample
  std::array<double, 3> fractions = {0.8, 0.1, 0.1};
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const SynthSpec& s);
void from_json(const nlohmann::json& j, SynthSpec& s);

// Ids of the structural token groups of a synthetic corpus.
struct SynthLayout {
  std::vector<std::vector<std::int32_t>> planted;  // [class] -> ids
  std::vector<std::vector<std::int32_t>> cues;     // [class] -> ids
  std::vector<std::vector<std::int32_t>> markers;  // [attribute] -> ids
  std::vector<std::int32_t> background;            // by Zipf rank
};

SynthLayout synth_layout(const SynthSpec& spec);
// Whole corpus, split tag "all".
Corpus synth_generate(const SynthSpec& spec);

// Label-stratified partition. Throws DataError if any split is empty or the
// fractions do not sum to 1.
DatasetSplits split_corpus(const Corpus& corpus, const std::array<double, 3>& fractions,
                           std::uint64_t seed);

// Corpus cache in the tensor container format.
void save_corpus(const std::filesystem::path& path, const Corpus& corpus);
Corpus load_corpus(const std::filesystem::path& path);

}  // namespace sap::data

#endif  // SAP_DATA_CORPUS_H_
