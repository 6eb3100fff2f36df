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

#include "sap/data/corpus.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "sap/errors.h"
#include "sap/model/config.h"
#include "sap/numerics/container.h"
#include "sap/numerics/hash.h"
#include "sap/numerics/random.h"

namespace sap::data {

using model::kCls;
using model::kPad;
using model::kSep;
using model::kUnk;

// ------------------------------------------------------------------ vocab

Vocab::Vocab() : Vocab(std::vector<std::string>{}) {}

Vocab::Vocab(std::vector<std::string> tokens) {
  tokens_ = {"[PAD]", "[UNK]", "[CLS]", "[SEP]"};
  for (auto& t : tokens) {
    if (index_.count(t) || t == "[PAD]" || t == "[UNK]" || t == "[CLS]" || t == "[SEP]") {
      continue;
    }
    tokens_.push_back(std::move(t));
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    index_[tokens_[i]] = static_cast<std::int32_t>(i);
  }
}

std::int32_t Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }

const std::string& Vocab::token(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw VocabError("token id " + std::to_string(id) + " outside vocabulary");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

nlohmann::json Vocab::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t i = 0; i < tokens_.size(); ++i) j[tokens_[i]] = i;
  return j;
}

Vocab Vocab::from_json(const nlohmann::json& j) {
  std::vector<std::string> by_id(j.size());
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::size_t id = it.value().get<std::size_t>();
    if (id >= by_id.size()) throw DataError("vocabulary ids are not contiguous");
    by_id[id] = it.key();
  }
  if (by_id.size() < 4) throw DataError("vocabulary lacks reserved tokens");
  return Vocab(std::vector<std::string>(by_id.begin() + 4, by_id.end()));
}

// ------------------------------------------------------------------ corpus

std::vector<std::vector<std::int32_t>> Corpus::sequences() const {
  std::vector<std::vector<std::int32_t>> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.ids);
  return out;
}

std::vector<std::int32_t> Corpus::labels() const {
  std::vector<std::int32_t> out;
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

std::vector<std::int32_t> Corpus::attributes() const {
  std::vector<std::int32_t> out;
  for (const auto& s : samples) out.push_back(s.attribute);
  return out;
}

std::string Corpus::checksum() const {
  numerics::Hasher h;
  for (const auto& t : vocab.tokens()) h.update(std::string_view(t));
  h.update_u64(samples.size());
  for (const auto& s : samples) {
    h.update_u64(s.id);
    h.update_u64(static_cast<std::uint64_t>(s.label));
    h.update_u64(static_cast<std::uint64_t>(static_cast<std::int64_t>(s.attribute)));
    h.update({reinterpret_cast<const std::uint8_t*>(s.ids.data()), s.ids.size() * 4});
  }
  return h.hex_digest();
}

// ------------------------------------------------------------------ text

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (std::ispunct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return out;
}

std::vector<std::int32_t> encode(const std::vector<std::string>& tokens, const Vocab& vocab,
                                 std::size_t max_seq_len) {
  if (max_seq_len < 2) throw ConfigError("max_seq_len must leave room for CLS and SEP");
  std::vector<std::int32_t> ids(max_seq_len, kPad);
  ids[0] = kCls;
  const std::size_t n = std::min(tokens.size(), max_seq_len - 2);
  for (std::size_t i = 0; i < n; ++i) ids[i + 1] = vocab.id(tokens[i]);
  ids[n + 1] = kSep;
  return ids;
}

// ------------------------------------------------------------------ tsv

namespace {

struct RawRow {
  std::int32_t label;
  std::int32_t attribute;
  std::vector<std::string> tokens;
};

std::int32_t parse_int(const std::string& field, const std::filesystem::path& path,
                       std::size_t line, const char* what) {
  try {
    std::size_t used = 0;
    const long v = std::stol(field, &used);
    if (used != field.size() || v < 0) throw std::invalid_argument(what);
    return static_cast<std::int32_t>(v);
  } catch (const std::exception&) {
    throw DataError(path.string() + ":" + std::to_string(line) + ": malformed " + what + " '" +
                    field + "'");
  }
}

std::vector<RawRow> read_tsv(const std::filesystem::path& path, bool has_attribute) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<RawRow> rows;
  std::string text;
  for (std::size_t line = 1; std::getline(in, text); ++line) {
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    const std::size_t want = has_attribute ? 3 : 2;
    while (fields.size() + 1 < want) {
      const std::size_t tab = text.find('\t', start);
      if (tab == std::string::npos) break;
      fields.push_back(text.substr(start, tab - start));
      start = tab + 1;
    }
    if (fields.size() + 1 != want) {
      throw DataError(path.string() + ":" + std::to_string(line) + ": expected " +
                      std::to_string(want) + " tab-separated fields");
    }
    fields.push_back(text.substr(start));
    RawRow row;
    row.label = parse_int(fields[0], path, line, "label");
    row.attribute = has_attribute ? parse_int(fields[1], path, line, "attribute") : -1;
    row.tokens = tokenize(fields.back());
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

DatasetSplits load_tsv(const std::map<std::string, std::filesystem::path>& paths,
                       const VocabPolicy& policy) {
  for (const auto& [name, p] : paths) {
    if (name != "train" && name != "dev" && name != "test") {
      throw DataError("unknown split '" + name + "'");
    }
  }
  auto train_it = paths.find("train");
  if (train_it == paths.end()) throw DataError("a train split is required");
  if (policy.vocab_size < 4) throw ConfigError("vocab_size must be at least 4");

  std::map<std::string, std::vector<RawRow>> raw;
  for (const auto& [name, p] : paths) raw[name] = read_tsv(p, policy.has_attribute);

  std::unordered_map<std::string, std::size_t> freq;
  for (const auto& row : raw["train"]) {
    for (const auto& t : row.tokens) ++freq[t];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  if (ranked.size() > policy.vocab_size - 4) ranked.resize(policy.vocab_size - 4);
  std::vector<std::string> words;
  for (auto& [w, c] : ranked) words.push_back(w);
  Vocab vocab(std::move(words));

  std::int32_t max_label = -1, max_attr = -1;
  for (const auto& [name, rows] : raw) {
    for (const auto& r : rows) {
      max_label = std::max(max_label, r.label);
      max_attr = std::max(max_attr, r.attribute);
    }
  }

  DatasetSplits out;
  std::uint64_t next_id = 0;
  for (const char* name : {"train", "dev", "test"}) {
    Corpus& c = std::string(name) == "train" ? out.train
                : std::string(name) == "dev" ? out.dev
                                             : out.test;
    c.vocab = vocab;
    c.split = name;
    c.num_classes = static_cast<std::size_t>(max_label + 1);
    c.num_attributes = static_cast<std::size_t>(max_attr + 1);
    c.max_seq_len = policy.max_seq_len;
    auto it = raw.find(name);
    if (it == raw.end()) continue;
    for (const auto& r : it->second) {
      c.samples.push_back({next_id++, encode(r.tokens, vocab, policy.max_seq_len), r.label,
                           r.attribute});
    }
  }
  return out;
}

// ------------------------------------------------------------------ synth

void SynthSpec::validate() const {
  if (num_classes < 2) throw ConfigError("synthetic corpus needs at least 2 classes");
  if (max_len < min_len || max_len + 2 > max_seq_len) {
    throw ConfigError("synthetic lengths must satisfy min_len <= max_len <= max_seq_len - 2");
  }
  const std::size_t structured = num_classes * (planted_per_class + cues_per_class) +
                                 num_attributes * markers_per_attribute;
  if (structured + 4 + 1 > vocab_size) throw ConfigError("vocabulary too small for the synthetic layout");
  if (min_len < (num_classes - 1) + 1 + cue_count + marker_count) {
    throw ConfigError("min_len too small to hold planted, cue and marker tokens");
  }
  for (double p : {p_hi, p_lo, cue_purity, marker_prob}) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("synthetic probabilities must lie in [0, 1]");
  }
  if (cue_count > 0 && cues_per_class == 0) throw ConfigError("cue_count requires cue tokens");
  if (marker_prob > 0 && num_attributes > 0 && markers_per_attribute == 0) {
    throw ConfigError("attribute markers requested without marker tokens");
  }
}

void to_json(nlohmann::json& j, const SynthSpec& s) {
  j = {{"num_classes", s.num_classes},
       {"vocab_size", s.vocab_size},
       {"max_seq_len", s.max_seq_len},
       {"num_samples", s.num_samples},
       {"min_len", s.min_len},
       {"max_len", s.max_len},
       {"zipf_exponent", s.zipf_exponent},
       {"planted_per_class", s.planted_per_class},
       {"p_hi", s.p_hi},
       {"p_lo", s.p_lo},
       {"cues_per_class", s.cues_per_class},
       {"cue_count", s.cue_count},
       {"cue_purity", s.cue_purity},
       {"num_attributes", s.num_attributes},
       {"markers_per_attribute", s.markers_per_attribute},
       {"marker_prob", s.marker_prob},
       {"marker_count", s.marker_count},
       {"fractions", s.fractions},
       {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, SynthSpec& s) {
  SynthSpec d;
  s.num_classes = j.value("num_classes", d.num_classes);
  s.vocab_size = j.value("vocab_size", d.vocab_size);
  s.max_seq_len = j.value("max_seq_len", d.max_seq_len);
  s.num_samples = j.value("num_samples", d.num_samples);
  s.min_len = j.value("min_len", d.min_len);
  s.max_len = j.value("max_len", d.max_len);
  s.zipf_exponent = j.value("zipf_exponent", d.zipf_exponent);
  s.planted_per_class = j.value("planted_per_class", d.planted_per_class);
  s.p_hi = j.value("p_hi", d.p_hi);
  s.p_lo = j.value("p_lo", d.p_lo);
  s.cues_per_class = j.value("cues_per_class", d.cues_per_class);
  s.cue_count = j.value("cue_count", d.cue_count);
  s.cue_purity = j.value("cue_purity", d.cue_purity);
  s.num_attributes = j.value("num_attributes", d.num_attributes);
  s.markers_per_attribute = j.value("markers_per_attribute", d.markers_per_attribute);
  s.marker_prob = j.value("marker_prob", d.marker_prob);
  s.marker_count = j.value("marker_count", d.marker_count);
  s.fractions = j.value("fractions", d.fractions);
  s.seed = j.value("seed", d.seed);
}

SynthLayout synth_layout(const SynthSpec& spec) {
  spec.validate();
  std::vector<std::int32_t> ids(spec.vocab_size - 4);
  std::iota(ids.begin(), ids.end(), 4);
  numerics::Rng rng = numerics::make_rng(spec.seed, {0x6c61796f7574});
  std::shuffle(ids.begin(), ids.end(), rng);
  auto it = ids.begin();
  auto take = [&](std::size_t n) {
    std::vector<std::int32_t> out(it, it + static_cast<std::ptrdiff_t>(n));
    it += static_cast<std::ptrdiff_t>(n);
    return out;
  };
  SynthLayout layout;
  for (std::size_t c = 0; c < spec.num_classes; ++c) layout.planted.push_back(take(spec.planted_per_class));
  for (std::size_t c = 0; c < spec.num_classes; ++c) layout.cues.push_back(take(spec.cues_per_class));
  for (std::size_t a = 0; a < spec.num_attributes; ++a) {
    layout.markers.push_back(take(spec.markers_per_attribute));
  }
  layout.background.assign(it, ids.end());
  return layout;
}

Corpus synth_generate(const SynthSpec& spec) {
  const SynthLayout layout = synth_layout(spec);
  std::vector<std::string> words;
  for (std::size_t i = 4; i < spec.vocab_size; ++i) words.push_back("w" + std::to_string(i));

  Corpus corpus;
  corpus.vocab = Vocab(std::move(words));
  corpus.split = "all";
  corpus.num_classes = spec.num_classes;
  corpus.num_attributes = spec.num_attributes;
  corpus.max_seq_len = spec.max_seq_len;

  std::vector<double> weights(layout.background.size());
  for (std::size_t r = 0; r < weights.size(); ++r) {
    weights[r] = 1.0 / std::pow(double(r + 1), spec.zipf_exponent);
  }
  std::discrete_distribution<std::size_t> background(weights.begin(), weights.end());
  numerics::Rng rng = numerics::make_rng(spec.seed, {0x73796e7468});
  std::uniform_int_distribution<std::size_t> length(spec.min_len, spec.max_len);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto pick = [&](const std::vector<std::int32_t>& pool) {
    return pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
  };

  for (std::size_t i = 0; i < spec.num_samples; ++i) {
    const auto label = static_cast<std::int32_t>(i % spec.num_classes);
    const std::int32_t attribute =
        spec.num_attributes
            ? static_cast<std::int32_t>(
                  std::uniform_int_distribution<std::size_t>(0, spec.num_attributes - 1)(rng))
            : -1;
    const std::size_t len = length(rng);
    std::vector<std::int32_t> content(len);
    for (auto& t : content) t = layout.background[background(rng)];

    std::vector<std::int32_t> inserts;
    bool own_planted = false;
    if (spec.planted_per_class > 0) {
      for (std::size_t c = 0; c < spec.num_classes; ++c) {
        const bool own = static_cast<std::int32_t>(c) == label;
        if (unit(rng) < (own ? spec.p_hi : spec.p_lo)) {
          inserts.push_back(pick(layout.planted[c]));
          own_planted |= own;
        }
      }
    }
    if (!own_planted) {
      for (std::size_t k = 0; k < spec.cue_count; ++k) {
        std::size_t c = static_cast<std::size_t>(label);
        if (unit(rng) >= spec.cue_purity) {
          c = (c + 1 + std::uniform_int_distribution<std::size_t>(0, spec.num_classes - 2)(rng)) %
              spec.num_classes;
        }
        inserts.push_back(pick(layout.cues[c]));
      }
    }
    if (attribute >= 0 && unit(rng) < spec.marker_prob) {
      for (std::size_t k = 0; k < spec.marker_count; ++k) {
        inserts.push_back(pick(layout.markers[static_cast<std::size_t>(attribute)]));
      }
    }
    std::vector<std::size_t> slots(len);
    std::iota(slots.begin(), slots.end(), 0);
    std::shuffle(slots.begin(), slots.end(), rng);
    for (std::size_t k = 0; k < inserts.size(); ++k) content[slots[k]] = inserts[k];

    Sample s;
    s.id = i;
    s.label = label;
    s.attribute = attribute;
    s.ids.assign(spec.max_seq_len, kPad);
    s.ids[0] = kCls;
    std::copy(content.begin(), content.end(), s.ids.begin() + 1);
    s.ids[len + 1] = kSep;
    corpus.samples.push_back(std::move(s));
  }
  return corpus;
}

// ------------------------------------------------------------------ split

DatasetSplits split_corpus(const Corpus& corpus, const std::array<double, 3>& fractions,
                           std::uint64_t seed) {
  const double total = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(total - 1.0) > 1e-9 || *std::min_element(fractions.begin(), fractions.end()) < 0) {
    throw DataError("split fractions must be nonnegative and sum to 1");
  }
  std::map<std::int32_t, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
    by_label[corpus.samples[i].label].push_back(i);
  }
  DatasetSplits out;
  Corpus* parts[3] = {&out.train, &out.dev, &out.test};
  const char* names[3] = {"train", "dev", "test"};
  for (int k = 0; k < 3; ++k) {
    parts[k]->vocab = corpus.vocab;
    parts[k]->split = names[k];
    parts[k]->num_classes = corpus.num_classes;
    parts[k]->num_attributes = corpus.num_attributes;
    parts[k]->max_seq_len = corpus.max_seq_len;
  }
  std::vector<std::size_t> assigned[3];
  for (auto& [label, members] : by_label) {
    numerics::Rng rng = numerics::make_rng(seed, {0x73706c6974, static_cast<std::uint64_t>(label)});
    std::shuffle(members.begin(), members.end(), rng);
    const double n = double(members.size());
    const std::size_t b1 = static_cast<std::size_t>(std::llround(n * fractions[0]));
    const std::size_t b2 = static_cast<std::size_t>(std::llround(n * (fractions[0] + fractions[1])));
    assigned[0].insert(assigned[0].end(), members.begin(), members.begin() + long(b1));
    assigned[1].insert(assigned[1].end(), members.begin() + long(b1), members.begin() + long(b2));
    assigned[2].insert(assigned[2].end(), members.begin() + long(b2), members.end());
  }
  for (int k = 0; k < 3; ++k) {
    if (assigned[k].empty()) throw DataError(std::string("split '") + names[k] + "' would be empty");
    std::sort(assigned[k].begin(), assigned[k].end());
    for (std::size_t i : assigned[k]) parts[k]->samples.push_back(corpus.samples[i]);
  }
  return out;
}

// ------------------------------------------------------------------ cache

void save_corpus(const std::filesystem::path& path, const Corpus& corpus) {
  const std::size_t n = corpus.samples.size(), len = corpus.max_seq_len;
  numerics::Tensor ids({n, len}), meta({n, 3});
  for (std::size_t i = 0; i < n; ++i) {
    const Sample& s = corpus.samples[i];
    if (s.ids.size() != len) throw DataError("sample length differs from max_seq_len");
    for (std::size_t t = 0; t < len; ++t) ids.at(i, t) = static_cast<float>(s.ids[t]);
    meta.at(i, 0) = static_cast<float>(s.id);
    meta.at(i, 1) = static_cast<float>(s.label);
    meta.at(i, 2) = static_cast<float>(s.attribute);
  }
  nlohmann::json header = {{"split", corpus.split},
                           {"num_classes", corpus.num_classes},
                           {"num_attributes", corpus.num_attributes},
                           {"max_seq_len", len},
                           {"vocab", corpus.vocab.tokens()}};
  numerics::write_container(path, header, {{"ids", &ids}, {"meta", &meta}});
}

Corpus load_corpus(const std::filesystem::path& path) {
  numerics::Container c = numerics::read_container(path);
  Corpus corpus;
  auto tokens = c.meta.at("vocab").get<std::vector<std::string>>();
  if (tokens.size() < 4) throw DataError("cached vocabulary lacks reserved tokens");
  corpus.vocab = Vocab(std::vector<std::string>(tokens.begin() + 4, tokens.end()));
  corpus.split = c.meta.at("split").get<std::string>();
  corpus.num_classes = c.meta.at("num_classes").get<std::size_t>();
  corpus.num_attributes = c.meta.at("num_attributes").get<std::size_t>();
  corpus.max_seq_len = c.meta.at("max_seq_len").get<std::size_t>();
  const numerics::Tensor& ids = c.get("ids");
  const numerics::Tensor& meta = c.get("meta");
  const std::size_t n = ids.rank() == 2 ? ids.dim(0) : 0;
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.id = static_cast<std::uint64_t>(meta.at(i, 0));
    s.label = static_cast<std::int32_t>(meta.at(i, 1));
    s.attribute = static_cast<std::int32_t>(meta.at(i, 2));
    for (std::size_t t = 0; t < corpus.max_seq_len; ++t) {
      s.ids.push_back(static_cast<std::int32_t>(ids.at(i, t)));
    }
    corpus.samples.push_back(std::move(s));
  }
  return corpus;
}

}  // namespace sap::data
