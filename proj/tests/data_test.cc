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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "gtest/gtest.h"
#include "sap/data/corpus.h"
#include "sap/errors.h"
#include "sap/model/config.h"

namespace sap::data {
namespace {

using model::kCls;
using model::kPad;
using model::kSep;
using model::kUnk;

class TempDir {
 public:
  TempDir() {
    path_ = std::filesystem::temp_directory_path() /
            ("sap_data_test_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
             "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  std::filesystem::path file(const std::string& name, const std::string& contents) const {
    std::ofstream(path_ / name) << contents;
    return path_ / name;
  }

 private:
  std::filesystem::path path_;
};

TEST(TokenizeTest, LowercasesAndSplitsPunctuation) {
  EXPECT_EQ(tokenize("Great movie, REALLY!"),
            (std::vector<std::string>{"great", "movie", ",", "really", "!"}));
}

TEST(TokenizeTest, Idempotent) {
  const std::string text = "It's  a\tfine-day... OK?";
  auto once = tokenize(text);
  std::string joined;
  for (const auto& t : once) joined += t + " ";
  EXPECT_EQ(tokenize(joined), once);
}

TEST(TokenizeTest, IdStringIdRoundTrip) {
  Vocab v({"alpha", "beta", "gamma"});
  for (std::int32_t id = 0; id < static_cast<std::int32_t>(v.size()); ++id) {
    EXPECT_EQ(v.id(v.token(id)), id);
  }
  EXPECT_THROW(v.token(99), VocabError);
}

TEST(LoadTsvTest, FormatTrace) {
  TempDir dir;
  auto train = dir.file("train.tsv", "1\tgreat movie\n0\tbad film\n");
  VocabPolicy policy;
  policy.max_seq_len = 6;
  DatasetSplits s = load_tsv({{"train", train}}, policy);
  ASSERT_EQ(s.train.samples.size(), 2u);
  const Sample& first = s.train.samples[0];
  EXPECT_EQ(first.label, 1);
  EXPECT_EQ(first.ids, (std::vector<std::int32_t>{kCls, s.train.vocab.id("great"),
                                                  s.train.vocab.id("movie"), kSep, kPad, kPad}));
  EXPECT_NE(s.train.vocab.id("great"), kUnk);
}

TEST(LoadTsvTest, UnknownWordMapsToUnk) {
  TempDir dir;
  auto train = dir.file("train.tsv", "1\tgreat movie\n");
  auto test = dir.file("test.tsv", "0\tunseen words\n");
  DatasetSplits s = load_tsv({{"train", train}, {"test", test}}, VocabPolicy{});
  EXPECT_EQ(s.test.samples[0].ids[1], kUnk);
  EXPECT_EQ(s.test.samples[0].ids[2], kUnk);
}

TEST(LoadTsvTest, VocabularyKeepsMostFrequentTrainTokens) {
  TempDir dir;
  auto train = dir.file("train.tsv", "0\ta a a b b c\n1\ta b d\n");
  VocabPolicy policy;
  policy.vocab_size = 6;
  DatasetSplits s = load_tsv({{"train", train}}, policy);
  EXPECT_EQ(s.train.vocab.size(), 6u);
  EXPECT_TRUE(s.train.vocab.contains("a"));
  EXPECT_TRUE(s.train.vocab.contains("b"));
  EXPECT_FALSE(s.train.vocab.contains("c"));
}

TEST(LoadTsvTest, AttributeColumn) {
  TempDir dir;
  auto train = dir.file("train.tsv", "1\t0\thello there\n0\t1\tbye\n");
  VocabPolicy policy;
  policy.has_attribute = true;
  DatasetSplits s = load_tsv({{"train", train}}, policy);
  EXPECT_EQ(s.train.samples[1].attribute, 1);
  EXPECT_EQ(s.train.num_attributes, 2u);
}

TEST(LoadTsvTest, MalformedLineReportsLineNumber) {
  TempDir dir;
  auto train = dir.file("train.tsv", "1\tfine\nnot-a-label\ttext\n");
  try {
    load_tsv({{"train", train}}, VocabPolicy{});
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
  auto missing_tab = dir.file("t2.tsv", "1 no tab here\n");
  EXPECT_THROW(load_tsv({{"train", missing_tab}}, VocabPolicy{}), DataError);
}

TEST(LoadTsvTest, UnknownSplitReferenceThrows) {
  TempDir dir;
  auto train = dir.file("train.tsv", "1\tx\n");
  EXPECT_THROW(load_tsv({{"train", train}, {"validation", train}}, VocabPolicy{}), DataError);
}

TEST(LoadTsvTest, ReloadGivesIdenticalChecksum) {
  TempDir dir;
  auto train = dir.file("train.tsv", "1\tgreat movie\n0\tbad film , truly\n");
  EXPECT_EQ(load_tsv({{"train", train}}, VocabPolicy{}).train.checksum(),
            load_tsv({{"train", train}}, VocabPolicy{}).train.checksum());
}

// Smoothed class-conditional frequencies and the class-vs-rest log-ratio
// score, counted directly from the corpus.
std::vector<std::vector<double>> brute_force_scores(const Corpus& c) {
  const std::size_t V = c.vocab.size(), C = c.num_classes;
  std::vector<std::vector<double>> count(V, std::vector<double>(C, 0.0));
  std::vector<double> totals(C, 0.0);
  for (const auto& s : c.samples) {
    for (std::int32_t id : s.ids) {
      if (id == kPad || id == kCls || id == kSep) continue;
      count[std::size_t(id)][std::size_t(s.label)] += 1;
      totals[std::size_t(s.label)] += 1;
    }
  }
  std::vector<std::vector<double>> ui(V, std::vector<double>(C, 0.0));
  for (std::size_t m = 0; m < V; ++m) {
    for (std::size_t a = 0; a < C; ++a) {
      for (std::size_t b = 0; b < C; ++b) {
        if (a == b) continue;
        ui[m][a] += std::log((count[m][a] + 1) / (totals[a] + double(V))) -
                    std::log((count[m][b] + 1) / (totals[b] + double(V)));
      }
    }
  }
  return ui;
}

void expect_planted_are_top_ui(const SynthSpec& spec) {
  const Corpus corpus = synth_generate(spec);
  const SynthLayout layout = synth_layout(spec);
  auto ui = brute_force_scores(corpus);
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    std::vector<std::pair<double, std::int32_t>> ranked;
    for (std::size_t m = 4; m < ui.size(); ++m) ranked.push_back({-ui[m][c], std::int32_t(m)});
    std::sort(ranked.begin(), ranked.end());
    std::set<std::int32_t> top;
    for (std::size_t k = 0; k < spec.planted_per_class; ++k) top.insert(ranked[k].second);
    EXPECT_EQ(top, std::set<std::int32_t>(layout.planted[c].begin(), layout.planted[c].end()))
        << "class " << c << " seed " << spec.seed;
  }
}

TEST(SynthGenerateTest, PlantedTokensAreTopUtilityTokens) {
  SynthSpec spec;
  spec.p_hi = 0.3;
  spec.p_lo = 0.01;
  expect_planted_are_top_ui(spec);
}

TEST(SynthGenerateTest, PlantedTokensAreTopUtilityTokensForDefaultSpecAcrossSeeds) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SynthSpec spec;
    spec.seed = seed;
    expect_planted_are_top_ui(spec);
  }
}

TEST(SynthGenerateTest, DeterministicPerSeed) {
  SynthSpec spec;
  spec.num_samples = 300;
  EXPECT_EQ(synth_generate(spec).checksum(), synth_generate(spec).checksum());
  SynthSpec other = spec;
  other.seed = 1;
  EXPECT_NE(synth_generate(spec).checksum(), synth_generate(other).checksum());
}

TEST(SynthGenerateTest, SequencesAreWellFormed) {
  SynthSpec spec;
  const Corpus corpus = synth_generate(spec);
  EXPECT_EQ(corpus.samples.size(), spec.num_samples);
  for (const auto& s : corpus.samples) {
    ASSERT_EQ(s.ids.size(), spec.max_seq_len);
    EXPECT_EQ(s.ids[0], kCls);
    std::size_t sep = 0;
    while (s.ids[sep] != kSep) ++sep;
    EXPECT_GE(sep - 1, spec.min_len);
    EXPECT_LE(sep - 1, spec.max_len);
    for (std::size_t t = sep + 1; t < s.ids.size(); ++t) EXPECT_EQ(s.ids[t], kPad);
    for (std::size_t t = 1; t < sep; ++t) EXPECT_GE(s.ids[t], 4);
  }
}

// Multinomial logistic regression on bag-of-words counts; test accuracy.
double bow_linear_accuracy(const DatasetSplits& s, std::size_t V, std::size_t C) {
  auto features = [&](const Sample& x) {
    std::map<std::size_t, double> f;
    for (std::int32_t id : x.ids) {
      if (id >= 4) f[std::size_t(id)] += 1.0;
    }
    return f;
  };
  std::vector<std::vector<double>> w(C, std::vector<double>(V, 0.0));
  for (int epoch = 0; epoch < 20; ++epoch) {
    for (const auto& x : s.train.samples) {
      auto f = features(x);
      std::vector<double> z(C, 0.0);
      for (std::size_t c = 0; c < C; ++c) {
        for (auto [j, v] : f) z[c] += w[c][j] * v;
      }
      const double mx = *std::max_element(z.begin(), z.end());
      double sum = 0;
      for (auto& v : z) sum += (v = std::exp(v - mx));
      for (std::size_t c = 0; c < C; ++c) {
        const double g = z[c] / sum - (std::int32_t(c) == x.label ? 1.0 : 0.0);
        for (auto [j, v] : f) w[c][j] -= 0.05 * g * v;
      }
    }
  }
  std::size_t correct = 0;
  for (const auto& x : s.test.samples) {
    auto f = features(x);
    std::size_t best = 0;
    double best_z = -1e300;
    for (std::size_t c = 0; c < C; ++c) {
      double z = 0;
      for (auto [j, v] : f) z += w[c][j] * v;
      if (z > best_z) best_z = z, best = c;
    }
    correct += std::int32_t(best) == x.label;
  }
  return double(correct) / double(s.test.samples.size());
}

TEST(SynthGenerateTest, NoPlantedSignalMeansChanceAccuracy) {
  SynthSpec spec;
  spec.planted_per_class = 0;
  spec.cue_count = 0;
  spec.num_samples = 2000;
  spec.fractions = {0.5, 0.1, 0.4};
  DatasetSplits s = split_corpus(synth_generate(spec), spec.fractions, 1);
  const double acc = bow_linear_accuracy(s, spec.vocab_size, 2);
  // 800 test samples: 3.5 binomial standard deviations around 0.5.
  EXPECT_NEAR(acc, 0.5, 0.062);
}

TEST(SynthGenerateTest, PlantedSignalIsLearnable) {
  SynthSpec spec;
  spec.num_samples = 2000;
  DatasetSplits s = split_corpus(synth_generate(spec), {0.5, 0.1, 0.4}, 1);
  EXPECT_GT(bow_linear_accuracy(s, spec.vocab_size, 2), 0.8);
}

TEST(SynthGenerateTest, AttributeIndependentOfLabel) {
  SynthSpec spec;
  spec.num_samples = 4000;
  const Corpus c = synth_generate(spec);
  double joint[2][2] = {{0, 0}, {0, 0}};
  for (const auto& s : c.samples) joint[s.label][s.attribute] += 1;
  const double n = double(c.samples.size());
  for (int y = 0; y < 2; ++y) {
    for (int a = 0; a < 2; ++a) EXPECT_NEAR(joint[y][a] / n, 0.25, 0.03);
  }
}

TEST(SplitCorpusTest, Sizes) {
  SynthSpec spec;
  spec.num_samples = 100;
  DatasetSplits s = split_corpus(synth_generate(spec), {0.8, 0.1, 0.1}, 3);
  EXPECT_EQ(s.train.samples.size(), 80u);
  EXPECT_EQ(s.dev.samples.size(), 10u);
  EXPECT_EQ(s.test.samples.size(), 10u);
}

TEST(SplitCorpusTest, PartitionLaw) {
  SynthSpec spec;
  spec.num_samples = 257;
  const Corpus c = synth_generate(spec);
  DatasetSplits s = split_corpus(c, {0.7, 0.2, 0.1}, 4);
  std::multiset<std::uint64_t> ids;
  for (const Corpus* part : {&s.train, &s.dev, &s.test}) {
    for (const auto& x : part->samples) ids.insert(x.id);
  }
  EXPECT_EQ(ids.size(), c.samples.size());
  EXPECT_EQ(std::set<std::uint64_t>(ids.begin(), ids.end()).size(), c.samples.size());
}

TEST(SplitCorpusTest, StratifiedWithinOneSample) {
  SynthSpec spec;
  spec.num_classes = 3;
  spec.num_samples = 601;
  const Corpus c = synth_generate(spec);
  const std::array<double, 3> fr = {0.6, 0.25, 0.15};
  DatasetSplits s = split_corpus(c, fr, 5);
  std::map<std::int32_t, double> global;
  for (const auto& x : c.samples) global[x.label] += 1.0 / double(c.samples.size());
  int k = 0;
  for (const Corpus* part : {&s.train, &s.dev, &s.test}) {
    std::map<std::int32_t, double> count;
    for (const auto& x : part->samples) count[x.label] += 1;
    for (auto [label, p] : global) {
      EXPECT_LE(std::abs(count[label] - p * double(part->samples.size())), 1.0)
          << "split " << k << " label " << label;
    }
    ++k;
  }
}

TEST(SplitCorpusTest, EmptySplitThrows) {
  SynthSpec spec;
  spec.num_samples = 10;
  EXPECT_THROW(split_corpus(synth_generate(spec), {1.0, 0.0, 0.0}, 0), DataError);
  EXPECT_THROW(split_corpus(synth_generate(spec), {0.5, 0.2, 0.2}, 0), DataError);
}

TEST(CorpusCacheTest, RoundTrip) {
  TempDir dir;
  SynthSpec spec;
  spec.num_samples = 50;
  const Corpus c = synth_generate(spec);
  save_corpus(std::filesystem::temp_directory_path() / "sap_corpus_cache.bin", c);
  const Corpus back = load_corpus(std::filesystem::temp_directory_path() / "sap_corpus_cache.bin");
  std::filesystem::remove(std::filesystem::temp_directory_path() / "sap_corpus_cache.bin");
  EXPECT_EQ(back.checksum(), c.checksum());
  EXPECT_EQ(back.num_classes, c.num_classes);
}

TEST(VocabTest, JsonRoundTrip) {
  Vocab v({"x", "y"});
  EXPECT_EQ(Vocab::from_json(v.to_json()), v);
  EXPECT_EQ(v.to_json()["y"], 5);
}

}  // namespace
}  // namespace sap::data
