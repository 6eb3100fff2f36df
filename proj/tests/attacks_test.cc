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

#include <gtest/gtest.h>

#include <numeric>

#include "sap/attacks/attacks.h"
#include "sap/errors.h"
#include "sap/model/forward.h"
#include "sap/numerics/random.h"
#include "sap/protocol/session.h"

namespace sap::attacks {
namespace {

using protocol::Message;
using protocol::MessageType;

data::SynthSpec small_spec(std::size_t samples = 100) {
  data::SynthSpec s;
  s.vocab_size = 120;
  s.max_seq_len = 14;
  s.min_len = 7;
  s.max_len = 12;
  s.num_samples = samples;
  s.cues_per_class = 4;
  s.cue_count = 2;
  s.seed = 5;
  return s;
}

model::PLMConfig small_plm_config() {
  model::PLMConfig c;
  c.vocab_size = 120;
  c.embed_dim = 16;
  c.num_blocks = 4;
  c.num_heads = 2;
  c.ffn_dim = 24;
  c.max_seq_len = 14;
  c.num_classes = 2;
  c.seed = 3;
  c.lora_rank = 4;
  c.lora_alpha = 8;
  return c;
}

GroundTruth truth_of(const data::Corpus& corpus) {
  GroundTruth t;
  for (const auto& s : corpus.samples) t[s.id] = s.ids;
  return t;
}

// Bottom-model outputs for a corpus, as the vendor would observe them
// without privatization.
Observations observe(model::BottomModel& bottom, const data::Corpus& corpus) {
  Message m;
  m.type = MessageType::kRepBatchFull;
  const auto seqs = corpus.sequences();
  const auto batch = model::TokenBatch::from_sequences(seqs);
  m.tensors.push_back(model::bottom_representations(bottom, batch));
  m.mask = batch.mask;
  for (const auto& s : corpus.samples) m.ids.push_back(s.id);
  return collect_observations(std::span<const Message>(&m, 1));
}

std::vector<Message> session_messages(const protocol::SessionOutcome& out) {
  std::vector<Message> msgs;
  for (const auto& f : out.vendor_log.frames()) msgs.push_back(protocol::decode_message(f));
  return msgs;
}

protocol::SessionConfig session(std::size_t split) {
  protocol::SessionConfig c;
  c.split = split;
  c.epochs = 1;
  c.batch_size = 8;
  c.eval_batch_size = 16;
  c.lora_seed = 1;
  c.shuffle_seed = 2;
  c.privacy.seed = 3;
  return c;
}

class AttacksTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    corpus_ = new data::Corpus(data::synth_generate(small_spec()));
    plm_ = new model::PLM(model::build_plm(small_plm_config()));
  }
  static void TearDownTestSuite() {
    delete corpus_;
    delete plm_;
  }
  static data::Corpus* corpus_;
  static model::PLM* plm_;
};
data::Corpus* AttacksTest::corpus_ = nullptr;
model::PLM* AttacksTest::plm_ = nullptr;

// ----------------------------------------------------------------- basics

TEST(EmpiricalPrivacy, IsOneMinusSuccess) {
  EXPECT_NEAR(empirical_privacy(0.4923), 0.5077, 1e-12);
  EXPECT_NEAR(empirical_privacy(0.6146), 0.3854, 1e-12);
  EXPECT_EQ(empirical_privacy(0.0), 1.0);
  EXPECT_EQ(empirical_privacy(1.0), 0.0);
  EXPECT_THROW(empirical_privacy(1.01), AttackError);
  EXPECT_THROW(empirical_privacy(-0.1), AttackError);
  EXPECT_THROW(empirical_privacy(std::nan("")), AttackError);
}

TEST_F(AttacksTest, ObservationsFromSessionCoverEverySample) {
  data::Corpus none = *corpus_;
  none.samples.resize(10);
  auto c = session(0);
  auto out = protocol::run_session(c, *plm_, *corpus_, none, protocol::TransportKind::kLoopback,
                                   {std::nullopt, true});
  const auto msgs = session_messages(out);
  const auto obs = collect_observations(msgs);
  // REP_BATCH_FULL once plus the eval requests.
  EXPECT_EQ(obs.size(), corpus_->samples.size() + 10);
  EXPECT_EQ(obs.seq_len(), 14u);
  EXPECT_EQ(obs.mask.size(), obs.size() * 14);
  const auto part = obs.slice(3, 7);
  EXPECT_EQ(part.size(), 4u);
  EXPECT_EQ(part.ids[0], obs.ids[3]);
  EXPECT_EQ(part.reps.at(1, 2, 3), obs.reps.at(4, 2, 3));
  EXPECT_THROW(obs.slice(5, obs.size() + 1), AttackError);
  EXPECT_TRUE(observations_by_epoch(msgs).empty());
}

TEST_F(AttacksTest, ObservationsByEpochGroupsTrainableBatches) {
  auto c = session(1);
  c.bottom_trainable = true;
  c.epochs = 2;
  data::Corpus train = *corpus_;
  train.samples.resize(32);
  data::Corpus none = train;
  none.samples.clear();
  auto out = protocol::run_session(c, *plm_, train, none, protocol::TransportKind::kLoopback,
                                   {std::nullopt, true});
  const auto per_epoch = observations_by_epoch(session_messages(out));
  ASSERT_EQ(per_epoch.size(), 2u);
  for (const auto& o : per_epoch) {
    auto ids = o.ids;
    std::sort(ids.begin(), ids.end());
    std::vector<std::uint64_t> expected;
    for (const auto& s : train.samples) expected.push_back(s.id);
    std::sort(expected.begin(), expected.end());
    EXPECT_EQ(ids, expected);
  }
}

// ----------------------------------------------------------------- EIA-NN

TEST_F(AttacksTest, NearestNeighborRecoversUnprivatizedEmbeddings) {
  auto [bottom, top] = model::split_model(*plm_, 0);
  const auto obs = observe(bottom, *corpus_);
  const auto r = eia_nearest_neighbor(obs, plm_->token_embedding, plm_->position_embedding, truth_of(*corpus_));
  EXPECT_EQ(r.success, 1.0);
  EXPECT_EQ(r.empirical_privacy, 0.0);
  EXPECT_EQ(r.samples.size(), corpus_->samples.size());
  // CLS, SEP and PAD never count.
  std::size_t content = 0;
  for (const auto& s : corpus_->samples) {
    for (auto id : s.ids) content += !model::is_special(id);
  }
  EXPECT_EQ(r.scored, content);
}

TEST_F(AttacksTest, NearestNeighborReturnsThePrivatizedTokens) {
  auto c = session(0);
  c.privacy.eta = 40.0;
  data::Corpus none = *corpus_;
  none.samples.clear();
  auto out = protocol::run_session(c, *plm_, *corpus_, none, protocol::TransportKind::kLoopback,
                                   {std::nullopt, true}, true);
  const auto obs = collect_observations(session_messages(out));
  const auto r = eia_nearest_neighbor(obs, plm_->token_embedding, plm_->position_embedding, truth_of(*corpus_));
  std::map<std::uint64_t, std::vector<std::int32_t>> sent;
  for (const auto& rec : out.customer.privatized) sent[rec.sample_id] = rec.ids;
  ASSERT_EQ(sent.size(), corpus_->samples.size());
  std::size_t checked = 0;
  for (const auto& s : r.samples) {
    for (std::size_t t = 0; t < s.scored.size(); ++t) {
      if (!s.scored[t]) continue;
      EXPECT_EQ(s.predicted[t], sent.at(s.sample_id)[t]);
      ++checked;
    }
  }
  EXPECT_EQ(checked, r.scored);
  // Some tokens were replaced, so the attack is imperfect.
  EXPECT_GT(out.customer.replaced, 0u);
  EXPECT_LT(r.success, 1.0);
}

TEST_F(AttacksTest, NearestNeighborOnNoiseIsNearChance) {
  auto [bottom, top] = model::split_model(*plm_, 0);
  auto obs = observe(bottom, *corpus_);
  auto rng = numerics::make_rng(9);
  obs.reps = numerics::normal_tensor(obs.reps.shape(), 1.0, rng);
  const auto r = eia_nearest_neighbor(obs, plm_->token_embedding, plm_->position_embedding, truth_of(*corpus_));
  EXPECT_LT(r.success, 0.05);
}

TEST_F(AttacksTest, NearestNeighborRejectsBadInputs) {
  auto [bottom, top] = model::split_model(*plm_, 0);
  const auto obs = observe(bottom, *corpus_);
  EXPECT_THROW(eia_nearest_neighbor(obs, plm_->token_embedding, plm_->position_embedding, {}), AttackError);
  Tensor narrow({120, 8});
  EXPECT_THROW(eia_nearest_neighbor(obs, narrow, plm_->position_embedding, truth_of(*corpus_)), AttackError);
}

// ----------------------------------------------------------------- EIA-opt

TEST_F(AttacksTest, OptimizationFromTheTruthStaysThere) {
  auto [bottom, top] = model::split_model(*plm_, 1);
  data::Corpus part = *corpus_;
  part.samples.resize(8);
  const auto obs = observe(bottom, part);
  const auto truth = truth_of(part);
  EiaOptConfig cfg;
  cfg.steps = 50;
  cfg.init_tokens = &truth;
  const auto r = eia_optimization(obs, bottom, truth, cfg);
  EXPECT_EQ(r.success, 1.0);
  EXPECT_EQ(r.failed_samples, 0u);
  // The attacker's copy is left as it was.
  EXPECT_EQ(model::parameter_checksum(bottom), model::parameter_checksum(model::split_model(*plm_, 1).first));
}

TEST_F(AttacksTest, OptimizationInvertsOneBlock) {
  auto [bottom, top] = model::split_model(*plm_, 1);
  data::Corpus part = *corpus_;
  part.samples.resize(16);
  const auto obs = observe(bottom, part);
  const auto r = eia_optimization(obs, bottom, truth_of(part));
  EXPECT_GE(r.success, 0.9);
  EXPECT_EQ(r.samples.size(), 16u);
}

TEST_F(AttacksTest, OptimizationDivergenceMarksChunksFailed) {
  auto [bottom, top] = model::split_model(*plm_, 1);
  data::Corpus part = *corpus_;
  part.samples.resize(4);
  auto obs = observe(bottom, part);
  obs.reps.data()[0] = std::numeric_limits<float>::infinity();
  EiaOptConfig cfg;
  cfg.steps = 3;
  const auto r = eia_optimization(obs, bottom, truth_of(part), cfg);
  EXPECT_EQ(r.failed_samples, 4u);
  EXPECT_EQ(r.recovered, 0u);
  EXPECT_GT(r.scored, 0u);
}

// ----------------------------------------------------------------- union

AttackReport manual(std::vector<std::vector<std::uint8_t>> correct) {
  AttackReport r;
  r.attack = "eia_nn";
  for (std::size_t i = 0; i < correct.size(); ++i) {
    SampleRecovery s;
    s.sample_id = i;
    s.scored.assign(correct[i].size(), 1);
    s.correct = correct[i];
    for (auto c : correct[i]) s.predicted.push_back(c ? 7 : 8);
    r.samples.push_back(s);
    r.scored += s.scored.size();
    r.recovered += std::accumulate(s.correct.begin(), s.correct.end(), std::size_t{0});
  }
  r.success = double(r.recovered) / double(r.scored);
  return r;
}

TEST(EiaUnion, SingleReportIsUnchanged) {
  const auto a = manual({{1, 0, 1}, {0, 0, 1}});
  const auto u = eia_union(std::span<const AttackReport>(&a, 1));
  EXPECT_EQ(u.success, a.success);
  EXPECT_EQ(u.recovered, a.recovered);
  EXPECT_EQ(u.scored, a.scored);
}

TEST(EiaUnion, CountsEitherRecovery) {
  const std::vector<AttackReport> rs = {manual({{1, 0, 0}, {0, 0, 0}}), manual({{0, 1, 0}, {0, 0, 1}})};
  const auto u = eia_union(rs);
  EXPECT_EQ(u.recovered, 3u);
  EXPECT_DOUBLE_EQ(u.success, 0.5);
  EXPECT_GE(u.success, std::max(rs[0].success, rs[1].success));
}

TEST(EiaUnion, MonotoneInReports) {
  auto rng = numerics::make_rng(4);
  std::vector<AttackReport> rs;
  double prev = 0.0;
  for (int k = 0; k < 6; ++k) {
    std::vector<std::vector<std::uint8_t>> c(5, std::vector<std::uint8_t>(9));
    for (auto& row : c) {
      for (auto& v : row) v = std::uniform_real_distribution<double>(0, 1)(rng) < 0.2;
    }
    rs.push_back(manual(c));
    const double x = eia_union(rs).success;
    EXPECT_GE(x, prev);
    prev = x;
  }
}

TEST(EiaUnion, RejectsMismatchedSamples) {
  std::vector<AttackReport> rs = {manual({{1, 0}}), manual({{1, 0}, {0, 1}})};
  EXPECT_THROW(eia_union(rs), AttackError);
  rs[1] = manual({{1, 0, 0}});
  EXPECT_THROW(eia_union(rs), AttackError);
  EXPECT_THROW(eia_union({}), AttackError);
}

// ----------------------------------------------------------------- AIA

class AiaTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    auto spec = small_spec(600);
    corpus_ = new data::Corpus(data::synth_generate(spec));
    auto plm = model::build_plm(small_plm_config());
    auto bottom = model::split_model(plm, 0).first;
    obs_ = new Observations(observe(bottom, *corpus_));
  }
  static void TearDownTestSuite() {
    delete corpus_;
    delete obs_;
  }
  static std::vector<std::int32_t> attrs(std::size_t lo, std::size_t hi) {
    std::vector<std::int32_t> a;
    for (std::size_t i = lo; i < hi; ++i) a.push_back(corpus_->samples[i].attribute);
    return a;
  }
  static data::Corpus* corpus_;
  static Observations* obs_;
};
data::Corpus* AiaTest::corpus_ = nullptr;
Observations* AiaTest::obs_ = nullptr;

TEST_F(AiaTest, RecoversMarkersWithoutPrivatization) {
  const auto r = aia_attack(obs_->slice(0, 300), attrs(0, 300), obs_->slice(300, 600), attrs(300, 600));
  EXPECT_GE(r.success, 0.95);
  EXPECT_EQ(r.scored, 300u);
  EXPECT_EQ(r.attack, "aia");
}

TEST_F(AiaTest, ShuffledLabelsGiveChance) {
  double mean = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto labels = attrs(0, 300);
    auto rng = numerics::make_rng(100 + seed);
    std::shuffle(labels.begin(), labels.end(), rng);
    AiaConfig cfg;
    cfg.seed = seed;
    mean += aia_attack(obs_->slice(0, 300), labels, obs_->slice(300, 600), attrs(300, 600), cfg).success / 5;
  }
  EXPECT_NEAR(mean, 0.5, 0.05);
}

TEST_F(AiaTest, RejectsDegenerateLabels) {
  std::vector<std::int32_t> one(10, 1);
  EXPECT_THROW(aia_attack(obs_->slice(0, 10), one, obs_->slice(10, 20), attrs(10, 20)), AttackError);
  auto lone = attrs(0, 10);
  std::fill(lone.begin(), lone.end(), 0);
  lone[0] = 1;
  EXPECT_THROW(aia_attack(obs_->slice(0, 10), lone, obs_->slice(10, 20), attrs(10, 20)), AttackError);
  EXPECT_THROW(aia_attack(obs_->slice(0, 10), attrs(0, 9), obs_->slice(10, 20), attrs(10, 20)), AttackError);
}

}  // namespace
}  // namespace sap::attacks
