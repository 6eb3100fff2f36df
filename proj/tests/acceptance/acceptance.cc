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

// Acceptance suite. Prints one PASS/FAIL line per criterion; every
// threshold is a constant in this file.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "CLI11.hpp"
#include "gradient_cases.h"
#include "message_cases.h"
#include "sap/errors.h"
#include "sap/harness/experiment.h"
#include "sap/model/forward.h"
#include "sap/numerics/gradient_check.h"
#include "sap/privatizer/privatizer.h"
#include "sap/protocol/session.h"

namespace {

namespace fs = std::filesystem;
using namespace sap;
using harness::Cell;
using harness::ExperimentConfig;
using harness::ResultRow;
using harness::Workspace;
using Clock = std::chrono::steady_clock;

// ------------------------------------------------------------ thresholds

constexpr double kOracleSeconds = 120.0;

constexpr std::size_t kNoiseDim = 64;
constexpr std::size_t kNoiseSamples = 100000;
constexpr double kNoiseMeanTolerance = 0.02;  // relative
constexpr double kNoiseKsMax = 0.01;

constexpr std::size_t kTrendReps = 5;
constexpr double kMonotoneUaSlack = 0.5;  // points, per adjacent pair
constexpr double kMonotoneSeconds = 20 * 60;

constexpr double kCtiTargetEp = 35.0;
constexpr double kCtiMinUaGain = 2.0;
constexpr double kCtiMaxEpShift = 3.0;
constexpr double kCtiBudget = 0.01;

constexpr double kGradTolerance = 1e-4;
constexpr std::uint64_t kGradSeeds = 10;

constexpr std::size_t kDepthReps = 3;
constexpr double kDepthUaSlack = 0.5;    // points, per adjacent pair
constexpr double kDepthUaMaxDrop = 5.0;  // points, shallowest to deepest split
constexpr double kDepthSeconds = 30 * 60;

constexpr double kUnionEta = 50.0;
constexpr std::size_t kUnionEpochs = 6;

constexpr double kAiaChance = 50.0;  // two balanced attribute values
constexpr double kAiaChanceSlack = 5.0;

constexpr std::size_t kWireMessagesPerType = 10000;

// ------------------------------------------------------------ helpers

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string num(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  }
  return true;
}

class Context {
 public:
  explicit Context(fs::path work) : work_(std::move(work)) {}

  // Bundled synthetic dataset and default model; the warmed-up PLM is
  // cached under the work directory.
  ExperimentConfig config(const std::string& eval_split = "dev+test") const {
    ExperimentConfig c;
    c.out_dir = work_;
    c.eval_split = eval_split;
    c.attacks.clear();
    c.spot_checks = 0;
    return c;
  }

  const Workspace& workspace(const ExperimentConfig& c) {
    auto it = cache_.find(c.eval_split);
    if (it == cache_.end()) {
      const auto t = Clock::now();
      it = cache_.emplace(c.eval_split, harness::prepare_workspace(c)).first;
      std::fprintf(stderr, "workspace (%s) ready in %.1fs\n", c.eval_split.c_str(), seconds_since(t));
    }
    return it->second;
  }

  const fs::path& work() const { return work_; }

 private:
  fs::path work_;
  std::map<std::string, Workspace> cache_;
};

Cell make_cell(const ExperimentConfig& c, std::size_t split, std::optional<double> eta, bool cti, bool frozen,
               std::size_t rep) {
  return Cell{split, eta, cti, frozen, rep, c.seed + rep};
}

// Runs one cell and turns a failed row into an exception.
harness::CellOutcome run(const ExperimentConfig& c, const Workspace& ws, const Cell& cell, bool keep = false) {
  harness::CellOptions opts;
  opts.keep_session = keep;
  auto out = harness::run_cell(c, ws, cell, opts);
  if (!out.row.ok()) throw Error("cell s=" + std::to_string(cell.split) + " eta=" + harness::format_eta(cell.eta) +
                                 " rep=" + std::to_string(cell.rep) + ": " + out.row.status);
  std::fprintf(stderr, "  s=%zu eta=%s cti=%d %s rep=%zu ua=%.2f", cell.split, harness::format_eta(cell.eta).c_str(),
               int(cell.cti), cell.frozen ? "frozen" : "trainable", cell.rep, out.row.ua);
  for (const auto& [a, v] : out.row.ep) std::fprintf(stderr, " ep_%s=%.2f", a.c_str(), v);
  std::fprintf(stderr, " (%.1fs)\n", out.row.wall_seconds);
  return out;
}

// ------------------------------------------------------------ criteria

// 1. Frozen s=0 without privatization equals the centralized oracle bitwise.
Verdict oracle_equivalence(Context& ctx) {
  const auto c = ctx.config("dev");
  const auto& ws = ctx.workspace(c);
  const auto t = Clock::now();
  const auto session = harness::cell_session(c, make_cell(c, 0, std::nullopt, false, true, 0));
  const auto split = protocol::run_session(session, ws.plm, ws.splits.train, ws.eval, c.transport);
  const auto central = protocol::run_centralized(session, ws.plm, ws.splits.train, ws.eval);
  const double secs = seconds_since(t);
  const bool losses = !central.losses.empty() && bitwise_equal(split.customer.losses, central.losses);
  const bool acc = std::bit_cast<std::uint64_t>(split.eval_accuracy) == std::bit_cast<std::uint64_t>(central.eval_accuracy);
  const bool preds = split.predictions == central.predictions;
  Verdict v;
  v.pass = losses && acc && preds && secs < kOracleSeconds;
  v.detail = std::to_string(central.losses.size()) + " losses " + (losses ? "identical" : "DIFFER") +
             ", dev accuracy split " + num(100 * split.eval_accuracy) + " vs centralized " +
             num(100 * central.eval_accuracy) + (preds ? ", predictions identical" : ", predictions DIFFER") + ", " +
             num(secs, 1) + "s (limit " + num(kOracleSeconds, 0) + "s)";
  return v;
}

// 2. EIA-NN inverts every non-PAD token of an unprivatized s=0 transcript.
Verdict total_inversion(Context& ctx) {
  auto c = ctx.config();
  c.attacks = {"eia_nn"};
  const auto& ws = ctx.workspace(c);
  const auto out = run(c, ws, make_cell(c, 0, std::nullopt, false, true, 0));
  const auto& report = out.reports.at(0);
  std::map<std::uint64_t, const std::vector<std::int32_t>*> truth;
  for (const auto& s : ws.splits.train.samples) truth[s.id] = &s.ids;
  std::size_t positions = 0, hit = 0;
  for (const auto& s : report.samples) {
    const auto& ids = *truth.at(s.sample_id);
    for (std::size_t j = 0; j < s.predicted.size(); ++j) {
      if (s.predicted[j] < 0) continue;
      ++positions;
      hit += s.predicted[j] == ids[j];
    }
  }
  std::size_t non_pad = 0;
  for (const auto& s : ws.splits.train.samples) {
    non_pad += std::count_if(s.ids.begin(), s.ids.end(), [](std::int32_t id) { return id != model::kPad; });
  }
  Verdict v;
  v.pass = report.scored > 0 && report.recovered == report.scored && hit == positions && positions == non_pad;
  v.detail = "content tokens " + std::to_string(report.recovered) + "/" + std::to_string(report.scored) +
             ", all non-PAD positions " + std::to_string(hit) + "/" + std::to_string(positions) + " of " +
             std::to_string(non_pad) + " in the training set, X=" + num(100 * report.success, 1) + "%";
  return v;
}

// 3. Noise magnitude follows Gamma(d, eta).
Verdict noise_law(Context&) {
  Verdict v;
  v.pass = true;
  std::ostringstream d;
  for (double eta : {16.0, 64.0, 256.0}) {
    numerics::Rng rng = numerics::make_rng(2024, {static_cast<std::uint64_t>(eta)});
    std::vector<double> norms(kNoiseSamples);
    for (auto& r : norms) {
      const auto n = privatizer::sample_dx_noise(kNoiseDim, eta, rng);
      double sq = 0.0;
      for (double x : n) sq += x * x;
      r = std::sqrt(sq);
    }
    const double expected = double(kNoiseDim) / eta;
    const double rel = std::abs(mean(norms) - expected) / expected;
    std::sort(norms.begin(), norms.end());
    double ks = 0.0;
    const double n = double(norms.size());
    for (std::size_t i = 0; i < norms.size(); ++i) {
      const double f = boost::math::gamma_p(double(kNoiseDim), eta * norms[i]);
      ks = std::max({ks, f - double(i) / n, double(i + 1) / n - f});
    }
    v.pass &= rel < kNoiseMeanTolerance && ks < kNoiseKsMax;
    d << "eta=" << eta << ": mean err " << num(100 * rel, 3) << "%, KS " << num(ks, 5) << "; ";
  }
  v.detail = d.str() + "limits " + num(100 * kNoiseMeanTolerance, 0) + "% and " + num(kNoiseKsMax, 2) + " at " +
             std::to_string(kNoiseSamples) + " samples, d=" + std::to_string(kNoiseDim);
  return v;
}

// 4. EP strictly decreasing and UA non-decreasing over the eta grid.
Verdict privacy_utility_monotonicity(Context& ctx) {
  auto c = ctx.config();
  c.attacks = {"eia_nn"};
  c.eta_grid = {45.0, 50.0, 55.0, 60.0, 65.0, 70.0};
  c.repetitions = kTrendReps;
  c.spot_checks = 3;
  const auto& ws = ctx.workspace(c);
  const auto t = Clock::now();
  const auto result = harness::run_sweep(c, ws, [](std::size_t i, const ResultRow& r) {
    std::fprintf(stderr, "  [%zu] eta=%s seed=%llu ua=%.2f ep=%.2f (%.1fs) %s\n", i, harness::format_eta(r.eta).c_str(),
                 static_cast<unsigned long long>(r.seed.value_or(0)), r.ua, r.ep.count("eia_nn") ? r.ep.at("eia_nn") : -1.0,
                 r.wall_seconds, r.ok() ? "" : r.status.c_str());
  });
  const double secs = seconds_since(t);
  harness::write_csv(ctx.work() / "criterion4" / "rows.csv", result.rows);
  auto summary = result.summary;
  std::sort(summary.begin(), summary.end(), [](const ResultRow& a, const ResultRow& b) { return *a.eta < *b.eta; });
  Verdict v;
  v.pass = summary.size() == c.eta_grid.size() && secs < kMonotoneSeconds;
  std::ostringstream d;
  for (std::size_t i = 0; i < summary.size(); ++i) {
    const auto& r = summary[i];
    v.pass &= r.ok() && r.reps == kTrendReps;
    d << "eta " << harness::format_eta(r.eta) << ": UA " << num(r.ua) << " EP " << num(r.ep.at("eia_nn")) << "; ";
    if (i) {
      v.pass &= r.ep.at("eia_nn") < summary[i - 1].ep.at("eia_nn");
      v.pass &= r.ua >= summary[i - 1].ua - kMonotoneUaSlack;
    }
  }
  bool reproduced = !result.spot_checks.empty();
  for (const auto& s : result.spot_checks) reproduced &= s.at("match").get<bool>();
  v.pass &= reproduced;
  d << "spot checks " << (reproduced ? "reproduced" : "DID NOT reproduce") << "; " << num(secs / 60, 1)
    << " min (limit " << num(kMonotoneSeconds / 60, 0) << ")";
  v.detail = d.str();
  return v;
}

// 5. CTI improves UA at about the same EP; contributing tokens stay within
// 1% of training occurrences.
Verdict cti_benefit(Context& ctx) {
  auto c = ctx.config();
  c.attacks = {"eia_nn"};
  c.session.privacy.cti_budget = kCtiBudget;
  const auto& ws = ctx.workspace(c);
  const std::vector<double> candidates = {45.0, 47.5, 50.0};
  std::map<double, std::pair<double, double>> sap;  // eta -> (UA, EP)
  for (double eta : candidates) {
    std::vector<double> ua, ep;
    for (std::size_t r = 0; r < kTrendReps; ++r) {
      const auto out = run(c, ws, make_cell(c, 0, eta, false, true, r));
      ua.push_back(out.row.ua);
      ep.push_back(out.row.ep.at("eia_nn"));
    }
    sap[eta] = {mean(ua), mean(ep)};
  }
  double best = candidates.front();
  for (double eta : candidates) {
    if (std::abs(sap[eta].second - kCtiTargetEp) < std::abs(sap[best].second - kCtiTargetEp)) best = eta;
  }
  const bool bracketed = sap[candidates.front()].second >= kCtiTargetEp && sap[candidates.back()].second <= kCtiTargetEp;

  // Occurrences recounted from the training corpus.
  std::map<std::int32_t, double> occurrences;
  double total = 0.0;
  for (const auto& s : ws.splits.train.samples) {
    for (auto id : s.ids) {
      if (model::is_special(id)) continue;
      occurrences[id] += 1.0;
      total += 1.0;
    }
  }
  std::vector<double> ua, ep;
  bool budget = true;
  double mass = 0.0;
  std::size_t tokens = 0;
  for (std::size_t r = 0; r < kTrendReps; ++r) {
    const auto out = run(c, ws, make_cell(c, 0, best, true, true, r), true);
    ua.push_back(out.row.ua);
    ep.push_back(out.row.ep.at("eia_nn"));
    const auto& set = out.session->customer.contributing;
    if (!set) {
      budget = false;
      continue;
    }
    mass = 0.0;
    for (auto id : set->tokens) mass += occurrences.count(id) ? occurrences.at(id) : 0.0;
    tokens = set->tokens.size();
    budget &= !set->tokens.empty() && mass <= kCtiBudget * total && mass == set->mass;
  }
  const double d_ua = mean(ua) - sap[best].first;
  const double d_ep = mean(ep) - sap[best].second;
  Verdict v;
  v.pass = bracketed && budget && d_ua >= kCtiMinUaGain && std::abs(d_ep) <= kCtiMaxEpShift;
  std::ostringstream d;
  d << "SAP EP by eta:";
  for (double eta : candidates) d << " " << eta << "->" << num(sap[eta].second);
  d << (bracketed ? "" : " (35% NOT bracketed)") << "; at eta " << best << " SAP UA " << num(sap[best].first)
    << " EP " << num(sap[best].second) << ", SAP-CTI UA " << num(mean(ua)) << " EP " << num(mean(ep))
    << "; dUA " << num(d_ua) << " (min " << num(kCtiMinUaGain, 1) << "), dEP " << num(d_ep) << " (max "
    << num(kCtiMaxEpShift, 1) << "); " << tokens << " contributing tokens, " << num(mass, 0) << " of " << num(total, 0)
    << " occurrences = " << num(100 * mass / total, 3) << "%" << (budget ? "" : " BUDGET VIOLATED");
  v.detail = d.str();
  return v;
}

// 6. Finite-difference checks of every primitive and the LoRA paths.
model::PLMConfig grad_config(std::uint64_t seed) {
  model::PLMConfig c;
  c.vocab_size = 40;
  c.embed_dim = 16;
  c.num_blocks = 4;
  c.num_heads = 2;
  c.ffn_dim = 24;
  c.max_seq_len = 10;
  c.num_classes = 3;
  c.seed = seed;
  c.lora_rank = 4;
  c.lora_alpha = 8;
  return c;
}

model::TokenBatch random_batch(const model::PLMConfig& c, std::size_t b, numerics::Rng& rng) {
  std::vector<std::vector<std::int32_t>> rows;
  std::uniform_int_distribution<std::int32_t> tok(4, static_cast<std::int32_t>(c.vocab_size) - 1);
  std::uniform_int_distribution<std::size_t> len(0, c.max_seq_len - 2);
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<std::int32_t> s(c.max_seq_len, model::kPad);
    const std::size_t n = len(rng);
    s[0] = model::kCls;
    for (std::size_t t = 1; t <= n; ++t) s[t] = tok(rng);
    s[n + 1] = model::kSep;
    rows.push_back(s);
  }
  return model::TokenBatch::from_sequences(rows);
}

Verdict gradient_integrity(Context&) {
  using numerics::DoubleGraph;
  std::size_t checks = 0, failed = 0;
  double worst = 0.0;
  std::string worst_name;
  auto record = [&](const std::string& name, const numerics::GradientCheckReport& r) {
    ++checks;
    failed += !r.passed;
    if (r.max_relative_error > worst) {
      worst = r.max_relative_error;
      worst_name = name;
    }
    if (!r.passed) std::fprintf(stderr, "  %s: %s\n", name.c_str(), r.summary().c_str());
  };
  for (const auto& pc : numerics::test_support::primitive_cases()) {
    for (std::uint64_t seed = 0; seed < kGradSeeds; ++seed) {
      numerics::Rng rng = numerics::make_rng(seed, {0x7072});
      std::vector<numerics::DoubleTensor> inputs;
      for (const auto& s : pc.shapes) inputs.push_back(numerics::test_support::random_input(s, rng));
      numerics::GradientCheckOptions options;
      options.seed = seed;
      record(pc.name, numerics::gradient_check(pc.op, inputs, kGradTolerance, options));
    }
  }
  const std::vector<std::int32_t> labels = {0, 2, 1};
  for (std::uint64_t seed = 0; seed < kGradSeeds; ++seed) {
    // Vendor path: LoRA adapters and head over fixed representations.
    auto plm = model::build_plm(grad_config(seed));
    auto [bottom, top] = model::split_model(plm, 1);
    model::attach_lora(top, seed);
    numerics::Rng rng = numerics::make_rng(seed, {0x6c});
    for (auto& b : top.blocks) {
      b.lora.q_b = numerics::normal_tensor(b.lora.q_b.shape(), 0.3, rng);
      b.lora.v_b = numerics::normal_tensor(b.lora.v_b.shape(), 0.3, rng);
    }
    const auto batch = random_batch(plm.config, 3, rng);
    const auto reps = model::bottom_representations(bottom, batch).cast<double>();
    numerics::GradientCheckOptions options;
    options.seed = seed;
    options.step = 1e-4;
    model::set_trainable(top);
    std::vector<numerics::Tensor*> params;
    for (const auto& t : model::top_trainables(top)) params.push_back(t.tensor);
    record("lora_top", numerics::gradient_check_parameters(
                           [&](DoubleGraph& g) {
                             return g.cross_entropy(model::forward_top(g, top, g.constant(reps), batch.mask), labels);
                           },
                           params, kGradTolerance, options));

    // End to end: trainable bottom, privatization-free embedding lookup,
    // LoRA top, cross-entropy.
    model::set_trainable(bottom);
    std::vector<numerics::Tensor*> all;
    for (const auto& t : model::bottom_trainables(bottom)) all.push_back(t.tensor);
    for (auto* p : params) all.push_back(p);
    options.max_entries_per_input = 24;
    record("end_to_end", numerics::gradient_check_parameters(
                             [&](DoubleGraph& g) {
                               auto h = model::forward_bottom(g, bottom, batch);
                               return g.cross_entropy(model::forward_top(g, top, h, batch.mask), labels);
                             },
                             all, kGradTolerance, options));
  }
  Verdict v;
  v.pass = failed == 0;
  v.detail = std::to_string(checks - failed) + "/" + std::to_string(checks) + " checks passed over " +
             std::to_string(kGradSeeds) + " seeds, worst relative error " + num(worst, 7) + " (" + worst_name +
             "), tolerance " + num(kGradTolerance, 4);
  return v;
}

// 7. EIA-opt gets stronger and UA stays within a few points as the split
// moves deeper.
Verdict split_depth(Context& ctx) {
  auto c = ctx.config();
  c.attacks = {"eia_opt"};
  const auto& ws = ctx.workspace(c);
  const auto t = Clock::now();
  const std::vector<std::size_t> splits = {1, 2, 4};
  std::vector<double> ua, ep;
  for (std::size_t s : splits) {
    std::vector<double> u, e;
    for (std::size_t r = 0; r < kDepthReps; ++r) {
      const auto out = run(c, ws, make_cell(c, s, std::nullopt, false, true, r));
      u.push_back(out.row.ua);
      e.push_back(out.row.ep.at("eia_opt"));
    }
    ua.push_back(mean(u));
    ep.push_back(mean(e));
  }
  const double secs = seconds_since(t);
  Verdict v;
  v.pass = secs < kDepthSeconds && ua.front() - ua.back() <= kDepthUaMaxDrop;
  std::ostringstream d;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    d << "s=" << splits[i] << ": EP " << num(ep[i]) << " UA " << num(ua[i]) << "; ";
    if (i) {
      v.pass &= ep[i] >= ep[i - 1];
      v.pass &= ua[i] <= ua[i - 1] + kDepthUaSlack;
    }
  }
  d << "UA drop " << num(ua.front() - ua.back()) << " (max " << num(kDepthUaMaxDrop, 1) << "); " << num(secs / 60, 1)
    << " min (limit " << num(kDepthSeconds / 60, 0) << ")";
  v.detail = d.str();
  return v;
}

// 8. Union attack over a trainable bottom's epochs beats single-shot EIA-NN
// on the frozen session.
Verdict union_degradation(Context& ctx) {
  auto c = ctx.config();
  c.session.epochs = kUnionEpochs;
  c.attacks = {"eia_nn", "eia_union"};
  const auto& ws = ctx.workspace(c);
  std::vector<double> frozen, union_ep, trainable_nn;
  for (std::size_t r = 0; r < kTrendReps; ++r) {
    frozen.push_back(run(c, ws, make_cell(c, 0, kUnionEta, false, true, r)).row.ep.at("eia_nn"));
    const auto t = run(c, ws, make_cell(c, 0, kUnionEta, false, false, r));
    union_ep.push_back(t.row.ep.at("eia_union"));
    trainable_nn.push_back(t.row.ep.at("eia_nn"));
  }
  Verdict v;
  v.pass = mean(union_ep) < mean(frozen);
  v.detail = "eta " + num(kUnionEta, 0) + ", " + std::to_string(kUnionEpochs) + " epochs: trainable eia_union EP " +
             num(mean(union_ep)) + " vs frozen eia_nn EP " + num(mean(frozen)) + " (trainable first-epoch eia_nn " +
             num(mean(trainable_nn)) + ")";
  return v;
}

// 9. AIA improves with more labels, weakens with more noise and is at
// chance on shuffled labels.
Verdict aia_behavior(Context& ctx) {
  auto c = ctx.config();
  // The frozen s=0 bottom makes the observed representations independent
  // of fine-tuning, so one epoch suffices.
  c.session.epochs = 1;
  c.attacks = {"aia"};
  const auto& ws = ctx.workspace(c);
  const std::vector<std::size_t> labeled = {8, 32, 128};
  const std::vector<std::optional<double>> etas = {std::nullopt, 50.0, 30.0};
  std::map<std::size_t, std::vector<double>> by_nl;                 // eta none
  std::vector<std::vector<double>> by_eta(etas.size());               // N_l = 128
  std::vector<double> shuffled;
  for (std::size_t r = 0; r < kTrendReps; ++r) {
    for (std::size_t e = 0; e < etas.size(); ++e) {
      c.aia_labeled = labeled.back();
      const auto cell = make_cell(c, 0, etas[e], false, true, r);
      const auto out = run(c, ws, cell, true);
      by_eta[e].push_back(100 * out.reports.at(0).success);
      if (etas[e]) continue;
      const auto messages = harness::observed_messages(out.session->vendor_log);
      for (std::size_t nl : labeled) {
        auto a = c;
        a.aia_labeled = nl;
        by_nl[nl].push_back(100 * harness::attack_messages(a, ws, cell, messages).at(0).success);
      }
      auto s = c;
      s.aia_shuffle_labels = true;
      shuffled.push_back(100 * harness::attack_messages(s, ws, cell, messages).at(0).success);
    }
  }
  Verdict v;
  v.pass = true;
  std::ostringstream d;
  d << "X by N_l (eta none):";
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    d << " " << labeled[i] << "->" << num(mean(by_nl[labeled[i]]));
    if (i) v.pass &= mean(by_nl[labeled[i]]) >= mean(by_nl[labeled[i - 1]]);
  }
  d << "; X by eta (N_l " << labeled.back() << "):";
  for (std::size_t e = 0; e < etas.size(); ++e) {
    d << " " << harness::format_eta(etas[e]) << "->" << num(mean(by_eta[e]));
    if (e) v.pass &= mean(by_eta[e]) < mean(by_eta[e - 1]);
  }
  const double chance_gap = std::abs(mean(shuffled) - kAiaChance);
  v.pass &= chance_gap <= kAiaChanceSlack;
  d << "; shuffled labels " << num(mean(shuffled)) << " (chance " << num(kAiaChance, 0) << " +/- "
    << num(kAiaChanceSlack, 0) << ")";
  v.detail = d.str();
  return v;
}

// 10. Wire round trips and transport-independent transcripts.
Verdict wire_fidelity(Context& ctx) {
  std::size_t round_trips = 0, mismatches = 0;
  for (auto type : protocol::kAllMessageTypes) {
    numerics::Rng rng = numerics::make_rng(77, {static_cast<std::uint64_t>(type)});
    for (std::size_t i = 0; i < kWireMessagesPerType; ++i) {
      const auto m = protocol::test_support::random_message(type, rng);
      const auto bytes = protocol::encode_message(m);
      const auto back = protocol::decode_message(bytes);
      mismatches += !(back == m) || protocol::encode_message(back) != bytes;
      ++round_trips;
    }
  }
  auto c = ctx.config();
  const auto& ws = ctx.workspace(c);
  auto session = harness::cell_session(c, make_cell(c, 1, 50.0, true, false, 0));
  session.epochs = 1;
  const auto a = protocol::run_session(session, ws.plm, ws.splits.train, ws.eval, protocol::TransportKind::kLoopback);
  const auto b = protocol::run_session(session, ws.plm, ws.splits.train, ws.eval, protocol::TransportKind::kTcp);
  const bool same = a.vendor_log.digest() == b.vendor_log.digest() && bitwise_equal(a.customer.losses, b.customer.losses);
  Verdict v;
  v.pass = mismatches == 0 && same;
  v.detail = std::to_string(round_trips - mismatches) + "/" + std::to_string(round_trips) +
             " round trips exact; loopback and TCP transcripts (s=1, trainable bottom, eta 50, CTI) " +
             (same ? "identical, digest " + a.vendor_log.digest().substr(0, 16) : std::string("DIFFER"));
  return v;
}

struct Criterion {
  int id;
  const char* title;
  std::function<Verdict(Context&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  std::string work = "acceptance_work";
  app.add_option("--only", only, "criteria to run (default: all)")->check(CLI::Range(1, 10));
  app.add_option("--work", work, "cache and output directory");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria = {
      {1, "oracle equivalence", oracle_equivalence},
      {2, "total inversion without privatization", total_inversion},
      {3, "noise law", noise_law},
      {4, "privacy-utility monotonicity", privacy_utility_monotonicity},
      {5, "CTI benefit", cti_benefit},
      {6, "gradient integrity", gradient_integrity},
      {7, "split-depth hardening", split_depth},
      {8, "union-attack degradation", union_degradation},
      {9, "AIA behavior", aia_behavior},
      {10, "wire fidelity", wire_fidelity},
  };
  Context ctx(work);
  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t = Clock::now();
    Verdict v;
    try {
      v = c.run(ctx);
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    failures += !v.pass;
    std::printf("criterion %2d %s  %s: %s [%.1fs]\n", c.id, v.pass ? "PASS" : "FAIL", c.title, v.detail.c_str(),
                seconds_since(t));
    std::fflush(stdout);
  }
  return failures ? 1 : 0;
}
