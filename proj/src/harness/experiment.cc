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

#include "sap/harness/experiment.h"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "sap/errors.h"
#include "sap/model/checkpoint.h"
#include "sap/numerics/hash.h"
#include "sap/numerics/random.h"

namespace sap::harness {

using nlohmann::json;
namespace fs = std::filesystem;

// ------------------------------------------------------------------ config

namespace {

json eia_opt_json(const attacks::EiaOptConfig& c) {
  return {{"steps", c.steps},   {"tau_start", c.tau_start}, {"tau_end", c.tau_end},
          {"lr", c.lr},         {"momentum", c.momentum},   {"chunk", c.chunk}};
}

attacks::EiaOptConfig eia_opt_from(const json& j) {
  attacks::EiaOptConfig c;
  c.steps = j.value("steps", c.steps);
  c.tau_start = j.value("tau_start", c.tau_start);
  c.tau_end = j.value("tau_end", c.tau_end);
  c.lr = j.value("lr", c.lr);
  c.momentum = j.value("momentum", c.momentum);
  c.chunk = j.value("chunk", c.chunk);
  return c;
}

attacks::AiaConfig aia_from(const json& j) {
  attacks::AiaConfig c;
  c.hidden = j.value("hidden", c.hidden);
  c.epochs = j.value("epochs", c.epochs);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.seed = j.value("seed", c.seed);
  return c;
}

json eta_json(const std::optional<double>& eta) { return eta ? json(*eta) : json("none"); }

std::optional<double> eta_from(const json& j) {
  if (j.is_null() || (j.is_string() && j.get<std::string>() == "none")) return std::nullopt;
  if (!j.is_number()) throw ConfigError("eta grid entries must be numbers or \"none\"");
  return j.get<double>();
}

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find_if(keys.begin(), keys.end(), [&](const char* k) { return it.key() == k; }) == keys.end()) {
      throw ConfigError("unknown key '" + it.key() + "' in " + where);
    }
  }
}

std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t x = seed * 0x9e3779b97f4a7c15ull + stream * 0xbf58476d1ce4e5b9ull + 0x94d049bb133111ebull;
  x ^= x >> 31;
  x *= 0xd6e8feb86659fd93ull;
  return x ^ (x >> 32);
}

}  // namespace

void ExperimentConfig::validate() const {
  if (eta_grid.empty() || split_grid.empty() || cti_grid.empty() || frozen_grid.empty()) {
    throw ConfigError("grids must be nonempty");
  }
  if (repetitions < 1) throw ConfigError("repetitions must be at least 1");
  if (workers < 1) throw ConfigError("workers must be at least 1");
  for (const auto& e : eta_grid) {
    if (e && !(*e > 0)) throw ConfigError("eta grid values must be positive");
  }
  for (std::size_t s : split_grid) {
    if (s > plm.num_blocks) throw ConfigError("split " + std::to_string(s) + " exceeds the block count");
  }
  for (const auto& a : attacks) {
    if (std::find(kKnownAttacks.begin(), kKnownAttacks.end(), a) == kKnownAttacks.end()) {
      throw ConfigError("unknown attack '" + a + "'");
    }
  }
  if (eval_split != "dev" && eval_split != "test" && eval_split != "dev+test") {
    throw ConfigError("eval_split must be dev, test or dev+test");
  }
  if (dataset.synthetic()) {
    dataset.synth.validate();
    if (plm.vocab_size != dataset.synth.vocab_size || plm.max_seq_len != dataset.synth.max_seq_len ||
        plm.num_classes != dataset.synth.num_classes) {
      throw ConfigError("plm vocab_size, max_seq_len and num_classes must match the synthetic corpus");
    }
  } else {
    if (!dataset.tsv.count("train")) throw ConfigError("tsv dataset needs a train file");
    if (plm.vocab_size < dataset.policy.vocab_size || plm.max_seq_len < dataset.policy.max_seq_len) {
      throw ConfigError("plm vocab_size and max_seq_len must cover the tsv vocabulary policy");
    }
  }
  session.validate();
  if (eia_opt.chunk == 0 || eia_opt.steps == 0) throw ConfigError("eia_opt steps and chunk must be positive");
  if (aia_labeled < 4) throw ConfigError("aia_labeled must be at least 4");
}

void to_json(json& j, const ExperimentConfig& c) {
  json dataset = {{"name", c.dataset.name}};
  if (c.dataset.synthetic()) {
    dataset["synth"] = c.dataset.synth;
  } else {
    json tsv = json::object();
    for (const auto& [k, v] : c.dataset.tsv) tsv[k] = v.string();
    dataset["tsv"] = tsv;
    dataset["policy"] = {{"vocab_size", c.dataset.policy.vocab_size},
                         {"max_seq_len", c.dataset.policy.max_seq_len},
                         {"has_attribute", c.dataset.policy.has_attribute}};
  }
  json etas = json::array();
  for (const auto& e : c.eta_grid) etas.push_back(eta_json(e));
  json bottoms = json::array();
  for (bool f : c.frozen_grid) bottoms.push_back(f ? "frozen" : "trainable");
  j = {{"dataset", dataset},
       {"plm", c.plm},
       {"warmup", c.warmup},
       {"session", c.session},
       {"grid", {{"eta", etas}, {"split", c.split_grid}, {"cti", c.cti_grid}, {"bottom", bottoms}}},
       {"attacks", c.attacks},
       {"repetitions", c.repetitions},
       {"seed", c.seed},
       {"eval_split", c.eval_split},
       {"eia_opt", eia_opt_json(c.eia_opt)},
       {"eia_opt_samples", c.eia_opt_samples},
       {"aia", c.aia},
       {"aia_labeled", c.aia_labeled},
       {"aia_shuffle_labels", c.aia_shuffle_labels},
       {"workers", c.workers},
       {"spot_checks", c.spot_checks},
       {"transport", c.transport == protocol::TransportKind::kTcp ? "tcp" : "loopback"},
       {"dump_payloads", c.dump_payloads},
       {"out_dir", c.out_dir.string()}};
}

void from_json(const json& j, ExperimentConfig& c) {
  reject_unknown(j,
                 {"dataset", "plm", "warmup", "session", "grid", "attacks", "repetitions", "seed", "eval_split",
                  "eia_opt", "eia_opt_samples", "aia", "aia_labeled", "aia_shuffle_labels", "workers",
                  "spot_checks", "transport", "dump_payloads", "out_dir"},
                 "experiment config");
  const ExperimentConfig d;
  c = d;
  if (j.contains("dataset")) {
    const json& ds = j["dataset"];
    reject_unknown(ds, {"name", "synth", "tsv", "policy"}, "dataset");
    c.dataset.name = ds.value("name", d.dataset.name);
    if (ds.contains("synth")) c.dataset.synth = ds["synth"].get<data::SynthSpec>();
    if (ds.contains("tsv")) {
      for (auto it = ds["tsv"].begin(); it != ds["tsv"].end(); ++it) {
        c.dataset.tsv[it.key()] = it.value().get<std::string>();
      }
    }
    if (ds.contains("policy")) {
      const json& p = ds["policy"];
      c.dataset.policy.vocab_size = p.value("vocab_size", c.dataset.policy.vocab_size);
      c.dataset.policy.max_seq_len = p.value("max_seq_len", c.dataset.policy.max_seq_len);
      c.dataset.policy.has_attribute = p.value("has_attribute", c.dataset.policy.has_attribute);
    }
  }
  if (j.contains("plm")) {
    json plm = d.plm;
    plm.update(j["plm"]);
    c.plm = plm.get<model::PLMConfig>();
  }
  if (j.contains("warmup")) c.warmup = j["warmup"].get<model::WarmupConfig>();
  if (j.contains("session")) c.session = j["session"].get<protocol::SessionConfig>();
  if (j.contains("grid")) {
    const json& g = j["grid"];
    reject_unknown(g, {"eta", "split", "cti", "bottom"}, "grid");
    if (g.contains("eta")) {
      c.eta_grid.clear();
      for (const auto& e : g["eta"]) c.eta_grid.push_back(eta_from(e));
    }
    if (g.contains("split")) c.split_grid = g["split"].get<std::vector<std::size_t>>();
    if (g.contains("cti")) c.cti_grid = g["cti"].get<std::vector<bool>>();
    if (g.contains("bottom")) {
      c.frozen_grid.clear();
      for (const auto& b : g["bottom"]) {
        const auto s = b.get<std::string>();
        if (s != "frozen" && s != "trainable") throw ConfigError("grid.bottom entries are frozen or trainable");
        c.frozen_grid.push_back(s == "frozen");
      }
    }
  }
  c.attacks = j.value("attacks", d.attacks);
  c.repetitions = j.value("repetitions", d.repetitions);
  c.seed = j.value("seed", d.seed);
  c.eval_split = j.value("eval_split", d.eval_split);
  if (j.contains("eia_opt")) c.eia_opt = eia_opt_from(j["eia_opt"]);
  c.eia_opt_samples = j.value("eia_opt_samples", d.eia_opt_samples);
  if (j.contains("aia")) c.aia = aia_from(j["aia"]);
  c.aia_labeled = j.value("aia_labeled", d.aia_labeled);
  c.aia_shuffle_labels = j.value("aia_shuffle_labels", d.aia_shuffle_labels);
  c.workers = j.value("workers", d.workers);
  c.spot_checks = j.value("spot_checks", d.spot_checks);
  if (j.contains("transport")) c.transport = protocol::parse_transport(j["transport"].get<std::string>());
  c.dump_payloads = j.value("dump_payloads", d.dump_payloads);
  c.out_dir = j.value("out_dir", d.out_dir.string());
  c.validate();
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  try {
    return j.get<ExperimentConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

// ------------------------------------------------------------------ grid

json Cell::to_json() const {
  return {{"split", split}, {"eta", eta_json(eta)}, {"cti", cti}, {"frozen", frozen}, {"rep", rep}, {"seed", seed}};
}

Cell Cell::from_json(const json& j) {
  Cell c;
  c.split = j.at("split").get<std::size_t>();
  c.eta = eta_from(j.at("eta"));
  c.cti = j.at("cti").get<bool>();
  c.frozen = j.at("frozen").get<bool>();
  c.rep = j.at("rep").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

std::vector<Cell> expand_grid(const ExperimentConfig& config) {
  config.validate();
  std::vector<Cell> cells;
  for (std::size_t s : config.split_grid) {
    for (bool frozen : config.frozen_grid) {
      for (bool cti : config.cti_grid) {
        for (const auto& eta : config.eta_grid) {
          for (std::size_t r = 0; r < config.repetitions; ++r) {
            cells.push_back({s, eta, cti, frozen, r, config.seed + r});
          }
        }
      }
    }
  }
  return cells;
}

protocol::SessionConfig cell_session(const ExperimentConfig& config, const Cell& cell) {
  protocol::SessionConfig s = config.session;
  s.split = cell.split;
  s.bottom_trainable = !cell.frozen;
  s.privacy.eta = cell.eta;
  s.privacy.cti_enabled = cell.cti;
  s.lora_seed = derive(cell.seed, 1);
  s.shuffle_seed = derive(cell.seed, 2);
  s.privacy.seed = derive(cell.seed, 3);
  s.validate();
  return s;
}

// ------------------------------------------------------------------ workspace

namespace {

data::Corpus merge(const data::Corpus& a, const data::Corpus& b, const std::string& name) {
  data::Corpus out = a;
  out.split = name;
  out.samples.insert(out.samples.end(), b.samples.begin(), b.samples.end());
  return out;
}

std::string file_digest(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read " + p.string());
  std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  numerics::Hasher h;
  h.update(std::string_view(bytes));
  return h.hex_digest();
}

}  // namespace

Workspace prepare_workspace(const ExperimentConfig& config, bool use_cache) {
  config.validate();
  Workspace ws;
  json key = {{"version", 1}, {"plm", config.plm}, {"warmup", config.warmup}};
  if (config.dataset.synthetic()) {
    key["synth"] = config.dataset.synth;
  } else {
    json files = json::object();
    for (const auto& [split, path] : config.dataset.tsv) files[split] = file_digest(path);
    key["tsv"] = files;
    key["policy"] = {config.dataset.policy.vocab_size, config.dataset.policy.max_seq_len,
                     config.dataset.policy.has_attribute};
  }
  numerics::Hasher h;
  h.update(std::string_view(key.dump()));
  ws.cache_key = h.hex_digest().substr(0, 16);

  const fs::path cache = config.out_dir / "cache";
  const fs::path plm_path = cache / (ws.cache_key + "_plm.sapt");
  const std::array<std::pair<const char*, data::Corpus*>, 3> parts = {
      {{"train", &ws.splits.train}, {"dev", &ws.splits.dev}, {"test", &ws.splits.test}}};
  bool cached = use_cache && fs::exists(plm_path);
  for (const auto& [name, corpus] : parts) {
    cached = cached && fs::exists(cache / (ws.cache_key + "_" + name + ".sapt"));
  }
  if (cached) {
    for (const auto& [name, corpus] : parts) *corpus = data::load_corpus(cache / (ws.cache_key + "_" + name + ".sapt"));
    ws.plm = model::load_checkpoint(plm_path);
  } else {
    if (config.dataset.synthetic()) {
      ws.splits = data::split_corpus(data::synth_generate(config.dataset.synth), config.dataset.synth.fractions,
                                     config.dataset.synth.seed);
    } else {
      data::VocabPolicy policy = config.dataset.policy;
      ws.splits = data::load_tsv(config.dataset.tsv, policy);
      if (ws.splits.dev.samples.empty()) throw DataError("tsv dataset needs a dev file for evaluation");
    }
    ws.plm = model::build_plm(config.plm);
    if (config.warmup.enabled) model::mlm_warmup(ws.plm, ws.splits.train.sequences(), config.warmup);
    if (use_cache) {
      // Written under temporary names and renamed, so concurrent runs never
      // read a partial file.
      fs::create_directories(cache);
      const std::string tmp = ".tmp" + std::to_string(std::random_device{}());
      for (const auto& [name, corpus] : parts) {
        if (corpus->samples.empty()) continue;
        const fs::path path = cache / (ws.cache_key + "_" + name + ".sapt");
        data::save_corpus(path.string() + tmp, *corpus);
        fs::rename(path.string() + tmp, path);
      }
      model::save_checkpoint(plm_path.string() + tmp, ws.plm, {{"cache_key", key}});
      fs::rename(plm_path.string() + tmp, plm_path);
    }
  }
  if (config.eval_split == "dev") {
    ws.eval = ws.splits.dev;
  } else if (config.eval_split == "test") {
    ws.eval = ws.splits.test;
  } else {
    ws.eval = merge(ws.splits.dev, ws.splits.test, "dev+test");
  }
  if (ws.eval.samples.empty()) throw DataError("evaluation split '" + config.eval_split + "' is empty");
  return ws;
}

// ------------------------------------------------------------------ cells

namespace {

attacks::GroundTruth ground_truth(const Workspace& ws) {
  attacks::GroundTruth t;
  for (const data::Corpus* c : {&ws.splits.train, &ws.splits.dev, &ws.splits.test}) {
    for (const auto& s : c->samples) t[s.id] = s.ids;
  }
  return t;
}

std::map<std::uint64_t, std::int32_t> attributes_by_id(const Workspace& ws) {
  std::map<std::uint64_t, std::int32_t> a;
  for (const data::Corpus* c : {&ws.splits.train, &ws.splits.dev, &ws.splits.test}) {
    for (const auto& s : c->samples) a[s.id] = s.attribute;
  }
  return a;
}

std::vector<std::int32_t> lookup(const std::map<std::uint64_t, std::int32_t>& attrs,
                                 std::span<const std::uint64_t> ids) {
  std::vector<std::int32_t> out;
  for (auto id : ids) {
    const std::int32_t a = attrs.at(id);
    if (a < 0) throw AttackError("aia needs attribute labels; sample " + std::to_string(id) + " has none");
    out.push_back(a);
  }
  return out;
}

// First rows in observation order, at most ceil(n / K) per attribute value
// while other values remain; topped up in order when a value runs out.
std::vector<std::size_t> balanced_rows(std::span<const std::int32_t> attributes, std::size_t n) {
  n = std::min(n, attributes.size());
  std::int32_t k = 0;
  for (auto a : attributes) k = std::max(k, a + 1);
  const std::size_t cap = k ? (n + std::size_t(k) - 1) / std::size_t(k) : n;
  std::vector<std::size_t> count(std::size_t(k), 0), rows;
  std::vector<std::uint8_t> taken(attributes.size(), 0);
  for (std::size_t i = 0; i < attributes.size() && rows.size() < n; ++i) {
    if (count[std::size_t(attributes[i])] < cap) {
      ++count[std::size_t(attributes[i])];
      taken[i] = 1;
      rows.push_back(i);
    }
  }
  for (std::size_t i = 0; i < attributes.size() && rows.size() < n; ++i) {
    if (!taken[i]) rows.push_back(i);
  }
  std::sort(rows.begin(), rows.end());
  return rows;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

ResultRow base_row(const ExperimentConfig& config, const Cell& cell) {
  ResultRow r;
  r.dataset = config.dataset.name;
  r.split = cell.split;
  r.frozen = cell.frozen;
  r.eta = cell.eta;
  r.cti = cell.cti;
  r.seed = cell.seed;
  return r;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace

std::vector<protocol::Message> observed_messages(const protocol::Transcript& log) {
  std::vector<protocol::Message> messages;
  for (const auto& f : log.frames()) {
    const auto type = static_cast<protocol::MessageType>(f[4]);
    if (type == protocol::MessageType::kRepBatchFull || type == protocol::MessageType::kRepBatch ||
        type == protocol::MessageType::kEvalRequest) {
      messages.push_back(protocol::decode_message(f));
    }
  }
  return messages;
}

std::vector<attacks::AttackReport> attack_messages(const ExperimentConfig& config, const Workspace& ws,
                                                   const Cell& cell, std::span<const protocol::Message> messages) {
  using protocol::MessageType;
  std::vector<protocol::Message> training, inference;
  for (const auto& m : messages) {
    if (m.type == MessageType::kRepBatchFull) training.push_back(m);
    if (m.type == MessageType::kEvalRequest) inference.push_back(m);
  }
  const auto per_epoch = attacks::observations_by_epoch(messages);
  attacks::Observations train_obs =
      training.empty() ? (per_epoch.empty() ? attacks::Observations{} : per_epoch.front())
                       : attacks::collect_observations(training);
  const auto truth = ground_truth(ws);
  std::vector<attacks::AttackReport> reports;
  for (const auto& name : config.attacks) {
    if (name == "aia") {
      const auto target_obs = attacks::collect_observations(inference);
      const auto attrs = attributes_by_id(ws);
      const auto labeled = train_obs.select(balanced_rows(lookup(attrs, train_obs.ids), config.aia_labeled));
      auto labels = lookup(attrs, labeled.ids);
      if (config.aia_shuffle_labels) {
        auto rng = numerics::make_rng(cell.seed, {0x73687566});
        std::shuffle(labels.begin(), labels.end(), rng);
      }
      auto aia = config.aia;
      aia.seed = derive(cell.seed, 4);
      reports.push_back(attacks::aia_attack(labeled, labels, target_obs, lookup(attrs, target_obs.ids), aia));
      continue;
    }
    if (train_obs.size() == 0) throw AttackError("transcript carries no training representations");
    if (name == "eia_nn") {
      reports.push_back(
          attacks::eia_nearest_neighbor(train_obs, ws.plm.token_embedding, ws.plm.position_embedding, truth));
    } else if (name == "eia_union") {
      std::vector<attacks::AttackReport> per;
      if (per_epoch.empty()) {
        per.push_back(
            attacks::eia_nearest_neighbor(train_obs, ws.plm.token_embedding, ws.plm.position_embedding, truth));
      } else {
        for (const auto& o : per_epoch) {
          per.push_back(attacks::eia_nearest_neighbor(o, ws.plm.token_embedding, ws.plm.position_embedding, truth));
        }
      }
      auto u = attacks::eia_union(per);
      u.attack = "eia_union";
      u.config["epochs"] = per.size();
      reports.push_back(std::move(u));
    } else if (name == "eia_opt") {
      // The attacker only knows the initial bottom parameters.
      auto bottom = model::split_model(ws.plm, cell.split).first;
      const auto part = train_obs.slice(0, std::min(config.eia_opt_samples, train_obs.size()));
      reports.push_back(attacks::eia_optimization(part, bottom, truth, config.eia_opt));
    }
  }
  return reports;
}

CellOutcome run_cell(const ExperimentConfig& config, const Workspace& ws, const Cell& cell,
                     const CellOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  CellOutcome out;
  out.row = base_row(config, cell);
  try {
    const auto session = cell_session(config, cell);
    protocol::Transcript::Options log;
    log.keep_frames = true;
    if (options.run_dir) {
      fs::create_directories(*options.run_dir);
      if (config.dump_payloads) log.dump_dir = *options.run_dir / "payloads";
    }
    auto result = protocol::run_session(session, ws.plm, ws.splits.train, ws.eval, config.transport, log);
    out.reports = attack_messages(config, ws, cell, observed_messages(result.vendor_log));
    out.row.ua = 100.0 * result.eval_accuracy;
    for (const auto& r : out.reports) out.row.ep[r.attack] = 100.0 * r.empirical_privacy;
    if (options.run_dir) {
      result.vendor_log.write_jsonl(*options.run_dir / "transcript.jsonl");
      json reports = json::array();
      for (const auto& r : out.reports) reports.push_back(r.to_json());
      write_json(*options.run_dir / "reports.json", reports);
    }
    if (options.keep_session) {
      out.session = std::move(result);
    }
  } catch (const std::exception& e) {
    out.row.status = std::string("failed: ") + e.what();
  }
  out.row.wall_seconds = seconds_since(start);
  if (options.run_dir) {
    json run = {{"config", config}, {"cell", cell.to_json()}, {"row", to_csv_line(out.row)}};
    write_json(*options.run_dir / "run.json", run);
  }
  return out;
}

ResultRow run_centralized_cell(const ExperimentConfig& config, const Workspace& ws, const Cell& cell) {
  const auto start = std::chrono::steady_clock::now();
  ResultRow row = base_row(config, cell);
  row.eta.reset();
  row.cti = false;
  try {
    auto session = cell_session(config, cell);
    session.privacy.eta.reset();
    session.privacy.cti_enabled = false;
    const auto out = protocol::run_centralized(session, ws.plm, ws.splits.train, ws.eval);
    row.ua = 100.0 * out.eval_accuracy;
  } catch (const std::exception& e) {
    row.status = std::string("failed: ") + e.what();
  }
  row.wall_seconds = seconds_since(start);
  return row;
}

// ------------------------------------------------------------------ sweep

std::vector<ResultRow> aggregate(const std::vector<ResultRow>& rows) {
  std::vector<ResultRow> out;
  std::vector<std::size_t> total;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const ResultRow& o) { return o.same_point(r); });
    if (it == out.end()) {
      ResultRow a = r;
      a.seed.reset();
      a.ua = 0.0;
      a.ep.clear();
      a.reps = 0;
      a.wall_seconds = 0.0;
      a.status = "ok";
      out.push_back(a);
      total.push_back(0);
      it = out.end() - 1;
    }
    const std::size_t k = static_cast<std::size_t>(it - out.begin());
    ++total[k];
    it->wall_seconds += r.wall_seconds;
    if (!r.ok()) continue;
    it->ua += r.ua;
    for (const auto& [a, v] : r.ep) it->ep[a] += v;
    ++it->reps;
  }
  for (std::size_t k = 0; k < out.size(); ++k) {
    auto& a = out[k];
    if (a.reps == 0) {
      a.status = "failed: all " + std::to_string(total[k]) + " repetitions failed";
      a.ep.clear();
      continue;
    }
    a.ua /= double(a.reps);
    for (auto& [name, v] : a.ep) v /= double(a.reps);
    if (a.reps != total[k]) {
      a.status = "partial: " + std::to_string(total[k] - a.reps) + " of " + std::to_string(total[k]) + " failed";
    }
  }
  return out;
}

SweepResult run_sweep(const ExperimentConfig& config, const Workspace& ws,
                      const std::function<void(std::size_t, const ResultRow&)>& on_row) {
  const auto start = std::chrono::steady_clock::now();
  const auto cells = expand_grid(config);
  SweepResult result;
  result.rows.resize(cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex report;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      CellOptions opts;
      if (config.dump_payloads) {
        opts.run_dir = config.out_dir / "runs" / ("cell_" + std::to_string(i));
      }
      result.rows[i] = run_cell(config, ws, cells[i], opts).row;
      if (on_row) {
        std::lock_guard<std::mutex> lock(report);
        on_row(i, result.rows[i]);
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < std::min(config.workers, cells.size()); ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::vector<std::size_t> ok;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (result.rows[i].ok()) ok.push_back(i);
  }
  auto rng = numerics::make_rng(config.seed, {0x73706f74});
  std::shuffle(ok.begin(), ok.end(), rng);
  ok.resize(std::min(ok.size(), config.spot_checks));
  for (std::size_t i : ok) {
    const auto again = run_cell(config, ws, cells[i]).row;
    const auto& first = result.rows[i];
    const bool match = again.ok() && again.ua == first.ua && again.ep == first.ep;
    result.spot_checks.push_back({{"row", i}, {"cell", cells[i].to_json()}, {"match", match}});
  }
  result.summary = aggregate(result.rows);
  result.wall_seconds = seconds_since(start);
  return result;
}

}  // namespace sap::harness
