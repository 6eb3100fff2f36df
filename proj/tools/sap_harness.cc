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

// Experiment driver: fine-tuning sessions, attacks, sweeps and reports.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "sap/errors.h"
#include "sap/harness/experiment.h"
#include "sap/harness/results.h"
#include "sap/model/checkpoint.h"
#include "sap/protocol/transcript.h"

namespace fs = std::filesystem;
using namespace sap;
using harness::ExperimentConfig;
using nlohmann::json;

namespace {

struct GlobalOptions {
  std::optional<std::string> config;
  std::optional<std::string> transport;
  bool dump_payloads = false;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool dump_config = false;
};

ExperimentConfig resolve(const GlobalOptions& g) {
  ExperimentConfig c = g.config ? harness::load_experiment_config(*g.config) : ExperimentConfig{};
  if (g.transport) c.transport = protocol::parse_transport(*g.transport);
  if (g.dump_payloads) c.dump_payloads = true;
  if (g.seed) c.seed = *g.seed;
  if (g.out) c.out_dir = *g.out;
  c.validate();
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

void log_row(const harness::ResultRow& r) {
  std::fprintf(stderr, "  s=%zu %s eta=%s cti=%d seed=%s ua=%.2f", r.split, r.frozen ? "frozen" : "trainable",
               harness::format_eta(r.eta).c_str(), int(r.cti), r.seed ? std::to_string(*r.seed).c_str() : "-",
               r.ua);
  for (const auto& [a, v] : r.ep) std::fprintf(stderr, " ep_%s=%.2f", a.c_str(), v);
  std::fprintf(stderr, " (%.1fs) %s\n", r.wall_seconds, r.ok() ? "" : r.status.c_str());
}

harness::Cell first_cell(const ExperimentConfig& c) {
  harness::Cell cell;
  cell.split = c.split_grid.front();
  cell.eta = c.eta_grid.front();
  cell.cti = c.cti_grid.front();
  cell.frozen = c.frozen_grid.front();
  cell.seed = c.seed;
  return cell;
}

int cmd_synth(const ExperimentConfig& c) {
  if (!c.dataset.synthetic()) throw ConfigError("synth needs a synthetic dataset spec");
  const auto corpus = data::synth_generate(c.dataset.synth);
  const auto splits = data::split_corpus(corpus, c.dataset.synth.fractions, c.dataset.synth.seed);
  const fs::path dir = c.out_dir / "synth";
  fs::create_directories(dir);
  for (const data::Corpus* part : {&splits.train, &splits.dev, &splits.test}) {
    std::ofstream out(dir / (part->split + ".tsv"));
    for (const auto& s : part->samples) {
      out << s.label << '\t' << s.attribute << '\t';
      bool first = true;
      for (auto id : s.ids) {
        if (model::is_special(id)) continue;
        out << (first ? "" : " ") << part->vocab.token(id);
        first = false;
      }
      out << '\n';
    }
    data::save_corpus(dir / (part->split + ".sapt"), *part);
  }
  const auto layout = data::synth_layout(c.dataset.synth);
  json meta = {{"spec", c.dataset.synth},
               {"checksum", corpus.checksum()},
               {"planted", layout.planted},
               {"cues", layout.cues},
               {"markers", layout.markers},
               {"sizes", {splits.train.samples.size(), splits.dev.samples.size(), splits.test.samples.size()}}};
  write_text(dir / "corpus.json", meta.dump(2) + "\n");
  std::cout << "wrote " << corpus.samples.size() << " samples to " << dir.string() << '\n';
  return 0;
}

int cmd_finetune(const ExperimentConfig& c) {
  const auto ws = harness::prepare_workspace(c);
  const auto cell = first_cell(c);
  const fs::path dir = c.out_dir / "finetune";
  harness::CellOptions opts;
  opts.run_dir = dir;
  opts.keep_session = true;
  auto out = harness::run_cell(c, ws, cell, opts);
  log_row(out.row);
  harness::write_csv(dir / "result.csv", {out.row});
  if (!out.row.ok()) {
    std::cerr << "error: " << out.row.status << '\n';
    return 1;
  }
  model::save_checkpoint(dir / "model.sapt", out.session->vendor.model, {{"cell", cell.to_json()}});
  std::cout << harness::to_csv_line(out.row) << '\n';
  return 0;
}

int cmd_centralized(const ExperimentConfig& c) {
  const auto ws = harness::prepare_workspace(c);
  const auto row = harness::run_centralized_cell(c, ws, first_cell(c));
  log_row(row);
  harness::write_csv(c.out_dir / "centralized" / "result.csv", {row});
  if (!row.ok()) {
    std::cerr << "error: " << row.status << '\n';
    return 1;
  }
  std::cout << harness::to_csv_line(row) << '\n';
  return 0;
}

int cmd_attack(const GlobalOptions& g, const std::string& run_dir, const std::vector<std::string>& names) {
  const fs::path dir = run_dir;
  std::ifstream in(dir / "run.json");
  if (!in) throw Error("no run.json in " + dir.string() + "; pass a finetune output directory");
  const json run = json::parse(in);
  ExperimentConfig c = run.at("config").get<ExperimentConfig>();
  if (g.out) c.out_dir = *g.out;  // cache location
  if (!names.empty()) c.attacks = names;
  c.validate();
  const auto cell = harness::Cell::from_json(run.at("cell"));
  const fs::path payloads = dir / "payloads";
  if (!fs::exists(payloads)) throw Error("no payload dumps in " + dir.string() + "; rerun with --dump-payloads");
  std::cerr << "verified " << protocol::verify_transcript(dir / "transcript.jsonl", payloads) << " frames\n";
  const auto messages = protocol::load_dumped_messages(
      dir / "transcript.jsonl", payloads,
      {protocol::MessageType::kRepBatchFull, protocol::MessageType::kRepBatch, protocol::MessageType::kEvalRequest});
  const auto ws = harness::prepare_workspace(c);
  const auto reports = harness::attack_messages(c, ws, cell, messages);
  for (const auto& r : reports) {
    write_text(dir / ("attack_" + r.attack + ".json"), r.to_json(true).dump(2) + "\n");
    std::printf("%s X=%.4f EP=%.2f%% (%zu/%zu)\n", r.attack.c_str(), r.success, 100.0 * r.empirical_privacy,
                r.recovered, r.scored);
  }
  return 0;
}

int cmd_sweep(const ExperimentConfig& c) {
  const auto ws = harness::prepare_workspace(c);
  const std::size_t total = harness::expand_grid(c).size();
  std::cerr << "sweep: " << total << " cells\n";
  const auto result = harness::run_sweep(c, ws, [&](std::size_t i, const harness::ResultRow& r) {
    std::fprintf(stderr, "[%zu/%zu]", i + 1, total);
    log_row(r);
  });
  const fs::path dir = c.out_dir / "sweep";
  harness::write_csv(dir / "rows.csv", result.rows);
  harness::write_csv(dir / "summary.csv", result.summary);
  harness::write_curves(dir / (c.dataset.name + "_curves.dat"), result.summary);
  write_text(dir / "report.md", harness::markdown_report(result.summary));
  json meta = {{"config", c}, {"cells", total}, {"wall_seconds", result.wall_seconds},
               {"spot_checks", result.spot_checks}};
  write_text(dir / "sweep.json", meta.dump(2) + "\n");
  std::cout << harness::markdown_report(result.summary);
  bool reproducible = true;
  for (const auto& s : result.spot_checks) reproducible &= s.at("match").get<bool>();
  if (!reproducible) {
    std::cerr << "error: a spot-checked row did not reproduce; see " << (dir / "sweep.json").string() << '\n';
    return 1;
  }
  return 0;
}

int cmd_report(const GlobalOptions& g, const std::string& csv) {
  const auto rows = harness::read_csv(csv);
  const std::string md = harness::markdown_report(harness::aggregate(rows));
  if (g.out) {
    write_text(fs::path(*g.out) / "report.md", md);
  } else {
    std::cout << md;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Split-and-privatize fine-tuning harness"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  app.add_option("--config", g.config, "experiment config (JSON, comments allowed)");
  app.add_option("--transport", g.transport, "loopback or tcp")->check(CLI::IsMember({"loopback", "tcp"}));
  app.add_flag("--dump-payloads", g.dump_payloads, "write every frame to the run directory");
  app.add_option("--seed", g.seed, "base seed");
  app.add_option("--out", g.out, "output directory");
  app.add_flag("--dump-config", g.dump_config, "print the resolved config and exit");

  auto* synth = app.add_subcommand("synth", "generate the synthetic corpus as TSV");
  auto* finetune = app.add_subcommand("finetune", "one split-learning session plus attacks");
  auto* centralized = app.add_subcommand("centralized", "single-process oracle run");
  auto* attack = app.add_subcommand("attack", "attack the dumped transcript of a finetune run");
  std::string run_dir;
  std::vector<std::string> attack_names;
  attack->add_option("run_dir", run_dir, "finetune output directory")->required();
  attack->add_option("--attack", attack_names, "attacks to run (default: config list)");
  auto* sweep = app.add_subcommand("sweep", "run the configured grid");
  auto* report = app.add_subcommand("report", "markdown summary of a result CSV");
  std::string csv;
  report->add_option("csv", csv, "rows.csv or summary.csv")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (g.dump_config) {
      std::cout << json(resolve(g)).dump(2) << '\n';
      return 0;
    }
    if (*synth) return cmd_synth(resolve(g));
    if (*finetune) return cmd_finetune(resolve(g));
    if (*centralized) return cmd_centralized(resolve(g));
    if (*attack) return cmd_attack(g, run_dir, attack_names);
    if (*sweep) return cmd_sweep(resolve(g));
    if (*report) return cmd_report(g, csv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
