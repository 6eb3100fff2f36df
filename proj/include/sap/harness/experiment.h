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

#ifndef SAP_HARNESS_EXPERIMENT_H_
#define SAP_HARNESS_EXPERIMENT_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sap/attacks/attacks.h"
#include "sap/data/corpus.h"
#include "sap/harness/results.h"
#include "sap/model/pretrain.h"
#include "sap/protocol/session.h"

namespace sap::harness {

// Either a synthetic corpus or label TAB [attribute TAB] text files.
struct DatasetSpec {
  std::string name = "synth";
  data::SynthSpec synth;
  std::map<std::string, std::filesystem::path> tsv;  // empty -> synthetic
  data::VocabPolicy policy;

  bool synthetic() const { return tsv.empty(); }
};

// PLMConfig defaults with the synthetic corpus's sequence length.
inline model::PLMConfig default_plm_config() {
  model::PLMConfig c;
  c.max_seq_len = data::SynthSpec{}.max_seq_len;
  return c;
}

struct ExperimentConfig {
  DatasetSpec dataset;
  model::PLMConfig plm = default_plm_config();
  model::WarmupConfig warmup;
  protocol::SessionConfig session;

  // Grid axes. A null eta means privatization off.
  std::vector<std::optional<double>> eta_grid = {std::nullopt};
  std::vector<std::size_t> split_grid = {0};
  std::vector<bool> cti_grid = {false};
  std::vector<bool> frozen_grid = {true};
  std::vector<std::string> attacks = {"eia_nn"};
  std::size_t repetitions = 1;
  std::uint64_t seed = 0;

  std::string eval_split = "dev";  // "dev", "test" or "dev+test"
  attacks::EiaOptConfig eia_opt;
  std::size_t eia_opt_samples = 32;  // training samples attacked by eia_opt
  attacks::AiaConfig aia;
  std::size_t aia_labeled = 128;  // N_l, class-balanced from the first training observations
  bool aia_shuffle_labels = false;

  std::size_t workers = 1;
  std::size_t spot_checks = 3;  // rows re-run after a sweep
  protocol::TransportKind transport = protocol::TransportKind::kLoopback;
  bool dump_payloads = false;
  std::filesystem::path out_dir = "sap_out";

  void validate() const;  // ConfigError
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, ExperimentConfig& c);
// JSON with // and /* */ comments.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

inline const std::vector<std::string> kKnownAttacks = {"eia_nn", "eia_opt", "eia_union", "aia"};

// One point of the grid.
struct Cell {
  std::size_t split = 0;
  std::optional<double> eta;
  bool cti = false;
  bool frozen = true;
  std::size_t rep = 0;
  std::uint64_t seed = 0;  // config seed + rep: repetitions share seeds across the grid

  nlohmann::json to_json() const;
  static Cell from_json(const nlohmann::json& j);
};

// Cross product in the order split, frozen, cti, eta, rep.
std::vector<Cell> expand_grid(const ExperimentConfig& config);
// Session settings of one cell; all seeds derive from cell.seed.
protocol::SessionConfig cell_session(const ExperimentConfig& config, const Cell& cell);

// Dataset and warmed-up PLM shared by every cell.
struct Workspace {
  data::DatasetSplits splits;
  data::Corpus eval;
  model::PLM plm;  // after warm-up, before any fine-tuning
  std::string cache_key;
};

// Loads or builds the corpus and the warmed-up PLM. Both are cached under
// out_dir/cache keyed by a hash of the dataset, model and warm-up settings.
Workspace prepare_workspace(const ExperimentConfig& config, bool use_cache = true);

struct CellOutcome {
  ResultRow row;
  std::vector<attacks::AttackReport> reports;
  std::optional<protocol::SessionOutcome> session;  // when kept
};

struct CellOptions {
  std::optional<std::filesystem::path> run_dir;  // transcript, dumps, reports
  bool keep_session = false;
};

// Runs one split-learning session and the configured attacks on its
// transcript. Failures are reported in row.status, not thrown.
CellOutcome run_cell(const ExperimentConfig& config, const Workspace& ws, const Cell& cell,
                     const CellOptions& options = {});

// REP_BATCH_FULL, REP_BATCH and EVAL_REQUEST frames of a transcript kept
// with keep_frames, decoded in record order.
std::vector<protocol::Message> observed_messages(const protocol::Transcript& log);

// Attacks a finished session's vendor-side messages.
std::vector<attacks::AttackReport> attack_messages(const ExperimentConfig& config, const Workspace& ws,
                                                   const Cell& cell,
                                                   std::span<const protocol::Message> messages);

// Centralized oracle for one cell (privacy settings ignored).
ResultRow run_centralized_cell(const ExperimentConfig& config, const Workspace& ws, const Cell& cell);

struct SweepResult {
  std::vector<ResultRow> rows;      // one per cell
  std::vector<ResultRow> summary;   // mean over repetitions
  nlohmann::json spot_checks = nlohmann::json::array();
  double wall_seconds = 0.0;
};

// Runs every cell on `config.workers` threads, then re-runs
// `config.spot_checks` randomly chosen rows and compares them.
// `on_row` is called after each cell, serialized across workers.
SweepResult run_sweep(const ExperimentConfig& config, const Workspace& ws,
                      const std::function<void(std::size_t, const ResultRow&)>& on_row = {});

// Mean UA and EP over repetitions of identical (dataset, s, frozen, eta, cti).
std::vector<ResultRow> aggregate(const std::vector<ResultRow>& rows);

}  // namespace sap::harness

#endif  // SAP_HARNESS_EXPERIMENT_H_
