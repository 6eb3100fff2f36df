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

#ifndef SAP_HARNESS_RESULTS_H_
#define SAP_HARNESS_RESULTS_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace sap::harness {

// UA and EP are percentages in [0, 100].
struct ResultRow {
  std::string dataset;
  std::size_t split = 0;
  bool frozen = true;
  std::optional<double> eta;  // none: no privatization
  bool cti = false;
  double ua = 0.0;
  std::map<std::string, double> ep;  // attack -> EP
  std::optional<std::uint64_t> seed;  // empty on aggregated rows
  std::size_t reps = 1;
  double wall_seconds = 0.0;
  std::string status = "ok";

  bool ok() const { return status == "ok"; }
  // Same grid point, ignoring seed and measurements.
  bool same_point(const ResultRow& other) const;
};

// Fixed column order; EP columns for every attack name, empty when absent.
std::vector<std::string> csv_header();
std::string to_csv_line(const ResultRow& row);
void write_csv(const std::filesystem::path& path, const std::vector<ResultRow>& rows);
// Throws DataError on a header or field mismatch.
std::vector<ResultRow> read_csv(const std::filesystem::path& path);

std::string format_eta(const std::optional<double>& eta);
std::optional<double> parse_eta(const std::string& text);

// One markdown table per dataset: rows are (s, bottom, CTI) settings,
// columns are eta values ascending with "none" last, cells "UA / EP ...".
std::string markdown_report(const std::vector<ResultRow>& rows);

// gnuplot data: one index block per (s, bottom, CTI) setting with columns
// eta, UA, EP per attack. Rows without eta are skipped.
void write_curves(const std::filesystem::path& path, const std::vector<ResultRow>& rows);

}  // namespace sap::harness

#endif  // SAP_HARNESS_RESULTS_H_
