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

#include "sap/harness/results.h"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include "sap/errors.h"

namespace sap::harness {

namespace {

const std::vector<std::string> kAttackColumns = {"eia_nn", "eia_opt", "eia_union", "aia"};

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string quote(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  if (quoted) throw DataError("unterminated quote in CSV line");
  return out;
}

double parse_number(const std::string& s, const std::string& column, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("line " + std::to_string(line) + ": column " + column + " is not a number: '" + s + "'");
  }
}

// Sort key for eta columns: ascending, "none" last.
double eta_key(const std::optional<double>& eta) { return eta ? *eta : 1e300; }

std::string setting_label(const ResultRow& r) {
  return "s=" + std::to_string(r.split) + ", " + (r.frozen ? "frozen" : "trainable") + ", " +
         (r.cti ? "SAP-CTI" : "SAP");
}

}  // namespace

bool ResultRow::same_point(const ResultRow& o) const {
  return dataset == o.dataset && split == o.split && frozen == o.frozen && eta == o.eta && cti == o.cti;
}

std::string format_eta(const std::optional<double>& eta) {
  if (!eta) return "none";
  std::ostringstream s;
  s << *eta;
  return s.str();
}

std::optional<double> parse_eta(const std::string& text) {
  if (text == "none") return std::nullopt;
  return parse_number(text, "eta", 0);
}

std::vector<std::string> csv_header() {
  std::vector<std::string> h = {"dataset", "s", "bottom", "eta", "cti", "ua"};
  for (const auto& a : kAttackColumns) h.push_back("ep_" + a);
  for (const char* c : {"seed", "reps", "wall_s", "status"}) h.push_back(c);
  return h;
}

std::string to_csv_line(const ResultRow& r) {
  std::vector<std::string> f = {quote(r.dataset), std::to_string(r.split), r.frozen ? "frozen" : "trainable",
                                format_eta(r.eta), r.cti ? "1" : "0", fixed(r.ua, 4)};
  for (const auto& a : kAttackColumns) {
    auto it = r.ep.find(a);
    f.push_back(it == r.ep.end() ? "" : fixed(it->second, 4));
  }
  f.push_back(r.seed ? std::to_string(*r.seed) : "");
  f.push_back(std::to_string(r.reps));
  f.push_back(fixed(r.wall_seconds, 2));
  f.push_back(quote(r.status));
  std::string line;
  for (std::size_t i = 0; i < f.size(); ++i) line += (i ? "," : "") + f[i];
  return line;
}

void write_csv(const std::filesystem::path& path, const std::vector<ResultRow>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  const auto h = csv_header();
  for (std::size_t i = 0; i < h.size(); ++i) out << (i ? "," : "") << h[i];
  out << '\n';
  for (const auto& r : rows) out << to_csv_line(r) << '\n';
}

std::vector<ResultRow> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::string line;
  std::vector<ResultRow> rows;
  if (!std::getline(in, line)) return rows;  // empty file: no rows
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = csv_header();
  if (split_csv(line) != header) throw DataError(path.string() + ": header does not match the result schema");
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != header.size()) {
      throw DataError(path.string() + ":" + std::to_string(n) + ": expected " + std::to_string(header.size()) +
                      " fields, got " + std::to_string(f.size()));
    }
    ResultRow r;
    r.dataset = f[0];
    r.split = static_cast<std::size_t>(parse_number(f[1], "s", n));
    if (f[2] != "frozen" && f[2] != "trainable") throw DataError("line " + std::to_string(n) + ": bad bottom");
    r.frozen = f[2] == "frozen";
    r.eta = f[3] == "none" ? std::nullopt : std::optional<double>(parse_number(f[3], "eta", n));
    if (f[4] != "0" && f[4] != "1") throw DataError("line " + std::to_string(n) + ": bad cti flag");
    r.cti = f[4] == "1";
    r.ua = parse_number(f[5], "ua", n);
    for (std::size_t k = 0; k < kAttackColumns.size(); ++k) {
      if (!f[6 + k].empty()) r.ep[kAttackColumns[k]] = parse_number(f[6 + k], header[6 + k], n);
    }
    const std::size_t base = 6 + kAttackColumns.size();
    if (!f[base].empty()) r.seed = static_cast<std::uint64_t>(parse_number(f[base], "seed", n));
    r.reps = static_cast<std::size_t>(parse_number(f[base + 1], "reps", n));
    r.wall_seconds = parse_number(f[base + 2], "wall_s", n);
    r.status = f[base + 3];
    auto in_range = [](double v) { return v >= 0.0 && v <= 100.0; };
    bool valid = in_range(r.ua);
    for (const auto& [a, v] : r.ep) valid &= in_range(v);
    if (!valid) throw DataError("line " + std::to_string(n) + ": UA/EP outside [0, 100]");
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string markdown_report(const std::vector<ResultRow>& rows) {
  std::ostringstream md;
  md << "# Results\n";
  std::vector<std::string> datasets;
  for (const auto& r : rows) {
    if (std::find(datasets.begin(), datasets.end(), r.dataset) == datasets.end()) datasets.push_back(r.dataset);
  }
  if (datasets.empty()) {
    md << "\nNo rows.\n\n| setting |\n|---|\n";
    return md.str();
  }
  for (const auto& ds : datasets) {
    std::vector<const ResultRow*> sel;
    for (const auto& r : rows) {
      if (r.dataset == ds && r.ok()) sel.push_back(&r);
    }
    std::vector<std::optional<double>> etas;
    std::vector<std::string> attacks;
    using Key = std::tuple<std::size_t, bool, bool>;  // split, trainable, cti
    std::vector<Key> settings;
    for (const auto* r : sel) {
      if (std::find(etas.begin(), etas.end(), r->eta) == etas.end()) etas.push_back(r->eta);
      const Key k{r->split, !r->frozen, r->cti};
      if (std::find(settings.begin(), settings.end(), k) == settings.end()) settings.push_back(k);
      for (const auto& [a, v] : r->ep) {
        if (std::find(attacks.begin(), attacks.end(), a) == attacks.end()) attacks.push_back(a);
      }
    }
    std::sort(etas.begin(), etas.end(), [](auto& a, auto& b) { return eta_key(a) < eta_key(b); });
    std::sort(settings.begin(), settings.end());
    std::sort(attacks.begin(), attacks.end(), [](const std::string& a, const std::string& b) {
      auto ia = std::find(kAttackColumns.begin(), kAttackColumns.end(), a);
      auto ib = std::find(kAttackColumns.begin(), kAttackColumns.end(), b);
      return ia < ib;
    });

    md << "\n## " << ds << "\n\nCells: UA";
    for (const auto& a : attacks) md << " / EP(" << a << ")";
    md << ", percent, mean over repetitions.\n\n| setting |";
    for (const auto& e : etas) md << " eta=" << format_eta(e) << " |";
    md << "\n|---|";
    for (std::size_t i = 0; i < etas.size(); ++i) md << "---|";
    md << '\n';
    for (const auto& [split, trainable, cti] : settings) {
      ResultRow probe;
      probe.split = split;
      probe.frozen = !trainable;
      probe.cti = cti;
      md << "| " << setting_label(probe) << " |";
      for (const auto& e : etas) {
        double ua = 0.0;
        std::map<std::string, double> ep;
        std::size_t weight = 0;
        for (const auto* r : sel) {
          if (r->split != split || r->frozen == trainable || r->cti != cti || r->eta != e) continue;
          ua += r->ua * double(r->reps);
          for (const auto& [a, v] : r->ep) ep[a] += v * double(r->reps);
          weight += r->reps;
        }
        if (!weight) {
          md << " - |";
          continue;
        }
        md << ' ' << fixed(ua / double(weight), 2);
        for (const auto& a : attacks) {
          md << " / " << (ep.count(a) ? fixed(ep[a] / double(weight), 2) : std::string("-"));
        }
        md << " |";
      }
      md << '\n';
    }
    std::size_t failed = 0;
    for (const auto& r : rows) failed += r.dataset == ds && !r.ok();
    if (failed) md << "\n" << failed << " failed row(s) omitted.\n";
  }
  return md.str();
}

void write_curves(const std::filesystem::path& path, const std::vector<ResultRow>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  std::vector<ResultRow> sel;
  for (const auto& r : rows) {
    if (r.ok() && r.eta) sel.push_back(r);
  }
  std::sort(sel.begin(), sel.end(), [](const ResultRow& a, const ResultRow& b) {
    return std::make_tuple(a.dataset, a.split, !a.frozen, a.cti, *a.eta) <
           std::make_tuple(b.dataset, b.split, !b.frozen, b.cti, *b.eta);
  });
  out << "# columns: eta ua";
  for (const auto& a : kAttackColumns) out << " ep_" << a;
  out << "\n# one index block per setting; missing values are NaN\n";
  const ResultRow* prev = nullptr;
  for (const auto& r : sel) {
    if (!prev || r.dataset != prev->dataset || r.split != prev->split || r.frozen != prev->frozen ||
        r.cti != prev->cti) {
      if (prev) out << "\n\n";
      out << "# " << r.dataset << ": " << setting_label(r) << '\n';
    }
    out << *r.eta << ' ' << fixed(r.ua, 4);
    for (const auto& a : kAttackColumns) {
      auto it = r.ep.find(a);
      out << ' ' << (it == r.ep.end() ? std::string("NaN") : fixed(it->second, 4));
    }
    out << '\n';
    prev = &r;
  }
}

}  // namespace sap::harness
