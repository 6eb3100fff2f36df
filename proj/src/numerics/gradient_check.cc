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

#include "sap/numerics/gradient_check.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "sap/errors.h"
#include "sap/numerics/random.h"

namespace sap::numerics {

std::string GradientCheckReport::summary() const {
  std::ostringstream out;
  out << (passed ? "pass" : "FAIL") << " max_rel_err=" << max_relative_error
      << " (input " << worst_input << ", entry " << worst_index << ", "
      << entries_checked << " entries)";
  return out.str();
}

namespace {

struct Comparison {
  std::size_t input;
  std::size_t index;
  double analytic;
  double numeric;
};

GradientCheckReport summarize(const std::vector<Comparison>& rows, double tolerance,
                              const GradientCheckOptions& options) {
  double scale = 0.0;
  for (const auto& r : rows) scale = std::max(scale, std::abs(r.numeric));
  const double floor = std::max(options.floor_fraction * scale, 1e-12);
  GradientCheckReport report;
  report.entries_checked = rows.size();
  for (const auto& r : rows) {
    const double a = r.analytic * options.analytic_scale;
    const double denom = std::max({std::abs(a), std::abs(r.numeric), floor});
    const double err = std::abs(a - r.numeric) / denom;
    if (err > report.max_relative_error) {
      report.max_relative_error = err;
      report.worst_input = r.input;
      report.worst_index = r.index;
    }
  }
  report.passed = report.max_relative_error <= tolerance;
  return report;
}

std::vector<std::size_t> pick_entries(std::size_t size, std::size_t limit, Rng& rng) {
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), 0);
  if (limit == 0 || limit >= size) return idx;
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

double scalar_value(const DoubleGraph& g, Var v) {
  const DoubleTensor& t = g.value(v);
  if (t.size() != 1) throw DimensionError("gradient check loss must be scalar");
  return t[0];
}

}  // namespace

GradientCheckReport gradient_check(const GradOp& op, const std::vector<DoubleTensor>& inputs,
                                   double tolerance, const GradientCheckOptions& options) {
  for (const auto& in : inputs) in.check_finite("gradient_check input");
  Rng rng = make_rng(options.seed, {0x67636b});
  DoubleTensor projection;

  auto evaluate = [&](const std::vector<DoubleTensor>& values, DoubleGraph& g,
                      std::vector<Var>& vars) -> Var {
    vars.clear();
    for (const auto& v : values) vars.push_back(g.variable(v));
    Var out = op(g, vars);
    const DoubleTensor& y = g.value(out);
    if (projection.empty()) {
      std::normal_distribution<double> dist(0.0, 1.0);
      projection = DoubleTensor(y.shape());
      for (double& w : projection.data()) w = dist(rng);
    }
    return g.weighted_sum(out, projection);
  };

  std::vector<DoubleTensor> analytic;
  {
    DoubleGraph g;
    std::vector<Var> vars;
    Var loss = evaluate(inputs, g, vars);
    g.backward(loss);
    for (Var v : vars) analytic.push_back(g.grad(v));
  }

  std::vector<Comparison> rows;
  std::vector<DoubleTensor> work = inputs;
  for (std::size_t k = 0; k < work.size(); ++k) {
    for (std::size_t i : pick_entries(work[k].size(), options.max_entries_per_input, rng)) {
      const double orig = work[k][i];
      double f[2];
      for (int side = 0; side < 2; ++side) {
        work[k][i] = orig + (side == 0 ? options.step : -options.step);
        DoubleGraph g;
        std::vector<Var> vars;
        f[side] = scalar_value(g, evaluate(work, g, vars));
      }
      work[k][i] = orig;
      rows.push_back({k, i, analytic[k][i], (f[0] - f[1]) / (2.0 * options.step)});
    }
  }
  return summarize(rows, tolerance, options);
}

GradientCheckReport gradient_check_parameters(const std::function<Var(DoubleGraph&)>& loss,
                                              const std::vector<Tensor*>& parameters,
                                              double tolerance,
                                              const GradientCheckOptions& options) {
  Rng rng = make_rng(options.seed, {0x706172});
  std::vector<bool> restore_flag;
  for (Tensor* p : parameters) {
    restore_flag.push_back(p->requires_grad());
    p->set_requires_grad(true);
  }
  {
    DoubleGraph g;
    Var l = loss(g);
    scalar_value(g, l);
    g.backward(l);
  }
  std::vector<std::vector<double>> analytic;
  for (Tensor* p : parameters) {
    analytic.emplace_back(p->grad().begin(), p->grad().end());
  }

  std::vector<Comparison> rows;
  for (std::size_t k = 0; k < parameters.size(); ++k) {
    Tensor& p = *parameters[k];
    for (std::size_t i : pick_entries(p.size(), options.max_entries_per_input, rng)) {
      const float orig = p[i];
      const float up = static_cast<float>(double(orig) + options.step);
      const float down = static_cast<float>(double(orig) - options.step);
      double f[2];
      for (int side = 0; side < 2; ++side) {
        p[i] = side == 0 ? up : down;
        DoubleGraph g;
        f[side] = scalar_value(g, loss(g));
      }
      p[i] = orig;
      rows.push_back({k, i, analytic[k][i], (f[0] - f[1]) / (double(up) - double(down))});
    }
  }
  for (std::size_t k = 0; k < parameters.size(); ++k) {
    parameters[k]->set_requires_grad(restore_flag[k]);
  }
  return summarize(rows, tolerance, options);
}

}  // namespace sap::numerics
