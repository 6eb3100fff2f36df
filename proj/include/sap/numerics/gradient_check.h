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

#ifndef SAP_NUMERICS_GRADIENT_CHECK_H_
#define SAP_NUMERICS_GRADIENT_CHECK_H_

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sap/numerics/graph.h"

namespace sap::numerics {

using DoubleTensor = BasicTensor<double>;
using DoubleGraph = BasicGraph<double>;

// Builds an output from the given input variables. The check projects
// non-scalar outputs onto a fixed random direction to obtain a scalar.
using GradOp = std::function<Var(DoubleGraph&, std::span<const Var>)>;

struct GradientCheckOptions {
  double step = 1e-3;           // central-difference half-width
  std::uint64_t seed = 0;       // projection direction
  // Relative error uses max(|analytic|, |numeric|, floor_fraction * G) as the
  // denominator, where G is the largest numeric gradient magnitude seen.
  double floor_fraction = 1e-2;
  // Multiplies analytic gradients before comparison. Only useful for
  // negative controls.
  double analytic_scale = 1.0;
  // When nonzero, at most this many randomly chosen entries per input are
  // differenced.
  std::size_t max_entries_per_input = 0;
};

struct GradientCheckReport {
  bool passed = false;
  double max_relative_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  std::size_t entries_checked = 0;
  std::string summary() const;
};

// Compares analytic backward() gradients of `op` against central finite
// differences for every entry of every input. Evaluated in double precision
// so that the comparison measures the derivative code, not float rounding.
GradientCheckReport gradient_check(const GradOp& op,
                                   const std::vector<DoubleTensor>& inputs,
                                   double tolerance,
                                   const GradientCheckOptions& options = {});

// Same comparison for parameters stored as float tensors (e.g. model weights).
// `loss` must build a scalar from the current parameter values; the step
// actually taken after float rounding is used as the divisor.
GradientCheckReport gradient_check_parameters(
    const std::function<Var(DoubleGraph&)>& loss,
    const std::vector<Tensor*>& parameters, double tolerance,
    const GradientCheckOptions& options = {});

}  // namespace sap::numerics

#endif  // SAP_NUMERICS_GRADIENT_CHECK_H_
