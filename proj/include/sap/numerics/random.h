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

#ifndef SAP_NUMERICS_RANDOM_H_
#define SAP_NUMERICS_RANDOM_H_

#include <cstdint>
#include <initializer_list>
#include <random>

#include "sap/numerics/tensor.h"

namespace sap::numerics {

using Rng = std::mt19937_64;

// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

// Derives an independent seed for a named sub-stream, e.g.
// derive_seed(privacy_seed, {pass, sample_index}). Result depends on every
// element and on their order.
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> streams);

Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> streams = {});

// i.i.d. N(0, stddev^2) entries.
Tensor normal_tensor(Shape shape, double stddev, Rng& rng);
// i.i.d. U(-limit, limit) entries.
Tensor uniform_tensor(Shape shape, double limit, Rng& rng);

}  // namespace sap::numerics

#endif  // SAP_NUMERICS_RANDOM_H_
