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

#include "sap/numerics/random.h"

namespace sap::numerics {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> streams) {
  std::uint64_t h = mix64(seed);
  for (std::uint64_t s : streams) h = mix64(h ^ mix64(s + 0x632be59bd9b4e019ULL));
  return h;
}

Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> streams) {
  return Rng(derive_seed(seed, streams));
}

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (float& v : t.data()) v = static_cast<float>(dist(rng));
  return t;
}

Tensor uniform_tensor(Shape shape, double limit, Rng& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (float& v : t.data()) v = static_cast<float>(dist(rng));
  return t;
}

}  // namespace sap::numerics
