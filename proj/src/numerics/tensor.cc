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

#include "sap/numerics/tensor.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <sstream>
#include <type_traits>

#include "sap/errors.h"

namespace sap::numerics {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {

void check_rank(const Shape& shape) {
  if (shape.size() > 3) {
    throw DimensionError("tensor rank " + std::to_string(shape.size()) +
                         " exceeds 3");
  }
}

}  // namespace

template <typename Real>
BasicTensor<Real>::BasicTensor(Shape shape)
    : shape_(std::move(shape)), data_(shape_size(shape_), Real(0)) {
  check_rank(shape_);
}

template <typename Real>
BasicTensor<Real>::BasicTensor(Shape shape, std::vector<Real> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_rank(shape_);
  if (data_.size() != shape_size(shape_)) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string(shape_));
  }
}

template <typename Real>
BasicTensor<Real> BasicTensor<Real>::full(Shape shape, Real value) {
  BasicTensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

template <typename Real>
BasicTensor<Real> BasicTensor<Real>::from_rows(
    std::initializer_list<std::initializer_list<Real>> rows) {
  const std::size_t m = rows.size();
  const std::size_t n = m ? rows.begin()->size() : 0;
  std::vector<Real> data;
  data.reserve(m * n);
  for (const auto& row : rows) {
    if (row.size() != n) throw DimensionError("ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return BasicTensor({m, n}, std::move(data));
}

template <typename Real>
BasicTensor<Real> BasicTensor<Real>::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " +
                         shape_string(shape));
  }
  return BasicTensor(std::move(shape), data_);
}

template <typename Real>
void BasicTensor<Real>::set_requires_grad(bool value) {
  requires_grad_ = value;
  if (value) {
    grad_.emplace(data_.size(), Real(0));
  } else {
    grad_.reset();
  }
}

template <typename Real>
std::span<Real> BasicTensor<Real>::grad() {
  if (!grad_) throw NumericError("tensor has no gradient buffer");
  return *grad_;
}

template <typename Real>
std::span<const Real> BasicTensor<Real>::grad() const {
  if (!grad_) throw NumericError("tensor has no gradient buffer");
  return *grad_;
}

template <typename Real>
void BasicTensor<Real>::zero_grad() {
  if (grad_) std::fill(grad_->begin(), grad_->end(), Real(0));
}

template <typename Real>
void BasicTensor<Real>::check_finite(std::string_view where) const {
  // Exponent-bits scan first; it vectorizes, the isfinite loop does not.
  using Bits = std::conditional_t<sizeof(Real) == 4, std::uint32_t, std::uint64_t>;
  constexpr Bits exp_mask = sizeof(Real) == 4 ? Bits(0x7f800000u) : Bits(0x7ff0000000000000ull);
  Bits lowest = exp_mask;
  const Real* p = data_.data();
  for (std::size_t i = 0; i < data_.size(); ++i) {
    lowest = std::min(lowest, Bits(~std::bit_cast<Bits>(p[i]) & exp_mask));
  }
  if (lowest != 0) return;
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      throw NumericError("non-finite value at index " + std::to_string(i) +
                         " in " + std::string(where));
    }
  }
}

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace sap::numerics
