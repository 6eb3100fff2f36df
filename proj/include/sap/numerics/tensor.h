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

#ifndef SAP_NUMERICS_TENSOR_H_
#define SAP_NUMERICS_TENSOR_H_

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sap::numerics {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major array of rank <= 3. `Real` is float for every stored
// tensor (parameters, wire payloads); double instances exist only inside
// gradient checks.
template <typename Real>
class BasicTensor {
 public:
  using value_type = Real;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape);
  BasicTensor(Shape shape, std::vector<Real> data);

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape)); }
  static BasicTensor full(Shape shape, Real value);
  static BasicTensor from_rows(std::initializer_list<std::initializer_list<Real>> rows);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<Real> data() { return data_; }
  std::span<const Real> data() const { return data_; }
  std::vector<Real>& storage() { return data_; }
  const std::vector<Real>& storage() const { return data_; }

  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }
  Real& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  Real at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  Real& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  Real at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  // Same data under a new shape of equal size.
  BasicTensor reshaped(Shape shape) const;

  bool requires_grad() const { return requires_grad_; }
  // Enabling allocates a zeroed gradient buffer; disabling drops it.
  void set_requires_grad(bool value);
  bool has_grad() const { return grad_.has_value(); }
  std::span<Real> grad();
  std::span<const Real> grad() const;
  void zero_grad();

  // Throws NumericError naming `where` if any value is NaN or infinite.
  void check_finite(std::string_view where) const;

  bool operator==(const BasicTensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

  template <typename Other>
  BasicTensor<Other> cast() const {
    return BasicTensor<Other>(shape_, std::vector<Other>(data_.begin(), data_.end()));
  }

 private:
  Shape shape_;
  std::vector<Real> data_;
  bool requires_grad_ = false;
  std::optional<std::vector<Real>> grad_;
};

using Tensor = BasicTensor<float>;

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace sap::numerics

#endif  // SAP_NUMERICS_TENSOR_H_
