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

#ifndef SAP_SRC_NUMERICS_KERNELS_H_
#define SAP_SRC_NUMERICS_KERNELS_H_

// Dense matrix kernels. Every product accumulates in double regardless of
// the storage type, and each output element sums over k in order, so results
// do not depend on how rows are batched.

#include <algorithm>
#include <cstddef>
#include <vector>

namespace sap::numerics::kernels {

namespace detail {

inline constexpr std::size_t kRows = 4;
inline constexpr std::size_t kCols = 32;

// c[m x n] = a[m x k] * b[k x n], all double, row-major.
inline void gemm_core(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                      std::size_t n) {
  for (std::size_t i0 = 0; i0 < m; i0 += kRows) {
    const std::size_t rows = std::min(kRows, m - i0);
    for (std::size_t j0 = 0; j0 < n; j0 += kCols) {
      const std::size_t cols = std::min(kCols, n - j0);
      double acc[kRows][kCols] = {};
      if (rows == kRows && cols == kCols) {
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = b + p * n + j0;
          for (std::size_t r = 0; r < kRows; ++r) {
            const double av = a[(i0 + r) * k + p];
            for (std::size_t j = 0; j < kCols; ++j) acc[r][j] += av * brow[j];
          }
        }
      } else {
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = b + p * n + j0;
          for (std::size_t r = 0; r < rows; ++r) {
            const double av = a[(i0 + r) * k + p];
            for (std::size_t j = 0; j < cols; ++j) acc[r][j] += av * brow[j];
          }
        }
      }
      for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(acc[r], cols, c + (i0 + r) * n + j0);
      }
    }
  }
}

}  // namespace detail

// c[m x n] = a[m x k] * b[k x n]
template <typename A, typename B>
void gemm_nn(const A* a, const B* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  std::vector<double> ad(a, a + m * k);
  std::vector<double> bd(b, b + k * n);
  detail::gemm_core(ad.data(), bd.data(), c, m, k, n);
}

// c[m x n] = a[m x k] * b[n x k]^T
template <typename A, typename B>
void gemm_nt(const A* a, const B* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  std::vector<double> ad(a, a + m * k);
  std::vector<double> bt(k * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = static_cast<double>(b[j * k + p]);
  }
  detail::gemm_core(ad.data(), bt.data(), c, m, k, n);
}

// c[m x n] = a[k x m]^T * b[k x n]
template <typename A, typename B>
void gemm_tn(const A* a, const B* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  std::vector<double> at(m * k);
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t i = 0; i < m; ++i) at[i * k + p] = static_cast<double>(a[p * m + i]);
  }
  std::vector<double> bd(b, b + k * n);
  detail::gemm_core(at.data(), bd.data(), c, m, k, n);
}

}  // namespace sap::numerics::kernels

#endif  // SAP_SRC_NUMERICS_KERNELS_H_
