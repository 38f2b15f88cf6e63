// Copyright 2026 The SAGE Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>

#include <cblas.h>

namespace sage {

// C(MxN) += or = A(MxK or KxM) * B(KxN or NxK), row-major.
// Dense products route through BLAS; everything else in the stack is
// hand-written loops.
// C(RxN) = A(RxK) * B(KxN), row-major, accumulated in saxpy order. Every
// output row runs the identical instruction sequence, so identical input
// rows give bitwise identical output rows (BLAS kernels do not guarantee
// that). Used on frozen-model inference paths where scores and energies
// must be pure functions of their row contents.
inline void matmul_rowpure(std::size_t r, std::size_t n, std::size_t k,
                           const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < r; ++i) {
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
    const double* arow = a + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      double av = arow[kk];
      const double* brow = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
                 std::size_t k, double alpha, const double* a, const double* b,
                 double beta, double* c) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (beta == 0.0) {
      for (std::size_t i = 0; i < m * n; ++i) c[i] = 0.0;
    } else if (beta != 1.0) {
      for (std::size_t i = 0; i < m * n; ++i) c[i] *= beta;
    }
    return;
  }
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(k), alpha, a,
              static_cast<int>(trans_a ? m : k), b,
              static_cast<int>(trans_b ? k : n), beta, c,
              static_cast<int>(n));
}

}  // namespace sage
