#pragma once

// Internal dense GEMM helpers. Row-major, all strides equal to row lengths.
// Blocked over the reduction axis so a panel of B stays cache resident.

#include <algorithm>
#include <cstddef>

namespace capslstm::detail {

inline constexpr std::size_t kBlockK = 128;
inline constexpr std::size_t kBlockM = 64;

// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t k0 = 0; k0 < k; k0 += kBlockK) {
    const std::size_t k1 = std::min(k, k0 + kBlockK);
    for (std::size_t i0 = 0; i0 < m; i0 += kBlockM) {
      const std::size_t i1 = std::min(m, i0 + kBlockM);
      for (std::size_t i = i0; i < i1; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (std::size_t kk = k0; kk < k1; ++kk) {
          const T av = arow[kk];
          if (av == T{}) continue;
          const T* brow = b + kk * n;
          for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
      }
    }
  }
}

// C[K,N] += A[M,K]^T * B[M,N]
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t k0 = 0; k0 < k; k0 += kBlockK) {
    const std::size_t k1 = std::min(k, k0 + kBlockK);
    for (std::size_t r = 0; r < m; ++r) {
      const T* arow = a + r * k;
      const T* brow = b + r * n;
      for (std::size_t kk = k0; kk < k1; ++kk) {
        const T av = arow[kk];
        if (av == T{}) continue;
        T* crow = c + kk * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

}  // namespace capslstm::detail
