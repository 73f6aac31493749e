#pragma once

#include <cstddef>
#include <vector>

// Small dense matrix kernels backing the convolution lowering. All matrices
// are row-major and contiguous. Every output element accumulates its terms in
// ascending k order regardless of shape dispatch or caller-side threading, so
// repeated runs are bit-identical.

namespace gunet {

namespace detail {

// Accumulates a TR x TC register tile of C += A * B over the full K range.
// The inner loop over TC vectorizes.
template <typename T, int TR, int TC>
inline void gemm_tile(int K, int ldb, int ldc, const T* a, int lda, const T* b, T* c) {
  T acc[TR][TC];
  for (int r = 0; r < TR; ++r)
    for (int j = 0; j < TC; ++j) acc[r][j] = c[r * static_cast<std::size_t>(ldc) + j];
  for (int k = 0; k < K; ++k) {
    const T* bk = b + static_cast<std::size_t>(k) * ldb;
    for (int r = 0; r < TR; ++r) {
      const T ar = a[r * static_cast<std::size_t>(lda) + k];
      for (int j = 0; j < TC; ++j) acc[r][j] += ar * bk[j];
    }
  }
  for (int r = 0; r < TR; ++r)
    for (int j = 0; j < TC; ++j) c[r * static_cast<std::size_t>(ldc) + j] = acc[r][j];
}

// Tail tile with runtime column count tc < TC.
template <typename T, int TR, int TC>
inline void gemm_tile_tail(int K, int tc, int ldb, int ldc, const T* a, int lda, const T* b,
                           T* c) {
  T acc[TR][TC];
  for (int r = 0; r < TR; ++r)
    for (int j = 0; j < tc; ++j) acc[r][j] = c[r * static_cast<std::size_t>(ldc) + j];
  for (int k = 0; k < K; ++k) {
    const T* bk = b + static_cast<std::size_t>(k) * ldb;
    for (int r = 0; r < TR; ++r) {
      const T ar = a[r * static_cast<std::size_t>(lda) + k];
      for (int j = 0; j < tc; ++j) acc[r][j] += ar * bk[j];
    }
  }
  for (int r = 0; r < TR; ++r)
    for (int j = 0; j < tc; ++j) c[r * static_cast<std::size_t>(ldc) + j] = acc[r][j];
}

// Buffers 0-2 belong to the narrow-N dispatch in gemm_accum; buffer 3 holds
// operand transposes made by gemm_transA_accum / gemm_transB_accum, which may
// then re-enter gemm_accum without aliasing its dispatch buffers.
template <typename T>
std::vector<T>& scratch(int which) {
  thread_local std::vector<T> bufs[4];
  return bufs[which];
}

// C += A * B with no shape dispatch.
template <typename T>
void gemm_plain(int M, int N, int K, const T* A, const T* B, T* C) {
  constexpr int TR = 4;
  constexpr int TC = 32;
  int i = 0;
  for (; i + TR <= M; i += TR) {
    const T* a = A + static_cast<std::size_t>(i) * K;
    T* c = C + static_cast<std::size_t>(i) * N;
    int j = 0;
    for (; j + TC <= N; j += TC) gemm_tile<T, TR, TC>(K, N, N, a, K, B + j, c + j);
    if (j < N) gemm_tile_tail<T, TR, TC>(K, N - j, N, N, a, K, B + j, c + j);
  }
  for (; i < M; ++i) {
    const T* a = A + static_cast<std::size_t>(i) * K;
    T* c = C + static_cast<std::size_t>(i) * N;
    int j = 0;
    for (; j + TC <= N; j += TC) gemm_tile<T, 1, TC>(K, N, N, a, K, B + j, c + j);
    if (j < N) gemm_tile_tail<T, 1, TC>(K, N - j, N, N, a, K, B + j, c + j);
  }
}

template <typename T>
inline bool narrow_n(int M, int N, int K) {
  return N < 24 && M >= 2 * N && M >= 32 && K >= 4;
}

}  // namespace detail

// dst[c][r] = src[r][c]; src is (rows, cols) row-major. Blocked for cache.
template <typename T>
void transpose(int rows, int cols, const T* src, T* dst) {
  constexpr int B = 32;
  for (int r0 = 0; r0 < rows; r0 += B) {
    const int r1 = (r0 + B < rows) ? r0 + B : rows;
    for (int c0 = 0; c0 < cols; c0 += B) {
      const int c1 = (c0 + B < cols) ? c0 + B : cols;
      for (int r = r0; r < r1; ++r)
        for (int c = c0; c < c1; ++c)
          dst[static_cast<std::size_t>(c) * rows + r] = src[static_cast<std::size_t>(r) * cols + c];
    }
  }
}

// C[M,N] += A[M,K] * B[K,N]. When N is narrow and M wide, evaluates the
// transposed product C^T = B^T A^T in scratch for vectorization and adds it
// back; per-element term order (ascending k) is unchanged.
template <typename T>
void gemm_accum(int M, int N, int K, const T* A, const T* B, T* C) {
  if (detail::narrow_n<T>(M, N, K)) {
    auto& bt = detail::scratch<T>(0);
    auto& at = detail::scratch<T>(1);
    auto& ct = detail::scratch<T>(2);
    bt.resize(static_cast<std::size_t>(N) * K);
    at.resize(static_cast<std::size_t>(K) * M);
    ct.assign(static_cast<std::size_t>(N) * M, T{});
    transpose(K, N, B, bt.data());
    transpose(M, K, A, at.data());
    detail::gemm_plain(N, M, K, bt.data(), at.data(), ct.data());
    for (int i = 0; i < M; ++i)
      for (int j = 0; j < N; ++j)
        C[static_cast<std::size_t>(i) * N + j] += ct[static_cast<std::size_t>(j) * M + i];
    return;
  }
  detail::gemm_plain(M, N, K, A, B, C);
}

// C[M,N] += A^T * B where A is stored (K, M) row-major.
template <typename T>
void gemm_transA_accum(int M, int N, int K, const T* A, const T* B, T* C) {
  if (detail::narrow_n<T>(M, N, K)) {
    // C^T = B^T * A needs only one transpose: A is already laid out (K, M).
    auto& bt = detail::scratch<T>(0);
    auto& ct = detail::scratch<T>(2);
    bt.resize(static_cast<std::size_t>(N) * K);
    ct.assign(static_cast<std::size_t>(N) * M, T{});
    transpose(K, N, B, bt.data());
    detail::gemm_plain(N, M, K, bt.data(), A, ct.data());
    for (int i = 0; i < M; ++i)
      for (int j = 0; j < N; ++j)
        C[static_cast<std::size_t>(i) * N + j] += ct[static_cast<std::size_t>(j) * M + i];
    return;
  }
  auto& at = detail::scratch<T>(3);
  at.resize(static_cast<std::size_t>(M) * K);
  transpose(K, M, A, at.data());
  gemm_accum(M, N, K, at.data(), B, C);
}

// C[M,N] += A * B^T where B is stored (N, K) row-major.
template <typename T>
void gemm_transB_accum(int M, int N, int K, const T* A, const T* B, T* C) {
  auto& bt = detail::scratch<T>(3);
  bt.resize(static_cast<std::size_t>(K) * N);
  transpose(N, K, B, bt.data());
  gemm_accum(M, N, K, A, bt.data(), C);
}

}  // namespace gunet
