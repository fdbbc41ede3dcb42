#include "ternclip/gemm.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

namespace ternclip::gemm {

namespace {

using v4 = float __attribute__((vector_size(16)));

inline v4 load4(const float* p) {
  v4 v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

inline void store4(float* p, v4 v) { std::memcpy(p, &v, sizeof v); }

// R x 4V tile of C kept in registers while p runs over the whole inner
// dimension, so each element still sums its products in increasing p.
template <std::size_t R, std::size_t V>
inline void tile(const float* a, std::size_t lda, const float* b, std::size_t ldb, float* c, std::size_t k) {
  v4 acc[R][V];
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t v = 0; v < V; ++v) acc[r][v] = load4(c + r * ldb + 4 * v);
  }
  for (std::size_t p = 0; p < k; ++p) {
    v4 bv[V];
    for (std::size_t v = 0; v < V; ++v) bv[v] = load4(b + p * ldb + 4 * v);
    for (std::size_t r = 0; r < R; ++r) {
      const float av = a[r * lda + p];
      for (std::size_t v = 0; v < V; ++v) acc[r][v] += av * bv[v];
    }
  }
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t v = 0; v < V; ++v) store4(c + r * ldb + 4 * v, acc[r][v]);
  }
}

// Columns j0..n of R rows, one column at a time.
template <std::size_t R>
void column_tail(const float* a, std::size_t lda, const float* b, std::size_t ldb, float* c, std::size_t k,
                 std::size_t j0, std::size_t n) {
  for (std::size_t j = j0; j < n; ++j) {
    for (std::size_t r = 0; r < R; ++r) {
      float s = c[r * ldb + j];
      for (std::size_t p = 0; p < k; ++p) s += a[r * lda + p] * b[p * ldb + j];
      c[r * ldb + j] = s;
    }
  }
}

template <std::size_t R>
void row_panel(const float* a, std::size_t k, const float* b, std::size_t n, float* c) {
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) tile<R, 2>(a, k, b + j, n, c + j, k);
  for (; j + 4 <= n; j += 4) tile<R, 1>(a, k, b + j, n, c + j, k);
  column_tail<R>(a, k, b, n, c, k, j, n);
}

}  // namespace

void nn(std::size_t m, std::size_t n, std::size_t k, std::span<const float> a, std::span<const float> b,
        std::span<float> c, bool accumulate) {
  if (!accumulate) std::fill_n(c.begin(), m * n, 0.0f);
  const float* pa = a.data();
  const float* pb = b.data();
  float* pc = c.data();
  std::size_t i = 0;
  for (; i + 8 <= m; i += 8) row_panel<8>(pa + i * k, k, pb, n, pc + i * n);
  for (; i < m; ++i) row_panel<1>(pa + i * k, k, pb, n, pc + i * n);
}

void transpose(std::size_t rows, std::size_t cols, std::span<const float> in, std::span<float> out) {
  constexpr std::size_t tile = 16;
  for (std::size_t r0 = 0; r0 < rows; r0 += tile) {
    const std::size_t r1 = std::min(rows, r0 + tile);
    for (std::size_t c0 = 0; c0 < cols; c0 += tile) {
      const std::size_t c1 = std::min(cols, c0 + tile);
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) out[c * rows + r] = in[r * cols + c];
      }
    }
  }
}

void nt(std::size_t m, std::size_t n, std::size_t k, std::span<const float> a, std::span<const float> b,
        std::span<float> c, bool accumulate) {
  std::vector<float> bt(n * k);
  transpose(n, k, b, bt);
  nn(m, n, k, a, bt, c, accumulate);
}

void tn(std::size_t m, std::size_t n, std::size_t k, std::span<const float> a, std::span<const float> b,
        std::span<float> c, bool accumulate) {
  std::vector<float> at(m * k);
  transpose(k, m, a, at);
  nn(m, n, k, at, b, c, accumulate);
}

}  // namespace ternclip::gemm
