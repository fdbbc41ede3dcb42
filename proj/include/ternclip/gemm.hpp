#pragma once

#include <cstddef>
#include <span>

namespace ternclip::gemm {

// Dense single-precision kernels over row-major buffers. Each output element
// is accumulated over the inner dimension in increasing index order, so a row
// of C depends only on the matching row of A and results never depend on M.

/// C[M x N] (+)= A[M x K] * B[K x N]
void nn(std::size_t m, std::size_t n, std::size_t k, std::span<const float> a,
        std::span<const float> b, std::span<float> c, bool accumulate);

/// C[M x N] (+)= A[M x K] * B[N x K]^T
void nt(std::size_t m, std::size_t n, std::size_t k, std::span<const float> a,
        std::span<const float> b, std::span<float> c, bool accumulate);

/// C[M x N] (+)= A[K x M]^T * B[K x N]
void tn(std::size_t m, std::size_t n, std::size_t k, std::span<const float> a,
        std::span<const float> b, std::span<float> c, bool accumulate);

/// out[cols x rows] = in[rows x cols]^T
void transpose(std::size_t rows, std::size_t cols, std::span<const float> in, std::span<float> out);

}  // namespace ternclip::gemm
