#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ternclip/tensor.hpp"
#include "ternclip/ternary.hpp"

namespace ternclip {

struct KernelStats {
  std::uint64_t bytes_touched = 0;
  std::uint64_t mul_free_accumulations = 0;
  std::uint64_t wall_time_ns = 0;
};

// Packed kernels. For every output element the trits are visited in block
// order, then in-block order; +1 adds the input, -1 subtracts it, 0 is
// skipped. Each block's partial sum is multiplied by its scale exactly once.

/// y[m] = t[m x k] * x[k]
DenseTensor ternary_matvec(const TernaryTensor& t, const DenseTensor& x, KernelStats* stats = nullptr);
/// Y[m x n] = t[m x k] * X[k x n]; column j equals ternary_matvec on column j.
DenseTensor ternary_matmul(const TernaryTensor& t, const DenseTensor& x, KernelStats* stats = nullptr);
/// Y[n x m] = X[n x k] * t[m x k]^T; row i equals ternary_matvec on row i.
/// This is the layer form used by the encoders.
DenseTensor ternary_linear(const TernaryTensor& t, const DenseTensor& x, KernelStats* stats = nullptr);

enum class KernelVariant { DenseF32, DequantThenDense, PackedTernary };
std::string to_string(KernelVariant v);

struct BenchShape {
  std::size_t m = 0;  // output rows
  std::size_t k = 0;  // inner
  std::size_t n = 0;  // columns
};

struct BenchResult {
  KernelVariant variant{};
  BenchShape shape;
  KernelStats stats;  // wall_time_ns holds the median
  double median_ns = 0.0;
  double mad_ns = 0.0;  // median absolute deviation
  double min_ns = 0.0;
  double max_ns = 0.0;
  std::size_t repetitions = 0;
};

/// Times the three variants on a random ternarized weight. Before timing the
/// packed result is checked against the dense one (1e-5 absolute); a mismatch
/// throws NumericError.
std::vector<BenchResult> bench_kernel(const BenchShape& shape, std::size_t repetitions, std::uint64_t seed = 1);
/// Same, for an existing ternary weight. The gate widens 1e-5 by the float32
/// summation error bound 2 * k * 2^-24 * sum_j |w_ij x_j|, since trained
/// weights can make outputs far larger than the random case.
std::vector<BenchResult> bench_kernel(const TernaryTensor& weight, std::size_t n, std::size_t repetitions,
                                      std::uint64_t seed = 1);

}  // namespace ternclip
