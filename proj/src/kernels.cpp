#include "ternclip/kernels.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include "ternclip/error.hpp"
#include "ternclip/gemm.hpp"

namespace ternclip {
namespace {

// Y[m x cols] = t[m x k] * X[k x cols] with X and Y row-major. Within each
// block segment of a weight row the +1/-1 columns of X are summed into a
// scratch row, which is then scaled once and added to the output row.
void packed_core(const TernaryTensor& t, std::span<const float> x, std::size_t cols, std::span<float> y,
                 KernelStats* stats) {
  const std::size_t m = t.dims[0];
  const std::size_t k = t.element_count / m;
  const auto trits = t.trits();
  std::vector<float> scales(t.blocks.size());
  for (std::size_t b = 0; b < scales.size(); ++b) scales[b] = t.block_scale(b);

  std::fill(y.begin(), y.end(), 0.0f);
  std::vector<float> acc(cols);
  std::uint64_t accumulations = 0;
  for (std::size_t row = 0; row < m; ++row) {
    float* out = y.data() + row * cols;
    const std::size_t base = row * k;
    std::size_t j = 0;
    while (j < k) {
      const std::size_t block = (base + j) / kBlockWeights;
      const std::size_t seg_end = std::min(k, (block + 1) * kBlockWeights - base);
      std::fill(acc.begin(), acc.end(), 0.0f);
      for (; j < seg_end; ++j) {
        const Trit tr = trits[base + j];
        if (tr == 0) continue;
        const float* xr = x.data() + j * cols;
        if (tr > 0) {
          for (std::size_t c = 0; c < cols; ++c) acc[c] += xr[c];
        } else {
          for (std::size_t c = 0; c < cols; ++c) acc[c] -= xr[c];
        }
        accumulations += cols;
      }
      const float s = scales[block];
      for (std::size_t c = 0; c < cols; ++c) out[c] += s * acc[c];
    }
  }
  if (stats != nullptr) {
    stats->bytes_touched += t.byte_size();
    stats->mul_free_accumulations += accumulations;
  }
}

void require_matrix(const TernaryTensor& t, std::string_view op) {
  if (t.dims.size() != 2) throw ShapeError(std::string(op) + ": weight must be a matrix, got " + dims_to_string(t.dims));
}

}  // namespace

DenseTensor ternary_matvec(const TernaryTensor& t, const DenseTensor& x, KernelStats* stats) {
  require_matrix(t, "ternary_matvec");
  if (x.size() != t.dims[1]) {
    throw ShapeError("ternary_matvec: weight " + dims_to_string(t.dims) + " vs input " + dims_to_string(x.dims));
  }
  auto y = DenseTensor::zeros({t.dims[0]});
  packed_core(t, x.data, 1, y.data, stats);
  return y;
}

DenseTensor ternary_matmul(const TernaryTensor& t, const DenseTensor& x, KernelStats* stats) {
  require_matrix(t, "ternary_matmul");
  if (x.rank() != 2 || x.dims[0] != t.dims[1]) {
    throw ShapeError("ternary_matmul: weight " + dims_to_string(t.dims) + " vs input " + dims_to_string(x.dims));
  }
  const std::size_t n = x.dims[1];
  auto y = DenseTensor::zeros({t.dims[0], n});
  packed_core(t, x.data, n, y.data, stats);
  return y;
}

DenseTensor ternary_linear(const TernaryTensor& t, const DenseTensor& x, KernelStats* stats) {
  require_matrix(t, "ternary_linear");
  if (x.rank() != 2 || x.dims[1] != t.dims[1]) {
    throw ShapeError("ternary_linear: weight " + dims_to_string(t.dims) + " vs input " + dims_to_string(x.dims));
  }
  const std::size_t n = x.dims[0], k = x.dims[1], m = t.dims[0];
  std::vector<float> xt(k * n), yt(m * n);
  gemm::transpose(n, k, x.data, xt);
  packed_core(t, xt, n, yt, stats);
  auto y = DenseTensor::zeros({n, m});
  gemm::transpose(m, n, yt, y.data);
  return y;
}

std::string to_string(KernelVariant v) {
  switch (v) {
    case KernelVariant::DenseF32:
      return "dense_f32";
    case KernelVariant::DequantThenDense:
      return "dequant_then_dense";
    case KernelVariant::PackedTernary:
      return "packed_ternary";
  }
  return "unknown";
}

namespace {

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

template <typename Fn>
BenchResult time_variant(KernelVariant variant, const BenchShape& shape, std::size_t reps, Fn&& fn) {
  BenchResult r;
  r.variant = variant;
  r.shape = shape;
  r.repetitions = reps;
  std::vector<double> times;
  times.reserve(reps);
  for (std::size_t i = 0; i < reps; ++i) {
    KernelStats s;
    const auto t0 = std::chrono::steady_clock::now();
    fn(s);
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(static_cast<double>(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count()));
    r.stats.bytes_touched = s.bytes_touched;
    r.stats.mul_free_accumulations = s.mul_free_accumulations;
  }
  r.median_ns = median_of(times);
  std::vector<double> dev;
  dev.reserve(times.size());
  for (double t : times) dev.push_back(std::abs(t - r.median_ns));
  r.mad_ns = median_of(dev);
  r.min_ns = *std::min_element(times.begin(), times.end());
  r.max_ns = *std::max_element(times.begin(), times.end());
  r.stats.wall_time_ns = static_cast<std::uint64_t>(r.median_ns);
  return r;
}

}  // namespace

namespace {

// strict: 1e-5 absolute. Otherwise the bound also admits the float32 summation
// error of two accumulation orders, 2 * k * 2^-24 * sum_j |w_ij x_j|.
std::vector<BenchResult> bench_impl(const TernaryTensor& weight, std::size_t n, std::size_t repetitions,
                                    std::uint64_t seed, bool strict) {
  require_matrix(weight, "bench_kernel");
  if (repetitions < 1) throw ConfigError("bench_kernel: repetitions must be >= 1");
  if (n < 1) throw ConfigError("bench_kernel: n must be >= 1");
  const std::size_t m = weight.dims[0], k = weight.dims[1];
  const BenchShape shape{m, k, n};
  std::mt19937_64 rng(seed);
  const auto x = DenseTensor::random_uniform({k, n}, rng, -10.0f, 10.0f);
  const auto w = dequantize(weight);

  // Correctness gate before any timing.
  auto dense = DenseTensor::zeros({m, n});
  gemm::nn(m, n, k, w.data, x.data, dense.data, false);
  const auto packed = ternary_matmul(weight, x);
  std::vector<double> magnitude(m * n, 0.0);
  if (!strict) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double wv = std::abs(static_cast<double>(w.data[i * k + p]));
        for (std::size_t j = 0; j < n; ++j) magnitude[i * n + j] += wv * std::abs(x.data[p * n + j]);
      }
    }
  }
  const double unit = std::ldexp(1.0, -24);
  for (std::size_t i = 0; i < dense.size(); ++i) {
    const double tol = std::max(1e-5, 2.0 * static_cast<double>(k) * unit * magnitude[i]);
    if (std::abs(static_cast<double>(dense.data[i]) - packed.data[i]) > tol) {
      throw NumericError("bench_kernel: packed kernel disagrees with dense oracle at element " + std::to_string(i));
    }
  }

  std::vector<BenchResult> out;
  std::vector<float> y(m * n);
  out.push_back(time_variant(KernelVariant::DenseF32, shape, repetitions, [&](KernelStats& s) {
    gemm::nn(m, n, k, w.data, x.data, y, false);
    s.bytes_touched = m * k * sizeof(float);
  }));
  out.push_back(time_variant(KernelVariant::DequantThenDense, shape, repetitions, [&](KernelStats& s) {
    const auto wd = dequantize(weight);
    gemm::nn(m, n, k, wd.data, x.data, y, false);
    s.bytes_touched = weight.byte_size() + m * k * sizeof(float);
  }));
  out.push_back(time_variant(KernelVariant::PackedTernary, shape, repetitions, [&](KernelStats& s) {
    const auto r = ternary_matmul(weight, x, &s);
    y.assign(r.data.begin(), r.data.end());
  }));
  return out;
}

}  // namespace

std::vector<BenchResult> bench_kernel(const TernaryTensor& weight, std::size_t n, std::size_t repetitions,
                                      std::uint64_t seed) {
  return bench_impl(weight, n, repetitions, seed, false);
}

std::vector<BenchResult> bench_kernel(const BenchShape& shape, std::size_t repetitions, std::uint64_t seed) {
  if (shape.m == 0 || shape.k == 0 || shape.n == 0) throw ConfigError("bench_kernel: empty shape");
  std::mt19937_64 rng(seed);
  const auto w = DenseTensor::random_normal({shape.m, shape.k}, rng, 0.02f);
  return bench_impl(ternarize(w, QuantizerConfig{}), shape.n, repetitions, seed + 1, true);
}

}  // namespace ternclip
