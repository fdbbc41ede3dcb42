#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ternclip/container.hpp"
#include "ternclip/kernels.hpp"

namespace ternclip {

struct KernelLatency {
  std::string tensor;
  BenchResult result;
};

struct EfficiencyReport {
  std::uint64_t total_params = 0;
  std::uint64_t ternary_params = 0;
  double quantized_proportion = 0.0;
  double bits_per_weight = 0.0;
  double compression_ratio = 0.0;  // against f32 storage of every element
  double sparsity_total = 0.0;     // zero trits plus exact-zero dense values, over all elements
  std::optional<double> sparsity_ternary;  // zero trits over ternary elements
  std::uint64_t data_bytes = 0;
  std::uint64_t file_bytes = 0;
  std::vector<KernelLatency> kernels;
};

/// Pure function of the container and the bench results.
EfficiencyReport efficiency_report(const Container& c, std::vector<KernelLatency> bench = {});
EfficiencyReport efficiency_report(const std::filesystem::path& path, std::vector<KernelLatency> bench = {});

/// Benchmarks the first packed tensor of each distinct shape against a random
/// [k x n] input.
std::vector<KernelLatency> bench_container(const Container& c, std::size_t repetitions, std::size_t n = 16,
                                           std::uint64_t seed = 1);

/// "x% (y%)": total sparsity, then ternary-only sparsity.
std::string sparsity_field(double total, std::optional<double> ternary);

std::string efficiency_text(const EfficiencyReport& r);
std::string efficiency_csv(const EfficiencyReport& r);
std::string bench_csv(const std::vector<KernelLatency>& rows);

}  // namespace ternclip
