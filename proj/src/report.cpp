#include "ternclip/report.hpp"

#include <set>
#include <sstream>

#include "ternclip/error.hpp"

namespace ternclip {

EfficiencyReport efficiency_report(const Container& c, std::vector<KernelLatency> bench) {
  EfficiencyReport r;
  const StorageReport storage = storage_report(c);
  r.total_params = storage.total_elements;
  r.data_bytes = storage.data_bytes;
  r.file_bytes = storage.file_bytes;
  r.bits_per_weight = storage.bits_per_weight;
  r.compression_ratio = storage.compression_ratio;

  std::uint64_t zero_trits = 0, dense_zeros = 0;
  for (const auto& e : c.entries) {
    if (e.dtype == DType::TernaryPacked) {
      const TernaryTensor t = decode_ternary(e);
      r.ternary_params += t.element_count;
      zero_trits += zero_count(t);
    } else {
      for (float v : decode_dense(e).data) dense_zeros += v == 0.0f ? 1 : 0;
    }
  }
  if (r.total_params > 0) {
    r.quantized_proportion = static_cast<double>(r.ternary_params) / static_cast<double>(r.total_params);
    r.sparsity_total = static_cast<double>(zero_trits + dense_zeros) / static_cast<double>(r.total_params);
  }
  if (r.ternary_params > 0) r.sparsity_ternary = static_cast<double>(zero_trits) / static_cast<double>(r.ternary_params);
  r.kernels = std::move(bench);
  return r;
}

EfficiencyReport efficiency_report(const std::filesystem::path& path, std::vector<KernelLatency> bench) {
  const auto bytes = read_file(path);
  EfficiencyReport r = efficiency_report(parse(bytes), std::move(bench));
  r.file_bytes = bytes.size();
  return r;
}

std::vector<KernelLatency> bench_container(const Container& c, std::size_t repetitions, std::size_t n,
                                           std::uint64_t seed) {
  if (repetitions == 0) throw ConfigError("bench: repetitions must be >= 1");
  std::vector<KernelLatency> out;
  std::set<Dims> seen;
  for (const auto& e : c.entries) {
    if (e.dtype != DType::TernaryPacked || e.dims.size() != 2 || !seen.insert(e.dims).second) continue;
    for (auto& b : bench_kernel(decode_ternary(e), n, repetitions, seed)) out.push_back({e.name, b});
  }
  return out;
}

std::string sparsity_field(double total, std::optional<double> ternary) {
  char buf[64];
  if (ternary) {
    std::snprintf(buf, sizeof buf, "%.2f%% (%.2f%%)", 100.0 * total, 100.0 * *ternary);
  } else {
    std::snprintf(buf, sizeof buf, "%.2f%% (n/a)", 100.0 * total);
  }
  return buf;
}

std::string efficiency_text(const EfficiencyReport& r) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "quantized proportion  %.2f%% (%llu of %llu)\n"
                "bits per weight       %.4f\n"
                "compression ratio     %.2fx\n"
                "sparsity              %s\n"
                "storage bytes         %llu (file %llu)\n",
                100.0 * r.quantized_proportion, static_cast<unsigned long long>(r.ternary_params),
                static_cast<unsigned long long>(r.total_params), r.bits_per_weight, r.compression_ratio,
                sparsity_field(r.sparsity_total, r.sparsity_ternary).c_str(),
                static_cast<unsigned long long>(r.data_bytes), static_cast<unsigned long long>(r.file_bytes));
  os << buf;
  for (const auto& k : r.kernels) {
    std::snprintf(buf, sizeof buf, "kernel %-34s %-18s %zux%zux%zu median %.0f ns (mad %.0f)\n", k.tensor.c_str(),
                  to_string(k.result.variant).c_str(), k.result.shape.m, k.result.shape.k, k.result.shape.n,
                  k.result.median_ns, k.result.mad_ns);
    os << buf;
  }
  return os.str();
}

std::string efficiency_csv(const EfficiencyReport& r) {
  std::ostringstream os;
  os.precision(9);
  os << "field,value\n";
  os << "total_params," << r.total_params << '\n';
  os << "ternary_params," << r.ternary_params << '\n';
  os << "quantized_proportion," << r.quantized_proportion << '\n';
  os << "bits_per_weight," << r.bits_per_weight << '\n';
  os << "compression_ratio," << r.compression_ratio << '\n';
  os << "sparsity_total," << r.sparsity_total << '\n';
  os << "sparsity_ternary,";
  if (r.sparsity_ternary) os << *r.sparsity_ternary;
  os << '\n';
  os << "data_bytes," << r.data_bytes << '\n';
  os << "file_bytes," << r.file_bytes << '\n';
  for (const auto& k : r.kernels) {
    os << "median_ns:" << k.tensor << ':' << to_string(k.result.variant) << ',' << k.result.median_ns << '\n';
  }
  return os.str();
}

std::string bench_csv(const std::vector<KernelLatency>& rows) {
  std::ostringstream os;
  os.precision(9);
  os << "tensor,variant,m,k,n,repetitions,median_ns,mad_ns,min_ns,max_ns,bytes_touched\n";
  for (const auto& k : rows) {
    const auto& b = k.result;
    os << k.tensor << ',' << to_string(b.variant) << ',' << b.shape.m << ',' << b.shape.k << ',' << b.shape.n << ','
       << b.repetitions << ',' << b.median_ns << ',' << b.mad_ns << ',' << b.min_ns << ',' << b.max_ns << ','
       << b.stats.bytes_touched << '\n';
  }
  return os.str();
}

}  // namespace ternclip
