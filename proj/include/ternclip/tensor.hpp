#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ternclip {

using Dims = std::vector<std::size_t>;

std::size_t element_count(const Dims& dims);
std::string dims_to_string(const Dims& dims);

/// Row-major float32 tensor. Every op views a tensor of rank >= 1 as a matrix
/// of `rows()` x `cols()` where `cols()` is the last dimension.
struct DenseTensor {
  Dims dims;
  std::vector<float> data;
  bool requires_grad = false;
  std::optional<std::vector<float>> grad;

  DenseTensor() = default;
  DenseTensor(Dims dims, std::vector<float> data, bool requires_grad = false);

  static DenseTensor zeros(Dims dims);
  static DenseTensor filled(Dims dims, float value);
  static DenseTensor scalar(float value);
  static DenseTensor matrix(std::initializer_list<std::initializer_list<float>> rows);
  static DenseTensor random_normal(Dims dims, std::mt19937_64& rng, float stddev = 1.0f);
  static DenseTensor random_uniform(Dims dims, std::mt19937_64& rng, float lo, float hi);

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return dims.size(); }
  std::size_t cols() const { return dims.empty() ? 1 : dims.back(); }
  std::size_t rows() const { return cols() == 0 ? 0 : data.size() / cols(); }

  float& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  float at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
  float item() const;

  std::span<float> row(std::size_t r) { return {data.data() + r * cols(), cols()}; }
  std::span<const float> row(std::size_t r) const { return {data.data() + r * cols(), cols()}; }

  std::vector<float>& ensure_grad();
  void zero_grad();
};

/// Throws NumericError naming `what` if any element is NaN or infinite.
void check_finite(std::span<const float> values, std::string_view what);
inline void check_finite(const DenseTensor& t, std::string_view what) { check_finite(t.data, what); }

bool all_finite(std::span<const float> values);

}  // namespace ternclip
