#include "ternclip/tensor.hpp"

#include <cmath>
#include <sstream>

#include "ternclip/error.hpp"

namespace ternclip {

std::size_t element_count(const Dims& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::string dims_to_string(const Dims& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "x" : "") << dims[i];
  os << ']';
  return os.str();
}

DenseTensor::DenseTensor(Dims dims_in, std::vector<float> data_in, bool requires_grad_in)
    : dims(std::move(dims_in)), data(std::move(data_in)), requires_grad(requires_grad_in) {
  for (auto d : dims) {
    if (d == 0) throw ShapeError("tensor dims must be positive, got " + dims_to_string(dims));
  }
  if (element_count(dims) != data.size()) {
    throw ShapeError("tensor dims " + dims_to_string(dims) + " do not match " + std::to_string(data.size()) +
                     " values");
  }
}

DenseTensor DenseTensor::zeros(Dims dims) { return filled(std::move(dims), 0.0f); }

DenseTensor DenseTensor::filled(Dims dims, float value) {
  const auto n = element_count(dims);
  return DenseTensor(std::move(dims), std::vector<float>(n, value));
}

DenseTensor DenseTensor::scalar(float value) { return DenseTensor({1}, {value}); }

DenseTensor DenseTensor::matrix(std::initializer_list<std::initializer_list<float>> rows) {
  std::vector<float> data;
  std::size_t cols = 0;
  for (const auto& r : rows) {
    if (cols == 0) cols = r.size();
    if (r.size() != cols) throw ShapeError("ragged matrix literal");
    data.insert(data.end(), r.begin(), r.end());
  }
  return DenseTensor({rows.size(), cols}, std::move(data));
}

DenseTensor DenseTensor::random_normal(Dims dims, std::mt19937_64& rng, float stddev) {
  std::normal_distribution<float> dist(0.0f, stddev);
  auto t = zeros(std::move(dims));
  for (auto& v : t.data) v = dist(rng);
  return t;
}

DenseTensor DenseTensor::random_uniform(Dims dims, std::mt19937_64& rng, float lo, float hi) {
  std::uniform_real_distribution<float> dist(lo, hi);
  auto t = zeros(std::move(dims));
  for (auto& v : t.data) v = dist(rng);
  return t;
}

float DenseTensor::item() const {
  if (data.size() != 1) throw ShapeError("item() on tensor " + dims_to_string(dims));
  return data[0];
}

std::vector<float>& DenseTensor::ensure_grad() {
  if (!grad || grad->size() != data.size()) grad.emplace(data.size(), 0.0f);
  return *grad;
}

void DenseTensor::zero_grad() {
  if (grad) std::fill(grad->begin(), grad->end(), 0.0f);
}

bool all_finite(std::span<const float> values) {
  // v - v is NaN exactly when v is NaN or infinite; the sum stays branch-free.
  float acc = 0.0f;
  for (float v : values) acc += v - v;
  return acc == 0.0f;
}

void check_finite(std::span<const float> values, std::string_view what) {
  if (all_finite(values)) return;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError("non-finite value " + std::to_string(values[i]) + " at index " + std::to_string(i) +
                         " of " + std::string(what));
    }
  }
}

}  // namespace ternclip
