#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "ternclip/graph.hpp"
#include "ternclip/ops.hpp"
#include "ternclip/tensor.hpp"

namespace ternclip::testing {

using Builder = std::function<Var(Graph&, const std::vector<Var>&)>;

inline double norm2(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

/// Norm-wise relative error between the analytic gradient of every input and
/// a central finite-difference estimate, maximised over inputs. `f` must
/// build a scalar.
inline double gradient_error(const Builder& f, const std::vector<DenseTensor>& inputs, float h = 1e-2f) {
  Graph g;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(g.input(t));
  g.backward(f(g, vars));

  auto eval = [&](std::size_t which, std::size_t idx, float delta) {
    Graph e;
    std::vector<Var> vs;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      DenseTensor t = inputs[i];
      if (i == which) t.data[idx] += delta;
      vs.push_back(e.constant(std::move(t)));
    }
    return static_cast<double>(e.value(f(e, vs)).item());
  };

  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& analytic = g.grad(vars[i]);
    std::vector<double> diff, a(inputs[i].size()), fd(inputs[i].size());
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      a[j] = analytic.empty() ? 0.0 : analytic[j];
      fd[j] = (eval(i, j, h) - eval(i, j, -h)) / (2.0 * h);
      diff.push_back(a[j] - fd[j]);
    }
    const double scale = std::max({norm2(a), norm2(fd), 1e-6});
    worst = std::max(worst, norm2(diff) / scale);
  }
  return worst;
}

/// Scalarises an op output as mean((out - target)^2) with a fixed random target.
inline Var against_target(Graph& g, Var out, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  return mse(g, out, g.constant(DenseTensor::random_normal(g.value(out).dims, rng)));
}

inline DenseTensor randn(Dims dims, std::mt19937_64& rng, float stddev = 1.0f) {
  return DenseTensor::random_normal(std::move(dims), rng, stddev);
}

/// Rows of independent standard normals scaled to unit length.
inline DenseTensor unit_rows(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  DenseTensor t = DenseTensor::random_normal({rows, cols}, rng);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (float v : t.row(r)) s += static_cast<double>(v) * v;
    const auto inv = static_cast<float>(1.0 / std::sqrt(s));
    for (auto& v : t.row(r)) v *= inv;
  }
  return t;
}

}  // namespace ternclip::testing
