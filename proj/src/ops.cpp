#include "ternclip/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "ternclip/error.hpp"
#include "ternclip/gemm.hpp"
#include "ternclip/kernels.hpp"
#include "ternclip/ternary.hpp"

namespace ternclip {
namespace {

void require(bool ok, std::string_view op, const std::string& what) {
  if (!ok) throw ShapeError(std::string(op) + ": " + what);
}

void require_matrix(const DenseTensor& t, std::string_view op) {
  require(t.rank() == 2, op, "expected a matrix, got " + dims_to_string(t.dims));
}

Var finish(Graph& g, std::string_view op, std::vector<Var> inputs, DenseTensor out, Graph::Backward bw) {
  check_finite(out, op);
  return g.record(op, std::move(inputs), std::move(out), std::move(bw));
}

// Gradient buffer of input `slot` of `node`, or nullptr if it needs none.
float* input_grad(Graph& g, std::size_t node, std::size_t slot) {
  const auto id = g.node(node).inputs[slot];
  if (!g.needs_grad(id)) return nullptr;
  return g.grad_buffer(id).data();
}

const DenseTensor& input_value(const Graph& g, std::size_t node, std::size_t slot) {
  return g.node(g.node(node).inputs[slot]).value;
}

}  // namespace

Var matmul(Graph& g, Var a, Var b) {
  const auto& av = g.value(a);
  const auto& bv = g.value(b);
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  const std::size_t m = av.dims[0], k = av.dims[1], n = bv.dims[1];
  require(bv.dims[0] == k, "matmul", "inner dims " + dims_to_string(av.dims) + " * " + dims_to_string(bv.dims));
  auto out = DenseTensor::zeros({m, n});
  gemm::nn(m, n, k, av.data, bv.data, out.data, false);
  return finish(g, "matmul", {a, b}, std::move(out), [m, n, k](Graph& g, std::size_t id) {
    const auto& dc = g.node(id).grad;
    if (float* da = input_grad(g, id, 0)) {
      gemm::nt(m, k, n, dc, input_value(g, id, 1).data, {da, m * k}, true);
    }
    if (float* db = input_grad(g, id, 1)) {
      gemm::tn(k, n, m, input_value(g, id, 0).data, dc, {db, k * n}, true);
    }
  });
}

Var linear(Graph& g, Var x, Var w) {
  const auto& xv = g.value(x);
  const auto& wv = g.value(w);
  require_matrix(xv, "linear");
  require_matrix(wv, "linear");
  const std::size_t n = xv.dims[0], in = xv.dims[1], out_dim = wv.dims[0];
  require(wv.dims[1] == in, "linear", "input " + dims_to_string(xv.dims) + " vs weight " + dims_to_string(wv.dims));

  DenseTensor out;
  if (const auto& packed = g.node(w).ternary) {
    out = ternary_linear(*packed, xv);
    g.count_packed_op();
  } else {
    out = DenseTensor::zeros({n, out_dim});
    gemm::nt(n, out_dim, in, xv.data, wv.data, out.data, false);
  }
  return finish(g, "linear", {x, w}, std::move(out), [n, in, out_dim](Graph& g, std::size_t id) {
    const auto& dy = g.node(id).grad;
    if (float* dx = input_grad(g, id, 0)) {
      gemm::nn(n, in, out_dim, dy, input_value(g, id, 1).data, {dx, n * in}, true);
    }
    if (float* dw = input_grad(g, id, 1)) {
      gemm::tn(out_dim, in, n, dy, input_value(g, id, 0).data, {dw, out_dim * in}, true);
    }
  });
}

Var add(Graph& g, Var a, Var b) {
  const auto& av = g.value(a);
  const auto& bv = g.value(b);
  require(av.dims == bv.dims, "add", dims_to_string(av.dims) + " vs " + dims_to_string(bv.dims));
  auto out = av;
  out.requires_grad = false;
  out.grad.reset();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv.data[i];
  return finish(g, "add", {a, b}, std::move(out), [](Graph& g, std::size_t id) {
    const auto& dy = g.node(id).grad;
    for (std::size_t slot = 0; slot < 2; ++slot) {
      if (float* d = input_grad(g, id, slot)) {
        for (std::size_t i = 0; i < dy.size(); ++i) d[i] += dy[i];
      }
    }
  });
}

Var add_rows(Graph& g, Var x, Var y) {
  const auto& xv = g.value(x);
  const auto& yv = g.value(y);
  const std::size_t d = xv.cols();
  require(yv.cols() == d, "add_rows", "width " + dims_to_string(xv.dims) + " vs " + dims_to_string(yv.dims));
  const std::size_t tile = yv.rows();
  require(tile > 0 && xv.rows() % tile == 0, "add_rows",
          "rows " + dims_to_string(xv.dims) + " not a multiple of " + dims_to_string(yv.dims));
  DenseTensor out(xv.dims, xv.data);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    const float* src = yv.data.data() + (r % tile) * d;
    float* dst = out.data.data() + r * d;
    for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
  }
  return finish(g, "add_rows", {x, y}, std::move(out), [d, tile](Graph& g, std::size_t id) {
    const auto& dy = g.node(id).grad;
    if (float* dx = input_grad(g, id, 0)) {
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
    }
    if (float* dt = input_grad(g, id, 1)) {
      const std::size_t rows = dy.size() / d;
      for (std::size_t r = 0; r < rows; ++r) {
        float* dst = dt + (r % tile) * d;
        const float* src = dy.data() + r * d;
        for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
      }
    }
  });
}

Var scale(Graph& g, Var x, float factor) {
  const auto& xv = g.value(x);
  DenseTensor out(xv.dims, xv.data);
  for (auto& v : out.data) v *= factor;
  return finish(g, "scale", {x}, std::move(out), [factor](Graph& g, std::size_t id) {
    const auto& dy = g.node(id).grad;
    if (float* dx = input_grad(g, id, 0)) {
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += factor * dy[i];
    }
  });
}

Var transpose(Graph& g, Var x) {
  const auto& xv = g.value(x);
  require_matrix(xv, "transpose");
  const std::size_t r = xv.dims[0], c = xv.dims[1];
  auto out = DenseTensor::zeros({c, r});
  gemm::transpose(r, c, xv.data, out.data);
  return finish(g, "transpose", {x}, std::move(out), [r, c](Graph& g, std::size_t id) {
    const auto& dy = g.node(id).grad;
    if (float* dx = input_grad(g, id, 0)) {
      for (std::size_t i = 0; i < c; ++i) {
        for (std::size_t j = 0; j < r; ++j) dx[j * c + i] += dy[i * r + j];
      }
    }
  });
}

Var gelu(Graph& g, Var x) {
  constexpr float k0 = 0.7978845608028654f;  // sqrt(2/pi)
  constexpr float k1 = 0.044715f;
  // 0.5 * (1 + tanh(u)) == sigmoid(2u)
  const auto& xv = g.value(x);
  DenseTensor out(xv.dims, xv.data);
  std::vector<float> sig(xv.size());
  for (std::size_t i = 0; i < sig.size(); ++i) {
    const float v = xv.data[i];
    sig[i] = 1.0f / (1.0f + std::exp(-2.0f * k0 * (v + k1 * v * v * v)));
    out.data[i] = v * sig[i];
  }
  return finish(g, "gelu", {x}, std::move(out), [sig = std::move(sig)](Graph& g, std::size_t id) {
    const auto& dy = g.node(id).grad;
    float* dx = input_grad(g, id, 0);
    if (dx == nullptr) return;
    const auto& xs = input_value(g, id, 0).data;
    for (std::size_t i = 0; i < dy.size(); ++i) {
      const float v = xs[i], s = sig[i];
      const float du = 2.0f * k0 * (1.0f + 3.0f * k1 * v * v);
      dx[i] += dy[i] * (s + v * s * (1.0f - s) * du);
    }
  });
}

Var layer_norm(Graph& g, Var x, Var gain, Var bias, float eps) {
  const auto& xv = g.value(x);
  const auto& gv = g.value(gain);
  const auto& bv = g.value(bias);
  const std::size_t d = xv.cols(), rows = xv.rows();
  require(gv.size() == d && bv.size() == d, "layer_norm",
          "affine params " + dims_to_string(gv.dims) + "/" + dims_to_string(bv.dims) + " for width " +
              std::to_string(d));
  DenseTensor out(xv.dims, std::vector<float>(xv.size()));
  std::vector<float> xhat(xv.size());
  std::vector<float> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* src = xv.data.data() + r * d;
    float mean = 0.0f;
    for (std::size_t c = 0; c < d; ++c) mean += src[c];
    mean /= static_cast<float>(d);
    float var = 0.0f;
    for (std::size_t c = 0; c < d; ++c) var += (src[c] - mean) * (src[c] - mean);
    var /= static_cast<float>(d);
    const float inv = 1.0f / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t c = 0; c < d; ++c) {
      const float h = (src[c] - mean) * inv;
      xhat[r * d + c] = h;
      out.data[r * d + c] = h * gv.data[c] + bv.data[c];
    }
  }
  return finish(g, "layer_norm", {x, gain, bias}, std::move(out),
                [d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& g, std::size_t id) {
                  const auto& dy = g.node(id).grad;
                  const auto& gv = input_value(g, id, 1).data;
                  if (float* dg = input_grad(g, id, 1)) {
                    for (std::size_t i = 0; i < dy.size(); ++i) dg[i % d] += dy[i] * xhat[i];
                  }
                  if (float* db = input_grad(g, id, 2)) {
                    for (std::size_t i = 0; i < dy.size(); ++i) db[i % d] += dy[i];
                  }
                  float* dx = input_grad(g, id, 0);
                  if (dx == nullptr) return;
                  std::vector<float> dh(d);
                  for (std::size_t r = 0; r < rows; ++r) {
                    float mean_dh = 0.0f, mean_dh_h = 0.0f;
                    for (std::size_t c = 0; c < d; ++c) {
                      dh[c] = dy[r * d + c] * gv[c];
                      mean_dh += dh[c];
                      mean_dh_h += dh[c] * xhat[r * d + c];
                    }
                    mean_dh /= static_cast<float>(d);
                    mean_dh_h /= static_cast<float>(d);
                    for (std::size_t c = 0; c < d; ++c) {
                      dx[r * d + c] += inv_std[r] * (dh[c] - mean_dh - xhat[r * d + c] * mean_dh_h);
                    }
                  }
                });
}

namespace {

void softmax_row(const float* in, float* out, std::size_t n) {
  float mx = in[0];
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, in[j]);
  float total = 0.0f;
  for (std::size_t j = 0; j < n; ++j) {
    out[j] = std::exp(in[j] - mx);
    total += out[j];
  }
  for (std::size_t j = 0; j < n; ++j) out[j] /= total;
}

// dx += y * (dy - <dy, y>) for one row.
void softmax_row_backward(const float* y, const float* dy, float* dx, std::size_t n) {
  float dot = 0.0f;
  for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
  for (std::size_t j = 0; j < n; ++j) dx[j] += y[j] * (dy[j] - dot);
}

}  // namespace

Var softmax_rows(Graph& g, Var x) {
  const auto& xv = g.value(x);
  check_finite(xv, "softmax_rows input");
  const std::size_t n = xv.cols(), rows = xv.rows();
  DenseTensor out(xv.dims, std::vector<float>(xv.size()));
  for (std::size_t r = 0; r < rows; ++r) softmax_row(xv.data.data() + r * n, out.data.data() + r * n, n);
  return finish(g, "softmax_rows", {x}, std::move(out), [n, rows](Graph& g, std::size_t id) {
    float* dx = input_grad(g, id, 0);
    if (dx == nullptr) return;
    const auto& node = g.node(id);
    for (std::size_t r = 0; r < rows; ++r) {
      softmax_row_backward(node.value.data.data() + r * n, node.grad.data() + r * n, dx + r * n, n);
    }
  });
}

Var l2_normalize_rows(Graph& g, Var x, float eps) {
  const auto& xv = g.value(x);
  const std::size_t d = xv.cols(), rows = xv.rows();
  DenseTensor out(xv.dims, std::vector<float>(xv.size()));
  std::vector<float> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    float ss = 0.0f;
    for (std::size_t c = 0; c < d; ++c) ss += xv.data[r * d + c] * xv.data[r * d + c];
    norms[r] = std::max(std::sqrt(ss), eps);
    for (std::size_t c = 0; c < d; ++c) out.data[r * d + c] = xv.data[r * d + c] / norms[r];
  }
  return finish(g, "l2_normalize_rows", {x}, std::move(out),
                [d, rows, norms = std::move(norms)](Graph& g, std::size_t id) {
                  float* dx = input_grad(g, id, 0);
                  if (dx == nullptr) return;
                  const auto& node = g.node(id);
                  const auto& y = node.value.data;
                  const auto& dy = node.grad;
                  for (std::size_t r = 0; r < rows; ++r) {
                    float dot = 0.0f;
                    for (std::size_t c = 0; c < d; ++c) dot += y[r * d + c] * dy[r * d + c];
                    for (std::size_t c = 0; c < d; ++c) {
                      dx[r * d + c] += (dy[r * d + c] - y[r * d + c] * dot) / norms[r];
                    }
                  }
                });
}

Var embedding_lookup(Graph& g, Var table, std::span<const std::int32_t> ids) {
  const auto& tv = g.value(table);
  require_matrix(tv, "embedding_lookup");
  require(!ids.empty(), "embedding_lookup", "no ids");
  const std::size_t vocab = tv.dims[0], d = tv.dims[1];
  std::vector<std::int32_t> idx(ids.begin(), ids.end());
  DenseTensor out({idx.size(), d}, std::vector<float>(idx.size() * d));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= vocab) {
      throw FormatError("embedding_lookup: id " + std::to_string(idx[i]) + " outside vocabulary of " +
                        std::to_string(vocab));
    }
    std::copy_n(tv.data.begin() + static_cast<std::ptrdiff_t>(idx[i] * d), d,
                out.data.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return finish(g, "embedding_lookup", {table}, std::move(out), [d, idx = std::move(idx)](Graph& g, std::size_t id) {
    float* dt = input_grad(g, id, 0);
    if (dt == nullptr) return;
    const auto& dy = g.node(id).grad;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      float* dst = dt + static_cast<std::size_t>(idx[i]) * d;
      for (std::size_t c = 0; c < d; ++c) dst[c] += dy[i * d + c];
    }
  });
}

Var mean_pool(Graph& g, Var x, std::size_t group) {
  const auto& xv = g.value(x);
  const std::size_t d = xv.cols(), rows = xv.rows();
  require(group > 0 && rows % group == 0, "mean_pool",
          std::to_string(rows) + " rows not divisible by group " + std::to_string(group));
  const std::size_t b = rows / group;
  auto out = DenseTensor::zeros({b, d});
  const float inv = 1.0f / static_cast<float>(group);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t s = 0; s < group; ++s) {
      for (std::size_t c = 0; c < d; ++c) out.data[i * d + c] += xv.data[(i * group + s) * d + c];
    }
    for (std::size_t c = 0; c < d; ++c) out.data[i * d + c] *= inv;
  }
  return finish(g, "mean_pool", {x}, std::move(out), [d, b, group, inv](Graph& g, std::size_t id) {
    float* dx = input_grad(g, id, 0);
    if (dx == nullptr) return;
    const auto& dy = g.node(id).grad;
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t s = 0; s < group; ++s) {
        for (std::size_t c = 0; c < d; ++c) dx[(i * group + s) * d + c] += dy[i * d + c] * inv;
      }
    }
  });
}

Var attention(Graph& g, Var q, Var k, Var v, std::size_t batch, std::size_t seq, std::size_t heads) {
  const auto& qv = g.value(q);
  const auto& kv = g.value(k);
  const auto& vv = g.value(v);
  require(qv.dims == kv.dims && qv.dims == vv.dims, "attention", "q/k/v shapes differ");
  require_matrix(qv, "attention");
  const std::size_t width = qv.dims[1];
  require(qv.dims[0] == batch * seq, "attention", "rows " + dims_to_string(qv.dims) + " != batch*seq");
  require(heads > 0 && width % heads == 0, "attention", "width not divisible by heads");
  const std::size_t dh = width / heads;
  const float sc = 1.0f / std::sqrt(static_cast<float>(dh));

  auto out = DenseTensor::zeros({batch * seq, width});
  // Attention probabilities per (batch, head): seq x seq each.
  std::vector<float> probs(batch * heads * seq * seq);
  std::vector<float> scores(seq);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      float* p = probs.data() + (b * heads + h) * seq * seq;
      for (std::size_t i = 0; i < seq; ++i) {
        const float* qi = qv.data.data() + (b * seq + i) * width + h * dh;
        for (std::size_t j = 0; j < seq; ++j) {
          const float* kj = kv.data.data() + (b * seq + j) * width + h * dh;
          float dot = 0.0f;
          for (std::size_t c = 0; c < dh; ++c) dot += qi[c] * kj[c];
          scores[j] = dot * sc;
        }
        softmax_row(scores.data(), p + i * seq, seq);
        float* oi = out.data.data() + (b * seq + i) * width + h * dh;
        for (std::size_t j = 0; j < seq; ++j) {
          const float pij = p[i * seq + j];
          const float* vj = vv.data.data() + (b * seq + j) * width + h * dh;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += pij * vj[c];
        }
      }
    }
  }
  return finish(
      g, "attention", {q, k, v}, std::move(out),
      [batch, seq, heads, width, dh, sc, probs = std::move(probs)](Graph& g, std::size_t id) {
        const auto& dout = g.node(id).grad;
        const auto& qv = input_value(g, id, 0).data;
        const auto& kv = input_value(g, id, 1).data;
        const auto& vv = input_value(g, id, 2).data;
        float* dq = input_grad(g, id, 0);
        float* dk = input_grad(g, id, 1);
        float* dv = input_grad(g, id, 2);
        std::vector<float> dp(seq), ds(seq);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const float* p = probs.data() + (b * heads + h) * seq * seq;
            for (std::size_t i = 0; i < seq; ++i) {
              const float* doi = dout.data() + (b * seq + i) * width + h * dh;
              for (std::size_t j = 0; j < seq; ++j) {
                const float* vj = vv.data() + (b * seq + j) * width + h * dh;
                float dot = 0.0f;
                for (std::size_t c = 0; c < dh; ++c) dot += doi[c] * vj[c];
                dp[j] = dot;
                if (dv != nullptr) {
                  float* dvj = dv + (b * seq + j) * width + h * dh;
                  const float pij = p[i * seq + j];
                  for (std::size_t c = 0; c < dh; ++c) dvj[c] += pij * doi[c];
                }
              }
              std::fill(ds.begin(), ds.end(), 0.0f);
              softmax_row_backward(p + i * seq, dp.data(), ds.data(), seq);
              const float* qi = qv.data() + (b * seq + i) * width + h * dh;
              for (std::size_t j = 0; j < seq; ++j) {
                const float s = ds[j] * sc;
                const float* kj = kv.data() + (b * seq + j) * width + h * dh;
                if (dq != nullptr) {
                  float* dqi = dq + (b * seq + i) * width + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) dqi[c] += s * kj[c];
                }
                if (dk != nullptr) {
                  float* dkj = dk + (b * seq + j) * width + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) dkj[c] += s * qi[c];
                }
              }
            }
          }
        }
      });
}

Var sum(Graph& g, Var x) {
  const auto& xv = g.value(x);
  float total = 0.0f;
  for (float v : xv.data) total += v;
  return finish(g, "sum", {x}, DenseTensor::scalar(total), [](Graph& g, std::size_t id) {
    float* dx = input_grad(g, id, 0);
    if (dx == nullptr) return;
    const float dy = g.node(id).grad[0];
    const auto n = input_value(g, id, 0).size();
    for (std::size_t i = 0; i < n; ++i) dx[i] += dy;
  });
}

Var cross_entropy_rows(Graph& g, Var logits, std::span<const std::size_t> labels) {
  const auto& lv = g.value(logits);
  check_finite(lv, "cross_entropy_rows logits");
  const std::size_t n = lv.cols(), rows = lv.rows();
  require(labels.size() == rows, "cross_entropy_rows",
          std::to_string(labels.size()) + " labels for " + std::to_string(rows) + " rows");
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  std::vector<float> probs(lv.size());
  float total = 0.0f;
  for (std::size_t r = 0; r < rows; ++r) {
    if (lab[r] >= n) {
      throw ShapeError("cross_entropy_rows: label " + std::to_string(lab[r]) + " out of range for " +
                       std::to_string(n) + " classes");
    }
    const float* row = lv.data.data() + r * n;
    float mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    float z = 0.0f;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(row[j] - mx);
    const float lse = mx + std::log(z);
    total += lse - row[lab[r]];
    for (std::size_t j = 0; j < n; ++j) probs[r * n + j] = std::exp(row[j] - lse);
  }
  const float loss = total / static_cast<float>(rows);
  return finish(g, "cross_entropy_rows", {logits}, DenseTensor::scalar(loss),
                [n, rows, lab = std::move(lab), probs = std::move(probs)](Graph& g, std::size_t id) {
                  float* dx = input_grad(g, id, 0);
                  if (dx == nullptr) return;
                  const float dy = g.node(id).grad[0] / static_cast<float>(rows);
                  for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < n; ++j) {
                      const float onehot = j == lab[r] ? 1.0f : 0.0f;
                      dx[r * n + j] += dy * (probs[r * n + j] - onehot);
                    }
                  }
                });
}

namespace {

void require_stochastic(const DenseTensor& t, std::string_view which) {
  const std::size_t n = t.cols();
  for (std::size_t r = 0; r < t.rows(); ++r) {
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const float v = t.data[r * n + j];
      if (!(v >= 0.0f)) {
        throw NumericError("kl_div_rows: " + std::string(which) + " has negative or NaN entry in row " +
                           std::to_string(r));
      }
      total += v;
    }
    if (std::abs(total - 1.0) > 1e-5) {
      throw NumericError("kl_div_rows: " + std::string(which) + " row " + std::to_string(r) + " sums to " +
                         std::to_string(total));
    }
  }
}

}  // namespace

Var kl_div_rows(Graph& g, Var p, Var q) {
  const auto& pv = g.value(p);
  const auto& qv = g.value(q);
  require(pv.dims == qv.dims, "kl_div_rows", dims_to_string(pv.dims) + " vs " + dims_to_string(qv.dims));
  require_stochastic(pv, "p");
  require_stochastic(qv, "q");
  const std::size_t rows = pv.rows();
  float total = 0.0f;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const float pi = pv.data[i];
    if (pi > 0.0f) total += pi * (std::log(pi) - std::log(std::max(qv.data[i], kKlLogFloor)));
  }
  const float loss = total / static_cast<float>(rows);
  return finish(g, "kl_div_rows", {p, q}, DenseTensor::scalar(loss), [rows](Graph& g, std::size_t id) {
    const float dy = g.node(id).grad[0] / static_cast<float>(rows);
    const auto& pv = input_value(g, id, 0).data;
    const auto& qv = input_value(g, id, 1).data;
    if (float* dp = input_grad(g, id, 0)) {
      for (std::size_t i = 0; i < pv.size(); ++i) {
        const float lp = std::log(std::max(pv[i], kKlLogFloor));
        dp[i] += dy * (lp - std::log(std::max(qv[i], kKlLogFloor)) + 1.0f);
      }
    }
    if (float* dq = input_grad(g, id, 1)) {
      for (std::size_t i = 0; i < pv.size(); ++i) {
        if (qv[i] >= kKlLogFloor) dq[i] -= dy * pv[i] / qv[i];
      }
    }
  });
}

Var mse(Graph& g, Var a, Var b) {
  const auto& av = g.value(a);
  const auto& bv = g.value(b);
  require(av.dims == bv.dims, "mse", dims_to_string(av.dims) + " vs " + dims_to_string(bv.dims));
  float total = 0.0f;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const float d = av.data[i] - bv.data[i];
    total += d * d;
  }
  const auto n = static_cast<float>(av.size());
  return finish(g, "mse", {a, b}, DenseTensor::scalar(total / n), [n](Graph& g, std::size_t id) {
    const float dy = g.node(id).grad[0];
    const auto& av = input_value(g, id, 0).data;
    const auto& bv = input_value(g, id, 1).data;
    float* da = input_grad(g, id, 0);
    float* db = input_grad(g, id, 1);
    for (std::size_t i = 0; i < av.size(); ++i) {
      const float d = 2.0f * (av[i] - bv[i]) / n * dy;
      if (da != nullptr) da[i] += d;
      if (db != nullptr) db[i] -= d;
    }
  });
}

}  // namespace ternclip
