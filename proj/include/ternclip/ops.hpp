#pragma once

#include <cstdint>
#include <span>

#include "ternclip/graph.hpp"

namespace ternclip {

// Differentiable ops. Every op checks shapes (ShapeError) and finiteness of
// its output (NumericError), and records a backward rule on the graph.

Var matmul(Graph& g, Var a, Var b);
/// x[n x in] * w[out x in]^T. Uses the packed add/subtract kernel when w is a
/// ternary leaf.
Var linear(Graph& g, Var x, Var w);
Var add(Graph& g, Var a, Var b);
/// x[r x d] + y[t x d] with y tiled down the rows of x (r divisible by t).
/// Covers both bias rows (t = 1) and positional tables (t = sequence length).
Var add_rows(Graph& g, Var x, Var y);
Var scale(Graph& g, Var x, float factor);
Var transpose(Graph& g, Var x);
/// tanh approximation.
Var gelu(Graph& g, Var x);
Var layer_norm(Graph& g, Var x, Var gain, Var bias, float eps = 1e-5f);
Var softmax_rows(Graph& g, Var x);
Var l2_normalize_rows(Graph& g, Var x, float eps = 1e-12f);
Var embedding_lookup(Graph& g, Var table, std::span<const std::int32_t> ids);
/// Mean over consecutive groups of `group` rows: [(b*group) x d] -> [b x d].
Var mean_pool(Graph& g, Var x, std::size_t group);
/// Multi-head scaled dot-product self-attention without masking. q, k, v are
/// [(batch*seq) x width]; heads split the width evenly.
Var attention(Graph& g, Var q, Var k, Var v, std::size_t batch, std::size_t seq, std::size_t heads);
Var sum(Graph& g, Var x);

/// Mean over rows of -log softmax(logits)[row, label].
Var cross_entropy_rows(Graph& g, Var logits, std::span<const std::size_t> labels);
/// Mean over rows of sum p * (log p - log q). 0 log 0 = 0; q is clamped below
/// at 1e-12 before the log. Rows of p and q must sum to 1 within 1e-5.
Var kl_div_rows(Graph& g, Var p, Var q);
/// sum (a - b)^2 / n over all n elements.
Var mse(Graph& g, Var a, Var b);

inline constexpr float kKlLogFloor = 1e-12f;

}  // namespace ternclip
