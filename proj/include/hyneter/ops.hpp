#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "hyneter/tape.hpp"
#include "hyneter/tensor.hpp"

// Differentiable primitives. Every reduction accumulates in ascending index
// order over the reduced axes, so identical inputs give bit-identical outputs.
// No broadcasting except bias-style addition over leading axes.
namespace hyneter::ops {

/// Cross-correlation of [N,Cin,H,W] with weights [Cout,Cin,k,k]. Output
/// extent is (H + 2*padding - k)/stride + 1 per axis. Each output sums over
/// (ci, ky, kx) in ascending order; bias is added last.
Var conv2d(const Var& input, const Var& weights, const std::optional<Var>& bias, std::size_t stride,
           std::size_t padding);

/// [N,Din] x [Din,Dout] (+ bias [Dout]). Sum over Din ascending, bias last.
Var linear(const Var& input, const Var& weights, const std::optional<Var>& bias);

/// Batched matrix product [B,M,K] x [B,K,N] -> [B,M,N].
Var bmm(const Var& a, const Var& b);

/// Attention logits for [B,L,dh] queries/keys: q_i.k_l / sqrt(dh), with every
/// off-diagonal (i != l) logit further multiplied by `delta`. An empty delta
/// removes the scaler branch entirely.
Var scaled_scores(const Var& queries, const Var& keys, std::optional<double> delta);

/// Softmax over the trailing axis with max subtraction.
Var softmax_rows(const Var& scores);

/// Normalises the trailing axis to zero mean and unit variance, then applies
/// per-channel gain and shift.
Var layer_norm(const Var& x, const Var& gain, const Var& shift, double eps = 1e-5);

Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double factor);
Var tanh(const Var& x);
/// Exact (erf-based) GELU.
Var gelu(const Var& x);

/// x + b where b's shape equals x's trailing dimensions.
Var add_bias(const Var& x, const Var& bias);

Var reshape(const Var& x, Shape shape);

/// out[i] = x[index[i]]. Used for every layout permutation (re-view, window
/// partition, head split, dual switching). Backward scatters.
using IndexMap = std::shared_ptr<const std::vector<std::size_t>>;
Var gather(const Var& x, IndexMap index, Shape shape);

/// [N,L,C] -> [N,C], mean over L.
Var mean_tokens(const Var& x);

Var sum(const Var& x);
/// Scalar sum(x * weights) for a fixed weight tensor of x's shape.
Var weighted_sum(const Var& x, const Tensor& weights);

/// Mean softmax cross-entropy of [N,K] logits against integer labels.
Var cross_entropy(const Var& logits, std::span<const int> labels);

}  // namespace hyneter::ops
