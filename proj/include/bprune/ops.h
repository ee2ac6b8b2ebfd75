// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>

#include "bprune/tape.h"

// Differentiable ops recorded on a Tape. Every op validates shapes, checks
// that its forward output is finite, and provides an exact backward.
namespace bprune::ops {

// [m x k] . [k x n] -> [m x n]
template <typename T>
Var matmul(Tape<T>& tape, Var a, Var b);

template <typename T>
Var add(Tape<T>& tape, Var a, Var b);

// Elementwise product of equally shaped tensors.
template <typename T>
Var mul(Tape<T>& tape, Var a, Var b);

template <typename T>
Var scale(Tape<T>& tape, Var x, T factor);

template <typename T>
Var sigmoid(Tape<T>& tape, Var x);

template <typename T>
Var silu(Tape<T>& tape, Var x);

// Multiplies column j of every row by factors[j / group_width]. With
// group_width = 1 this is a per-column scaling; with group_width = d_h it
// scales whole head blocks.
template <typename T>
Var scale_groups(Tape<T>& tape, Var x, Var factors, std::size_t group_width);

// x / sqrt(mean(x^2) + eps) * weight, over the last dimension.
template <typename T>
Var rmsnorm(Tape<T>& tape, Var x, Var weight, T eps);

// Rotary position embedding over [tokens x n_heads*head_dim]: each head's
// adjacent pairs (2i, 2i+1) rotate by position * base^(-2i/head_dim).
template <typename T>
Var rope(Tape<T>& tape, Var x, std::size_t n_heads, std::span<const int> positions, double base = 10000.0);

// Causal grouped-query attention. q: [T x H*d_h], k/v: [T x H_kv*d_h].
// Query head h reads key/value head h / (H / H_kv).
template <typename T>
Var causal_attention(Tape<T>& tape, Var q, Var k, Var v, std::size_t n_heads, std::size_t n_kv_heads);

// Row gather from a [V x d] table.
template <typename T>
Var embedding(Tape<T>& tape, Var table, std::span<const int> tokens);

// Token-mean cross-entropy of [T x V] logits against targets; returns shape [1].
template <typename T>
Var softmax_ce(Tape<T>& tape, Var logits, std::span<const int> targets);

// Forward value is `hard`; the backward pass treats the output as `soft`
// (identity Jacobian), i.e. hard + (soft - stopgrad(soft)).
template <typename T>
Var straight_through(Tape<T>& tape, Tensor<T> hard, Var soft);

// Sum of x * weights (weights constant); used to probe non-scalar ops.
template <typename T>
Var weighted_sum(Tape<T>& tape, Var x, const Tensor<T>& weights);

}  // namespace bprune::ops
