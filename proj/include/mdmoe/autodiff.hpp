// Copyright 2026 The mdmoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Tape-based reverse-mode differentiation over a fixed op set. A Graph owns
// every intermediate produced while it is alive; Var is a handle into it.
// Nodes are appended in evaluation order, so a reverse sweep over node ids is
// a valid topological order for backward().

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mdmoe/tensor.hpp"

namespace mdmoe {

struct Var {
  std::uint32_t id = UINT32_MAX;
  bool valid() const { return id != UINT32_MAX; }
};

template <class T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, Var self)>;

  // With record=false no backward closures are kept (inference mode).
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor<T> value);
  // Gradients reaching this node are added to p.grad by backward().
  Var parameter(Parameter<T>& p);

  const Tensor<T>& value(Var v) const { return nodes_[v.id].value; }
  const Shape& shape(Var v) const { return nodes_[v.id].value.shape(); }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  bool recording() const { return record_; }
  std::size_t node_count() const { return nodes_.size(); }

  // Accumulator for v's gradient; allocated as zeros on first use.
  Tensor<T>& grad(Var v);
  bool has_grad(Var v) const { return !nodes_[v.id].grad.empty(); }

  // Seeds d(root)/d(root) = 1. root must hold a single value.
  void backward(Var root);

  // For op implementations: appends a node. `inputs` decide requires_grad;
  // `fn` is dropped when nothing upstream needs a gradient.
  Var emit(Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var emit(Tensor<T> value, std::span<const Var> inputs, BackwardFn fn);

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
    bool requires_grad = false;
  };

  bool record_;
  std::vector<Node> nodes_;
};

namespace ops {

// Matrix products on 2-D operands.
template <class T> Var matmul(Graph<T>& g, Var a, Var b);     // [m,k]x[k,n]
template <class T> Var matmul_nt(Graph<T>& g, Var a, Var b);  // [m,k]x[n,k]^T

template <class T> Var add(Graph<T>& g, Var a, Var b);
template <class T> Var mul(Graph<T>& g, Var a, Var b);
template <class T> Var scale(Graph<T>& g, Var a, T c);
template <class T> Var square(Graph<T>& g, Var a);
template <class T> Var silu(Graph<T>& g, Var a);
template <class T> Var sum(Graph<T>& g, Var a);   // -> [1]
template <class T> Var mean(Graph<T>& g, Var a);  // -> [1]

// Reductions along `axis`; softmax keeps the shape, logsumexp drops the axis.
template <class T> Var softmax(Graph<T>& g, Var x, std::size_t axis);
template <class T> Var logsumexp(Graph<T>& g, Var x, std::size_t axis);

// RMS normalization over consecutive groups of gain.size() columns, then an
// elementwise gain. Per-head normalization uses gain of the head width.
template <class T> Var rms_norm(Graph<T>& g, Var x, Var gain, T eps);

// Rotary embedding over [rows, heads*head_dim]; row r is at positions[r].
// Pairs (2j, 2j+1) rotate by positions[r] * base^(-2j/head_dim).
template <class T>
Var rope(Graph<T>& g, Var x, std::span<const std::int64_t> positions, std::size_t head_dim,
         double base);

template <class T> Var slice_cols(Graph<T>& g, Var x, std::size_t begin, std::size_t end);
template <class T> Var concat_cols(Graph<T>& g, std::span<const Var> parts);
template <class T> Var slice_rows(Graph<T>& g, Var x, std::size_t begin, std::size_t end);
template <class T> Var concat_rows(Graph<T>& g, std::span<const Var> parts);

// out[i] = x[rows[i]]
template <class T> Var gather_rows(Graph<T>& g, Var x, std::span<const std::size_t> rows);
// out = base; out[rows[i]] += src[i]
template <class T>
Var index_add_rows(Graph<T>& g, Var base, std::span<const std::size_t> rows, Var src);
// out[i] = x[rows[i], cols[i]]
template <class T>
Var gather_elements(Graph<T>& g, Var x, std::span<const std::size_t> rows,
                    std::span<const std::size_t> cols);
// out[i, :] = x[i, :] * w[i]
template <class T> Var scale_rows(Graph<T>& g, Var x, Var w);
// Column means of a 2-D tensor -> [cols].
template <class T> Var mean_rows(Graph<T>& g, Var x);
// sum_i x[i] * weights[i] with constant weights -> [1].
template <class T> Var weighted_sum(Graph<T>& g, Var x, std::span<const T> weights);

// sum_r weights[r] * -log softmax(logits[r])[targets[r]] -> [1].
// Rows with zero weight are skipped entirely.
template <class T>
Var cross_entropy(Graph<T>& g, Var logits, std::span<const std::int32_t> targets,
                  std::span<const T> weights);

}  // namespace ops

// Plain (non-differentiable) helpers shared by the ops and their tests.
template <class T> void softmax_inplace(std::span<T> row);
template <class T> T logsumexp_of(std::span<const T> row);

}  // namespace mdmoe
