// Copyright 2026 The SAP Fine-Tuning Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SAP_NUMERICS_GRAPH_H_
#define SAP_NUMERICS_GRAPH_H_

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "sap/numerics/tensor.h"

namespace sap::numerics {

// Handle to a node of a BasicGraph. Only meaningful for the graph that
// created it.
struct Var {
  std::uint32_t index = 0;
};

// Tape-based reverse-mode differentiation. Nodes are appended in
// construction order, which is a topological order; backward() walks the
// tape in exact reverse. Every op checks its output for NaN/Inf.
//
// Parameters are bound by reference: backward() adds the gradient of a
// bound tensor into its grad() buffer when it requires grad, and frozen
// tensors are treated as constants (no gradient work is done for them).
template <typename Real>
class BasicGraph {
 public:
  using TensorT = BasicTensor<Real>;

  BasicGraph() = default;
  BasicGraph(const BasicGraph&) = delete;
  BasicGraph& operator=(const BasicGraph&) = delete;

  // Leaves.
  Var constant(TensorT value);
  Var parameter(Tensor& param);
  Var variable(TensorT value);

  // Dense algebra. matmul is strictly 2-D; batched_matmul works on rank-3
  // operands with a shared leading batch dimension.
  Var matmul(Var a, Var b, bool transpose_b = false);
  Var batched_matmul(Var a, Var b, bool transpose_b = false);
  Var add(Var a, Var b);
  // `bias` must equal the trailing dimensions of `x`; it is added to every
  // leading slice. This is the only broadcasting form supported.
  Var add_bias(Var x, Var bias);
  Var scale(Var x, double factor);
  Var reshape(Var x, Shape shape);

  // Elementwise nonlinearities. gelu uses the tanh approximation.
  Var gelu(Var x);
  Var tanh(Var x);

  // Numerically stable softmax along `axis` (max subtracted first).
  Var softmax(Var x, std::size_t axis);
  // Attention softmax over the last axis of scores [batch*heads, m, n].
  // `key_mask` is [batch, n] with 1 for visible keys; masked keys get
  // probability 0 and a row with no visible key is all zeros.
  Var masked_softmax(Var scores, std::span<const std::uint8_t> key_mask,
                     std::size_t heads);
  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);

  // [b, n, d] <-> [b*heads, n, d/heads].
  Var split_heads(Var x, std::size_t heads);
  Var merge_heads(Var x, std::size_t heads);

  // Row lookup producing [batch, seq, d]. Gradients are scattered to
  // `grad_ids` when given (straight-through routing), else to `ids`.
  Var embedding(Var table, std::span<const std::int32_t> ids, std::size_t batch,
                std::size_t seq, std::span<const std::int32_t> grad_ids = {});
  // x[:, position, :] -> [b, d].
  Var select_position(Var x, std::size_t position);
  // Gathers rows of a [b, n, d] tensor by flat index b*n+t -> [k, d].
  Var gather_positions(Var x, std::span<const std::size_t> flat_positions);
  // Mean over unmasked positions of [b, n, d] -> [b, d]. Rows with no
  // unmasked position produce zeros.
  Var mean_pool(Var x, std::span<const std::uint8_t> mask);
  // Keeps the first `length` positions of [b, n, d].
  Var truncate_sequence(Var x, std::size_t length);

  // Losses (scalar outputs, shape [1]).
  // Mean negative log-likelihood of `labels` under softmax(logits).
  Var cross_entropy(Var logits, std::span<const std::int32_t> labels);
  // Sum over unmasked positions of ||x - target||^2 for [b, n, d] inputs.
  Var masked_squared_error(Var x, const TensorT& target,
                           std::span<const std::uint8_t> mask);
  // sum(weights * x).
  Var weighted_sum(Var x, const TensorT& weights);

  const TensorT& value(Var v) const { return nodes_.at(v.index).value; }
  // Gradient accumulated at `v` by the last backward(); zeros if none.
  TensorT grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.index).needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(root) with ones (scalar roots) and propagates.
  void backward(Var root);
  // Seeds d(root) with an explicit upstream gradient of root's shape.
  void backward(Var root, const TensorT& seed);

 private:
  using Backward = std::function<void(BasicGraph&, std::uint32_t)>;

  struct Node {
    TensorT value;
    std::vector<Real> grad;
    bool needs_grad = false;
    Tensor* bound = nullptr;
    Backward backward;
  };

  Var push(TensorT value, bool needs_grad, Backward backward, const char* op);
  std::vector<Real>& grad_buffer(Var v);
  const Node& node(Var v) const { return nodes_.at(v.index); }

  std::vector<Node> nodes_;
};

using Graph = BasicGraph<float>;

extern template class BasicGraph<float>;
extern template class BasicGraph<double>;

// Standalone softmax cross-entropy on a logits tensor, used where the loss is
// computed by a different party than the forward pass. Returns the mean loss
// and d(loss)/d(logits) = (softmax - onehot) / batch.
struct LossAndGrad {
  double loss = 0.0;
  Tensor grad;
};
LossAndGrad cross_entropy_with_grad(const Tensor& logits,
                                    std::span<const std::int32_t> labels);

}  // namespace sap::numerics

#endif  // SAP_NUMERICS_GRAPH_H_
