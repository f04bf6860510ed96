// Copyright 2026 The dpsum Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Reverse-mode differentiation over a linear tape of dense tensor ops.
//
// Ops append nodes to a Tape in execution order, so the node index order is a
// topological order and backward simply walks it in reverse. A tape is never
// mutated by Backward, which makes it possible to run several backward passes
// with different output seeds over one forward pass (the two-pass ghost
// clipping scheme relies on this).
//
// When BackwardOptions::capture_per_example is set, every op that touches a
// trainable leaf also records what is needed to reconstruct that leaf's
// per-example gradient:
//   * affine-type uses (affine layers, embedding lookups) record the input
//     activations and output gradients, whose per-example product X_b^T Y_b is
//     the example's gradient contribution;
//   * small parameters (biases, layer-norm gains) record per-example gradients
//     directly.
// Batch-major layout is assumed everywhere: dimension 0 of an activation is
// the example index.

#ifndef DPSUM_AUTODIFF_H_
#define DPSUM_AUTODIFF_H_

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dpsum/tensor.h"

namespace dpsum {

// Per-example gradient contribution of one affine-type use of a parameter.
// For example b, the contribution in the parameter's [rows x cols] layout is
// X_b^T Y_b, where X_b and Y_b are rows [b*steps, (b+1)*steps) of `x`, `y`.
struct AffineCapture {
  std::string param;
  int64_t batch = 0;
  int64_t steps = 0;
  int64_t rows = 0;
  int64_t cols = 0;
  Tensor x;                      // [batch*steps x rows], unset when one-hot
  std::vector<int32_t> one_hot;  // column of the single 1 in each row of X
  Tensor y;                      // [batch*steps x cols]

  bool is_one_hot() const { return !one_hot.empty(); }
};

struct ExplicitCapture {
  std::string param;
  Tensor per_example;  // [batch x param size]
};

struct BackwardOptions {
  bool capture_per_example = false;
  // When false, gradients of leaves are skipped. Captures are still recorded,
  // which is all the norm pass of ghost clipping needs.
  bool accumulate_leaf_grads = true;
};

struct BackwardResult {
  GradMap grads;  // one entry per named leaf that requires grad and was reached
  std::vector<AffineCapture> affine;
  std::vector<ExplicitCapture> explicit_grads;
};

class Tape;

// Handle to a node on a tape. Cheap to copy; only valid while the tape lives.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class GradContext;

class Tape {
 public:
  using BackwardFn = std::function<void(GradContext&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Non-differentiable input.
  Var Constant(Tensor value);
  // Named differentiable input; parameters are leaves with
  // requires_grad == trainable.
  Var Leaf(std::string name, Tensor value, bool requires_grad);
  Var Param(const ParamStore& params, const std::string& name);

  // Appends an op result. `op` names the op in error messages.
  Var Record(const char* op, Tensor value, std::span<const Var> inputs,
             BackwardFn backward);

  // Backpropagates `seed` (same shape as root) from `root`.
  BackwardResult Backward(Var root, const Tensor& seed,
                          const BackwardOptions& options = {}) const;
  // Seed of all ones.
  BackwardResult Backward(Var root, const BackwardOptions& options = {}) const;

  const Tensor& value(int id) const { return nodes_[Index(id)].value; }
  bool requires_grad(int id) const { return nodes_[Index(id)].requires_grad; }
  bool is_leaf(int id) const { return nodes_[Index(id)].leaf; }
  const std::string& name(int id) const { return nodes_[Index(id)].name; }
  int size() const { return static_cast<int>(nodes_.size()); }

  // Throws UsageError unless every var belongs to this tape.
  void CheckOwned(std::span<const Var> vars) const;

 private:
  struct Node {
    Tensor value;
    std::vector<int> inputs;
    BackwardFn backward;
    std::string name;
    bool leaf = false;
    bool requires_grad = false;
  };

  static size_t Index(int id) { return static_cast<size_t>(id); }

  std::vector<Node> nodes_;
};

// Interface handed to an op's backward function.
class GradContext {
 public:
  const Tensor& grad_output() const { return *grad_output_; }
  const Tensor& value(Var v) const { return tape_.value(v.id()); }

  // True when the gradient for input `v` should be computed.
  bool wants(Var v) const;
  // Zero-initialized accumulator for the gradient of input `v`.
  Tensor& grad(Var v);

  bool capturing() const { return options_.capture_per_example; }
  // True for trainable parameters, i.e. the leaves captures are recorded for.
  bool is_trainable_leaf(Var v) const {
    return tape_.is_leaf(v.id()) && tape_.requires_grad(v.id());
  }
  const std::string& name(Var v) const { return tape_.name(v.id()); }

  void AddCapture(AffineCapture capture) {
    result_.affine.push_back(std::move(capture));
  }
  void AddExplicit(ExplicitCapture capture) {
    result_.explicit_grads.push_back(std::move(capture));
  }

 private:
  friend class Tape;
  GradContext(const Tape& tape, const BackwardOptions& options,
              std::vector<Tensor>& grads, BackwardResult& result)
      : tape_(tape), options_(options), grads_(grads), result_(result) {}

  const Tape& tape_;
  const BackwardOptions& options_;
  std::vector<Tensor>& grads_;
  BackwardResult& result_;
  const Tensor* grad_output_ = nullptr;
};

// ---------------------------------------------------------------------------
// Ops. Shapes use B for batch, T for sequence steps.

// y = x W + b with W [in x out]; x [B x ... x in].
Var Affine(Var x, Var weight, Var bias = {});
// y = x W^T + b with W stored [out x in] (LoRA factors, tied output head).
Var AffineTransposed(Var x, Var weight, Var bias = {});
// Rows of `table` [V x d] selected by ids ([B x T] flattened) -> [B x T x d].
Var EmbedLookup(Var table, std::span<const int32_t> ids, int64_t batch,
                int64_t steps);
Var Add(Var a, Var b);
Var Mul(Var a, Var b);
Var Scale(Var a, double factor);
// a [... x k] times b [k x n].
Var MatMul(Var a, Var b);
// Softmax over the last dimension.
Var Softmax(Var a);
Var LayerNorm(Var x, Var gain, Var bias, double eps = 1e-5);
// Tanh approximation.
Var Gelu(Var x);
// Multi-head scaled dot-product attention where position t attends to
// positions <= t. q, k, v: [B x T x d], d divisible by n_heads.
Var CausalAttention(Var q, Var k, Var v, int64_t n_heads);
// Mean negative log-likelihood over masked positions, per example -> [B].
// logits [B x T x V]; targets, mask [B x T]. An all-zero mask yields loss 0.
Var CrossEntropyPerExample(Var logits, std::span<const int32_t> targets,
                           std::span<const double> mask);
// Sum over everything but the batch dimension -> [B].
Var SumPerExample(Var x);

}  // namespace dpsum

#endif  // DPSUM_AUTODIFF_H_
