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

#include "dpsum/autodiff.h"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "dpsum/common.h"

namespace dpsum {

const Tensor& Var::value() const {
  if (!valid()) throw UsageError("access to a detached tensor");
  return tape_->value(id_);
}

Var Tape::Constant(Tensor value) {
  if (!value.AllFinite()) throw NumericError("non-finite constant");
  nodes_.push_back(Node{std::move(value), {}, nullptr, "", true, false});
  return Var(this, size() - 1);
}

Var Tape::Leaf(std::string name, Tensor value, bool requires_grad) {
  if (!value.AllFinite()) {
    throw NumericError(fmt::format("non-finite values in leaf '{}'", name));
  }
  nodes_.push_back(
      Node{std::move(value), {}, nullptr, std::move(name), true, requires_grad});
  return Var(this, size() - 1);
}

Var Tape::Param(const ParamStore& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) {
    throw StructuralError(fmt::format("unknown parameter '{}'", name));
  }
  return Leaf(name, it->second.value, it->second.trainable);
}

void Tape::CheckOwned(std::span<const Var> vars) const {
  for (const Var& v : vars) {
    if (v.tape() != this) {
      throw UsageError("tensor does not belong to this tape");
    }
  }
}

Var Tape::Record(const char* op, Tensor value, std::span<const Var> inputs,
                 BackwardFn backward) {
  CheckOwned(inputs);
  if (!value.AllFinite()) {
    throw NumericError(fmt::format("{} produced non-finite values", op));
  }
  Node node;
  node.value = std::move(value);
  node.backward = std::move(backward);
  for (const Var& v : inputs) {
    node.inputs.push_back(v.id());
    node.requires_grad = node.requires_grad || requires_grad(v.id());
  }
  nodes_.push_back(std::move(node));
  return Var(this, size() - 1);
}

BackwardResult Tape::Backward(Var root, const BackwardOptions& options) const {
  if (!root.valid() || root.tape() != this) {
    throw UsageError("backward on a detached tensor");
  }
  return Backward(root, Tensor(value(root.id()).shape(), 1.0), options);
}

BackwardResult Tape::Backward(Var root, const Tensor& seed,
                              const BackwardOptions& options) const {
  if (!root.valid() || root.tape() != this) {
    throw UsageError("backward on a detached tensor");
  }
  if (seed.shape() != value(root.id()).shape()) {
    throw ShapeError(fmt::format("seed shape {} does not match root shape {}",
                                 ShapeString(seed.shape()),
                                 ShapeString(value(root.id()).shape())));
  }
  BackwardResult result;
  std::vector<Tensor> grads(nodes_.size());
  grads[Index(root.id())] = seed;
  GradContext ctx(*this, options, grads, result);
  for (int id = root.id(); id >= 0; --id) {
    const Node& node = nodes_[Index(id)];
    Tensor& g = grads[Index(id)];
    if (g.empty() || !node.requires_grad) continue;
    if (node.leaf) {
      if (!node.name.empty()) {
        auto [it, inserted] = result.grads.try_emplace(node.name, g);
        if (!inserted) it->second.AddInPlace(g);
      }
      continue;
    }
    ctx.grad_output_ = &g;
    node.backward(ctx);
    // Interior gradients are dead once consumed.
    g = Tensor();
  }
  return result;
}

bool GradContext::wants(Var v) const {
  if (!v.valid() || !tape_.requires_grad(v.id())) return false;
  return !tape_.is_leaf(v.id()) || options_.accumulate_leaf_grads;
}

Tensor& GradContext::grad(Var v) {
  Tensor& g = grads_[static_cast<size_t>(v.id())];
  if (g.empty()) g = Tensor(tape_.value(v.id()).shape());
  return g;
}

namespace {

void RequireSameShape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(fmt::format("{}: shape mismatch {} vs {}", op,
                                 ShapeString(a.shape()),
                                 ShapeString(b.shape())));
  }
}

Tape* TapeOf(const char* op, std::initializer_list<Var> vars) {
  Tape* tape = nullptr;
  for (const Var& v : vars) {
    if (!v.valid()) continue;
    if (tape == nullptr) tape = v.tape();
    if (v.tape() != tape) {
      throw UsageError(fmt::format("{}: inputs live on different tapes", op));
    }
  }
  if (tape == nullptr) throw UsageError(fmt::format("{}: detached input", op));
  return tape;
}

// Sum of the rows of `g` belonging to each example: [B*T x n] -> [B x n].
Tensor PerExampleRowSum(const Tensor& g, int64_t batch) {
  const int64_t n = g.cols();
  const int64_t steps = g.rows() / batch;
  Tensor out({batch, n});
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t t = 0; t < steps; ++t) {
      const double* row = g.data().data() + (b * steps + t) * n;
      for (int64_t j = 0; j < n; ++j) out[b * n + j] += row[j];
    }
  }
  return out;
}

Var AffineImpl(const char* op, Var x, Var weight, Var bias, bool transposed) {
  Tape* tape = TapeOf(op, {x, weight, bias});
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  if (xv.rank() < 2 || wv.rank() != 2) {
    throw ShapeError(fmt::format("{}: expected x [B x ... x in] and a 2-D "
                                 "weight, got {} and {}",
                                 op, ShapeString(xv.shape()),
                                 ShapeString(wv.shape())));
  }
  const int64_t in = transposed ? wv.dim(1) : wv.dim(0);
  const int64_t out = transposed ? wv.dim(0) : wv.dim(1);
  if (xv.cols() != in) {
    throw ShapeError(fmt::format("{}: input {} incompatible with weight {}", op,
                                 ShapeString(xv.shape()),
                                 ShapeString(wv.shape())));
  }
  if (bias.valid() && bias.value().shape() != Shape{out}) {
    throw ShapeError(fmt::format("{}: bias {} incompatible with weight {}", op,
                                 ShapeString(bias.value().shape()),
                                 ShapeString(wv.shape())));
  }
  Shape out_shape = xv.shape();
  out_shape.back() = out;
  Tensor y(out_shape);
  if (transposed) {
    AsMatrix(y).noalias() = AsMatrix(xv) * AsMatrix(wv).transpose();
  } else {
    AsMatrix(y).noalias() = AsMatrix(xv) * AsMatrix(wv);
  }
  if (bias.valid()) {
    const Tensor& bv = bias.value();
    AsMatrix(y).rowwise() +=
        Eigen::Map<const Eigen::RowVectorXd>(bv.data().data(), out);
  }
  const int64_t batch = xv.dim(0);
  std::vector<Var> inputs{x, weight};
  if (bias.valid()) inputs.push_back(bias);
  return tape->Record(
      op, std::move(y), inputs,
      [x, weight, bias, transposed, batch, in, out](GradContext& ctx) {
        const Tensor& dy = ctx.grad_output();
        const Tensor& xv = ctx.value(x);
        const Tensor& wv = ctx.value(weight);
        if (ctx.wants(x)) {
          if (transposed) {
            AsMatrix(ctx.grad(x)).noalias() += AsMatrix(dy) * AsMatrix(wv);
          } else {
            AsMatrix(ctx.grad(x)).noalias() +=
                AsMatrix(dy) * AsMatrix(wv).transpose();
          }
        }
        if (ctx.wants(weight)) {
          if (transposed) {
            AsMatrix(ctx.grad(weight)).noalias() +=
                AsMatrix(dy).transpose() * AsMatrix(xv);
          } else {
            AsMatrix(ctx.grad(weight)).noalias() +=
                AsMatrix(xv).transpose() * AsMatrix(dy);
          }
        }
        if (bias.valid() && ctx.wants(bias)) {
          AsMatrix(ctx.grad(bias)) += AsMatrix(dy).colwise().sum();
        }
        if (!ctx.capturing()) return;
        const int64_t steps = xv.rows() / batch;
        if (ctx.is_trainable_leaf(weight)) {
          AffineCapture cap;
          cap.param = ctx.name(weight);
          cap.batch = batch;
          cap.steps = steps;
          const Tensor x2 = xv.Reshaped({xv.rows(), in});
          const Tensor dy2 = dy.Reshaped({dy.rows(), out});
          if (transposed) {
            cap.rows = out;
            cap.cols = in;
            cap.x = dy2;
            cap.y = x2;
          } else {
            cap.rows = in;
            cap.cols = out;
            cap.x = x2;
            cap.y = dy2;
          }
          ctx.AddCapture(std::move(cap));
        }
        if (bias.valid() && ctx.is_trainable_leaf(bias)) {
          ctx.AddExplicit({ctx.name(bias), PerExampleRowSum(dy, batch)});
        }
      });
}

}  // namespace

Var Affine(Var x, Var weight, Var bias) {
  return AffineImpl("affine", x, weight, bias, false);
}

Var AffineTransposed(Var x, Var weight, Var bias) {
  return AffineImpl("affine_transposed", x, weight, bias, true);
}

Var EmbedLookup(Var table, std::span<const int32_t> ids, int64_t batch,
                int64_t steps) {
  Tape* tape = TapeOf("embed_lookup", {table});
  const Tensor& tv = table.value();
  if (tv.rank() != 2) {
    throw ShapeError(fmt::format("embed_lookup: table must be 2-D, got {}",
                                 ShapeString(tv.shape())));
  }
  if (static_cast<int64_t>(ids.size()) != batch * steps) {
    throw ShapeError(fmt::format(
        "embed_lookup: {} ids for a [{}x{}] batch", ids.size(), batch, steps));
  }
  const int64_t vocab = tv.dim(0);
  const int64_t d = tv.dim(1);
  Tensor y({batch, steps, d});
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= vocab) {
      throw IndexError(fmt::format("embed_lookup: index {} outside [0, {})",
                                   ids[i], vocab));
    }
    std::copy_n(tv.data().data() + ids[i] * d, d,
                y.data().data() + static_cast<int64_t>(i) * d);
  }
  std::vector<int32_t> saved(ids.begin(), ids.end());
  Var inputs[] = {table};
  return tape->Record(
      "embed_lookup", std::move(y), inputs,
      [table, saved = std::move(saved), batch, steps, vocab, d](
          GradContext& ctx) {
        const Tensor& dy = ctx.grad_output();
        if (ctx.wants(table)) {
          Tensor& g = ctx.grad(table);
          for (size_t i = 0; i < saved.size(); ++i) {
            double* row = g.data().data() + saved[i] * d;
            const double* src = dy.data().data() + static_cast<int64_t>(i) * d;
            for (int64_t j = 0; j < d; ++j) row[j] += src[j];
          }
        }
        if (ctx.capturing() && ctx.is_trainable_leaf(table)) {
          AffineCapture cap;
          cap.param = ctx.name(table);
          cap.batch = batch;
          cap.steps = steps;
          cap.rows = vocab;
          cap.cols = d;
          cap.one_hot = saved;
          cap.y = dy.Reshaped({batch * steps, d});
          ctx.AddCapture(std::move(cap));
        }
      });
}

Var Add(Var a, Var b) {
  Tape* tape = TapeOf("add", {a, b});
  RequireSameShape("add", a, b);
  Tensor y = a.value();
  y.AddInPlace(b.value());
  Var inputs[] = {a, b};
  return tape->Record("add", std::move(y), inputs, [a, b](GradContext& ctx) {
    if (ctx.wants(a)) ctx.grad(a).AddInPlace(ctx.grad_output());
    if (ctx.wants(b)) ctx.grad(b).AddInPlace(ctx.grad_output());
  });
}

Var Mul(Var a, Var b) {
  Tape* tape = TapeOf("mul", {a, b});
  RequireSameShape("mul", a, b);
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (int64_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  Var inputs[] = {a, b};
  return tape->Record("mul", std::move(y), inputs, [a, b](GradContext& ctx) {
    const Tensor& dy = ctx.grad_output();
    if (ctx.wants(a)) {
      Tensor& g = ctx.grad(a);
      const Tensor& bv = ctx.value(b);
      for (int64_t i = 0; i < g.size(); ++i) g[i] += dy[i] * bv[i];
    }
    if (ctx.wants(b)) {
      Tensor& g = ctx.grad(b);
      const Tensor& av = ctx.value(a);
      for (int64_t i = 0; i < g.size(); ++i) g[i] += dy[i] * av[i];
    }
  });
}

Var Scale(Var a, double factor) {
  Tape* tape = TapeOf("scale", {a});
  Tensor y = a.value();
  y.ScaleInPlace(factor);
  Var inputs[] = {a};
  return tape->Record("scale", std::move(y), inputs,
                      [a, factor](GradContext& ctx) {
                        if (ctx.wants(a)) {
                          ctx.grad(a).AddInPlace(ctx.grad_output(), factor);
                        }
                      });
}

Var MatMul(Var a, Var b) {
  Tape* tape = TapeOf("matmul", {a, b});
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() < 1 || bv.rank() != 2 || av.cols() != bv.dim(0)) {
    throw ShapeError(fmt::format("matmul: cannot multiply {} by {}",
                                 ShapeString(av.shape()),
                                 ShapeString(bv.shape())));
  }
  Shape out_shape = av.shape();
  out_shape.back() = bv.dim(1);
  Tensor y(out_shape);
  AsMatrix(y).noalias() = AsMatrix(av) * AsMatrix(bv);
  Var inputs[] = {a, b};
  return tape->Record("matmul", std::move(y), inputs, [a, b](GradContext& ctx) {
    const Tensor& dy = ctx.grad_output();
    if (ctx.wants(a)) {
      AsMatrix(ctx.grad(a)).noalias() +=
          AsMatrix(dy) * AsMatrix(ctx.value(b)).transpose();
    }
    if (ctx.wants(b)) {
      AsMatrix(ctx.grad(b)).noalias() +=
          AsMatrix(ctx.value(a)).transpose() * AsMatrix(dy);
    }
  });
}

Var Softmax(Var a) {
  Tape* tape = TapeOf("softmax", {a});
  Tensor y = a.value();
  const int64_t n = y.cols();
  for (int64_t r = 0; r < y.rows(); ++r) {
    double* row = y.data().data() + r * n;
    const double mx = *std::max_element(row, row + n);
    double s = 0.0;
    for (int64_t j = 0; j < n; ++j) s += (row[j] = std::exp(row[j] - mx));
    for (int64_t j = 0; j < n; ++j) row[j] /= s;
  }
  Var inputs[] = {a};
  Tensor saved = y;
  return tape->Record(
      "softmax", std::move(y), inputs,
      [a, saved = std::move(saved), n](GradContext& ctx) {
        if (!ctx.wants(a)) return;
        const Tensor& dy = ctx.grad_output();
        Tensor& g = ctx.grad(a);
        for (int64_t r = 0; r < saved.rows(); ++r) {
          const double* p = saved.data().data() + r * n;
          const double* d = dy.data().data() + r * n;
          double dot = 0.0;
          for (int64_t j = 0; j < n; ++j) dot += p[j] * d[j];
          for (int64_t j = 0; j < n; ++j) g[r * n + j] += p[j] * (d[j] - dot);
        }
      });
}

Var LayerNorm(Var x, Var gain, Var bias, double eps) {
  Tape* tape = TapeOf("layer_norm", {x, gain, bias});
  const Tensor& xv = x.value();
  const int64_t n = xv.cols();
  if (gain.value().shape() != Shape{n} || bias.value().shape() != Shape{n}) {
    throw ShapeError(fmt::format("layer_norm: gain {} / bias {} for input {}",
                                 ShapeString(gain.value().shape()),
                                 ShapeString(bias.value().shape()),
                                 ShapeString(xv.shape())));
  }
  const int64_t rows = xv.rows();
  Tensor xhat(xv.shape());
  std::vector<double> inv_std(static_cast<size_t>(rows));
  Tensor y(xv.shape());
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  for (int64_t r = 0; r < rows; ++r) {
    const double* in = xv.data().data() + r * n;
    double mean = 0.0;
    for (int64_t j = 0; j < n; ++j) mean += in[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t j = 0; j < n; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= static_cast<double>(n);
    const double rs = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(r)] = rs;
    for (int64_t j = 0; j < n; ++j) {
      const double h = (in[j] - mean) * rs;
      xhat[r * n + j] = h;
      y[r * n + j] = h * gv[j] + bv[j];
    }
  }
  const int64_t batch = xv.rank() >= 2 ? xv.dim(0) : 1;
  Var inputs[] = {x, gain, bias};
  return tape->Record(
      "layer_norm", std::move(y), inputs,
      [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std), n,
       rows, batch](GradContext& ctx) {
        const Tensor& dy = ctx.grad_output();
        const Tensor& gv = ctx.value(gain);
        if (ctx.wants(x)) {
          Tensor& gx = ctx.grad(x);
          for (int64_t r = 0; r < rows; ++r) {
            const double* d = dy.data().data() + r * n;
            const double* h = xhat.data().data() + r * n;
            double mean_dh = 0.0;
            double mean_dh_h = 0.0;
            for (int64_t j = 0; j < n; ++j) {
              const double dh = d[j] * gv[j];
              mean_dh += dh;
              mean_dh_h += dh * h[j];
            }
            mean_dh /= static_cast<double>(n);
            mean_dh_h /= static_cast<double>(n);
            const double rs = inv_std[static_cast<size_t>(r)];
            for (int64_t j = 0; j < n; ++j) {
              gx[r * n + j] += rs * (d[j] * gv[j] - mean_dh - h[j] * mean_dh_h);
            }
          }
        }
        const bool cap_gain = ctx.capturing() && ctx.is_trainable_leaf(gain);
        const bool cap_bias = ctx.capturing() && ctx.is_trainable_leaf(bias);
        if (!ctx.wants(gain) && !ctx.wants(bias) && !cap_gain && !cap_bias) {
          return;
        }
        // Per-example sums; the aggregated gradient is their total.
        Tensor pg({batch, n});
        Tensor pb({batch, n});
        const int64_t steps = rows / batch;
        for (int64_t r = 0; r < rows; ++r) {
          const int64_t b = r / steps;
          const double* d = dy.data().data() + r * n;
          const double* h = xhat.data().data() + r * n;
          for (int64_t j = 0; j < n; ++j) {
            pg[b * n + j] += d[j] * h[j];
            pb[b * n + j] += d[j];
          }
        }
        if (ctx.wants(gain)) {
          AsMatrix(ctx.grad(gain)) += AsMatrix(pg).colwise().sum();
        }
        if (ctx.wants(bias)) {
          AsMatrix(ctx.grad(bias)) += AsMatrix(pb).colwise().sum();
        }
        if (cap_gain) ctx.AddExplicit({ctx.name(gain), std::move(pg)});
        if (cap_bias) ctx.AddExplicit({ctx.name(bias), std::move(pb)});
      });
}

Var Gelu(Var x) {
  Tape* tape = TapeOf("gelu", {x});
  constexpr double kC = 0.7978845608028654;  // sqrt(2 / pi)
  constexpr double kA = 0.044715;
  Tensor y = x.value();
  for (double& v : y.data()) {
    const double u = kC * (v + kA * v * v * v);
    v = 0.5 * v * (1.0 + std::tanh(u));
  }
  Var inputs[] = {x};
  return tape->Record("gelu", std::move(y), inputs, [x](GradContext& ctx) {
    if (!ctx.wants(x)) return;
    const Tensor& xv = ctx.value(x);
    const Tensor& dy = ctx.grad_output();
    Tensor& g = ctx.grad(x);
    for (int64_t i = 0; i < xv.size(); ++i) {
      const double v = xv[i];
      const double th = std::tanh(kC * (v + kA * v * v * v));
      const double du = kC * (1.0 + 3.0 * kA * v * v);
      g[i] += dy[i] * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du);
    }
  });
}

Var CausalAttention(Var q, Var k, Var v, int64_t n_heads) {
  Tape* tape = TapeOf("causal_attention", {q, k, v});
  RequireSameShape("causal_attention", q, k);
  RequireSameShape("causal_attention", q, v);
  const Tensor& qv = q.value();
  if (qv.rank() != 3 || n_heads <= 0 || qv.dim(2) % n_heads != 0) {
    throw ShapeError(fmt::format(
        "causal_attention: need [B x T x d] with d divisible by {}, got {}",
        n_heads, ShapeString(qv.shape())));
  }
  const int64_t batch = qv.dim(0);
  const int64_t steps = qv.dim(1);
  const int64_t d = qv.dim(2);
  const int64_t dh = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  using Strided = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;
  using StridedMut = Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>>;
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  Tensor y(qv.shape());
  // probs: [B x H x T x T], zero above the diagonal.
  Tensor probs({batch, n_heads, steps, steps});
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t h = 0; h < n_heads; ++h) {
      const int64_t off = b * steps * d + h * dh;
      Strided qh(qv.data().data() + off, steps, dh, Eigen::OuterStride<>(d));
      Strided kh(kv.data().data() + off, steps, dh, Eigen::OuterStride<>(d));
      Strided vh(vv.data().data() + off, steps, dh, Eigen::OuterStride<>(d));
      MatrixMap p = AsMatrix(probs, (b * n_heads + h) * steps * steps, steps,
                             steps);
      p.noalias() = (qh * kh.transpose()) * scale;
      for (int64_t i = 0; i < steps; ++i) {
        double mx = p(i, 0);
        for (int64_t j = 1; j <= i; ++j) mx = std::max(mx, p(i, j));
        double s = 0.0;
        for (int64_t j = 0; j <= i; ++j) s += (p(i, j) = std::exp(p(i, j) - mx));
        for (int64_t j = 0; j <= i; ++j) p(i, j) /= s;
        for (int64_t j = i + 1; j < steps; ++j) p(i, j) = 0.0;
      }
      StridedMut yh(y.data().data() + off, steps, dh, Eigen::OuterStride<>(d));
      yh.noalias() = p * vh;
    }
  }
  Var inputs[] = {q, k, v};
  return tape->Record(
      "causal_attention", std::move(y), inputs,
      [q, k, v, probs = std::move(probs), batch, steps, d, dh, n_heads,
       scale](GradContext& ctx) {
        const Tensor& dy = ctx.grad_output();
        const Tensor& qv = ctx.value(q);
        const Tensor& kv = ctx.value(k);
        const Tensor& vv = ctx.value(v);
        const bool wq = ctx.wants(q);
        const bool wk = ctx.wants(k);
        const bool wv = ctx.wants(v);
        if (!wq && !wk && !wv) return;
        Tensor* gq = wq ? &ctx.grad(q) : nullptr;
        Tensor* gk = wk ? &ctx.grad(k) : nullptr;
        Tensor* gv = wv ? &ctx.grad(v) : nullptr;
        RowMatrix dp(steps, steps);
        for (int64_t b = 0; b < batch; ++b) {
          for (int64_t h = 0; h < n_heads; ++h) {
            const int64_t off = b * steps * d + h * dh;
            const Eigen::OuterStride<> stride(d);
            Strided qh(qv.data().data() + off, steps, dh, stride);
            Strided kh(kv.data().data() + off, steps, dh, stride);
            Strided vh(vv.data().data() + off, steps, dh, stride);
            Strided dyh(dy.data().data() + off, steps, dh, stride);
            ConstMatrixMap p = AsMatrix(
                probs, (b * n_heads + h) * steps * steps, steps, steps);
            if (wv) {
              StridedMut gvh(gv->data().data() + off, steps, dh, stride);
              gvh.noalias() += p.transpose() * dyh;
            }
            if (!wq && !wk) continue;
            dp.noalias() = dyh * vh.transpose();
            // dS = P * (dP - rowsum(dP * P)); zero where P is masked.
            for (int64_t i = 0; i < steps; ++i) {
              double dot = 0.0;
              for (int64_t j = 0; j <= i; ++j) dot += dp(i, j) * p(i, j);
              for (int64_t j = 0; j <= i; ++j) {
                dp(i, j) = p(i, j) * (dp(i, j) - dot) * scale;
              }
              for (int64_t j = i + 1; j < steps; ++j) dp(i, j) = 0.0;
            }
            if (wq) {
              StridedMut gqh(gq->data().data() + off, steps, dh, stride);
              gqh.noalias() += dp * kh;
            }
            if (wk) {
              StridedMut gkh(gk->data().data() + off, steps, dh, stride);
              gkh.noalias() += dp.transpose() * qh;
            }
          }
        }
      });
}

Var CrossEntropyPerExample(Var logits, std::span<const int32_t> targets,
                           std::span<const double> mask) {
  Tape* tape = TapeOf("cross_entropy", {logits});
  const Tensor& lv = logits.value();
  if (lv.rank() != 3) {
    throw ShapeError(fmt::format("cross_entropy: logits must be [B x T x V], "
                                 "got {}",
                                 ShapeString(lv.shape())));
  }
  const int64_t batch = lv.dim(0);
  const int64_t steps = lv.dim(1);
  const int64_t vocab = lv.dim(2);
  if (static_cast<int64_t>(targets.size()) != batch * steps ||
      static_cast<int64_t>(mask.size()) != batch * steps) {
    throw ShapeError(fmt::format(
        "cross_entropy: {} targets / {} mask entries for logits {}",
        targets.size(), mask.size(), ShapeString(lv.shape())));
  }
  std::vector<double> counts(static_cast<size_t>(batch), 0.0);
  for (int64_t i = 0; i < batch * steps; ++i) {
    const double m = mask[static_cast<size_t>(i)];
    if (m != 0.0 && m != 1.0) {
      throw DomainError(fmt::format("cross_entropy: mask value {} not in {{0, 1}}", m));
    }
    const int32_t t = targets[static_cast<size_t>(i)];
    if (t < 0 || t >= vocab) {
      throw IndexError(
          fmt::format("cross_entropy: target {} outside [0, {})", t, vocab));
    }
    counts[static_cast<size_t>(i / steps)] += m;
  }
  Tensor loss({batch});
  for (int64_t r = 0; r < batch * steps; ++r) {
    if (mask[static_cast<size_t>(r)] == 0.0) continue;
    const double* row = lv.data().data() + r * vocab;
    const double mx = *std::max_element(row, row + vocab);
    double s = 0.0;
    for (int64_t j = 0; j < vocab; ++j) s += std::exp(row[j] - mx);
    const double nll = mx + std::log(s) - row[targets[static_cast<size_t>(r)]];
    const int64_t b = r / steps;
    loss[b] += nll / counts[static_cast<size_t>(b)];
  }
  std::vector<int32_t> saved_targets(targets.begin(), targets.end());
  std::vector<double> saved_mask(mask.begin(), mask.end());
  Var inputs[] = {logits};
  return tape->Record(
      "cross_entropy", std::move(loss), inputs,
      [logits, saved_targets = std::move(saved_targets),
       saved_mask = std::move(saved_mask), counts = std::move(counts), steps,
       vocab](GradContext& ctx) {
        if (!ctx.wants(logits)) return;
        const Tensor& dl = ctx.grad_output();
        const Tensor& lv = ctx.value(logits);
        Tensor& g = ctx.grad(logits);
        const int64_t rows = static_cast<int64_t>(saved_mask.size());
        for (int64_t r = 0; r < rows; ++r) {
          if (saved_mask[static_cast<size_t>(r)] == 0.0) continue;
          const int64_t b = r / steps;
          const double w = dl[b] / counts[static_cast<size_t>(b)];
          const double* row = lv.data().data() + r * vocab;
          double* out = g.data().data() + r * vocab;
          const double mx = *std::max_element(row, row + vocab);
          double s = 0.0;
          for (int64_t j = 0; j < vocab; ++j) s += std::exp(row[j] - mx);
          for (int64_t j = 0; j < vocab; ++j) {
            out[j] += w * std::exp(row[j] - mx) / s;
          }
          out[saved_targets[static_cast<size_t>(r)]] -= w;
        }
      });
}

Var SumPerExample(Var x) {
  Tape* tape = TapeOf("sum_per_example", {x});
  const Tensor& xv = x.value();
  if (xv.rank() < 1) throw ShapeError("sum_per_example: scalar input");
  const int64_t batch = xv.dim(0);
  const int64_t per = xv.size() / batch;
  Tensor y({batch});
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t i = 0; i < per; ++i) y[b] += xv[b * per + i];
  }
  Var inputs[] = {x};
  return tape->Record("sum_per_example", std::move(y), inputs,
                      [x, per](GradContext& ctx) {
                        if (!ctx.wants(x)) return;
                        const Tensor& dy = ctx.grad_output();
                        Tensor& g = ctx.grad(x);
                        for (int64_t i = 0; i < g.size(); ++i) {
                          g[i] += dy[i / per];
                        }
                      });
}

}  // namespace dpsum
