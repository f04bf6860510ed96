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

#include "dpsum/dp_optim.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <utility>

#include <fmt/format.h>

#include "dpsum/common.h"
#include "dpsum/rng.h"

namespace dpsum {
namespace {

struct ParamCaptures {
  std::vector<const AffineCapture*> affine;
  std::vector<const ExplicitCapture*> explicit_grads;
};

std::map<std::string, ParamCaptures> GroupCaptures(
    const BackwardResult& captures, const ParamStore& params, int64_t batch) {
  std::map<std::string, ParamCaptures> groups;
  for (const AffineCapture& cap : captures.affine) {
    auto it = params.find(cap.param);
    if (it == params.end()) {
      throw StructuralError(
          fmt::format("capture for unknown parameter '{}'", cap.param));
    }
    if (cap.batch != batch) {
      throw ShapeError(fmt::format("capture for '{}' has batch {}, expected {}",
                                   cap.param, cap.batch, batch));
    }
    if (cap.rows * cap.cols != it->second.value.size()) {
      throw ShapeError(fmt::format(
          "capture for '{}' is [{}x{}] but the parameter has shape {}",
          cap.param, cap.rows, cap.cols, ShapeString(it->second.value.shape())));
    }
    groups[cap.param].affine.push_back(&cap);
  }
  for (const ExplicitCapture& cap : captures.explicit_grads) {
    auto it = params.find(cap.param);
    if (it == params.end()) {
      throw StructuralError(
          fmt::format("capture for unknown parameter '{}'", cap.param));
    }
    if (cap.per_example.rank() != 2 || cap.per_example.dim(0) != batch ||
        cap.per_example.dim(1) != it->second.value.size()) {
      throw ShapeError(fmt::format(
          "explicit capture for '{}' has shape {}, expected [{}x{}]", cap.param,
          ShapeString(cap.per_example.shape()), batch,
          it->second.value.size()));
    }
    groups[cap.param].explicit_grads.push_back(&cap);
  }
  for (const auto& [name, p] : params) {
    if (p.trainable && !groups.contains(name)) {
      throw ConfigError(fmt::format(
          "no per-example capture for trainable parameter '{}'", name));
    }
  }
  return groups;
}

// X block of example b as a dense matrix view; only for dense captures.
ConstMatrixMap XBlock(const AffineCapture& c, int64_t b) {
  return AsMatrix(c.x, b * c.steps * c.rows, c.steps, c.rows);
}

ConstMatrixMap YBlock(const AffineCapture& c, int64_t b) {
  return AsMatrix(c.y, b * c.steps * c.cols, c.steps, c.cols);
}

int32_t OneHotAt(const AffineCapture& c, int64_t b, int64_t t) {
  return c.one_hot[static_cast<size_t>(b * c.steps + t)];
}

// <X_k X_l^T, Y_k Y_l^T>_F restricted to example b.
double CrossGram(const AffineCapture& k, const AffineCapture& l, int64_t b) {
  const RowMatrix gy = YBlock(k, b) * YBlock(l, b).transpose();
  double total = 0.0;
  if (!k.is_one_hot() && !l.is_one_hot()) {
    const RowMatrix gx = XBlock(k, b) * XBlock(l, b).transpose();
    return (gx.array() * gy.array()).sum();
  }
  if (k.is_one_hot() && l.is_one_hot()) {
    for (int64_t t = 0; t < k.steps; ++t) {
      const int32_t id = OneHotAt(k, b, t);
      for (int64_t s = 0; s < l.steps; ++s) {
        if (OneHotAt(l, b, s) == id) total += gy(t, s);
      }
    }
    return total;
  }
  if (k.is_one_hot()) {
    const ConstMatrixMap xl = XBlock(l, b);
    for (int64_t t = 0; t < k.steps; ++t) {
      const int32_t id = OneHotAt(k, b, t);
      for (int64_t s = 0; s < l.steps; ++s) total += xl(s, id) * gy(t, s);
    }
    return total;
  }
  const ConstMatrixMap xk = XBlock(k, b);
  for (int64_t s = 0; s < l.steps; ++s) {
    const int32_t id = OneHotAt(l, b, s);
    for (int64_t t = 0; t < k.steps; ++t) total += xk(t, id) * gy(t, s);
  }
  return total;
}

// Example b's gradient of one parameter, in its flattened [rows x cols]
// layout (explicit-only parameters use a single row).
RowMatrix Materialize(const ParamCaptures& group, int64_t size, int64_t b) {
  int64_t rows = 1;
  int64_t cols = size;
  if (!group.affine.empty()) {
    rows = group.affine.front()->rows;
    cols = group.affine.front()->cols;
  }
  RowMatrix g = RowMatrix::Zero(rows, cols);
  for (const AffineCapture* c : group.affine) {
    if (c->rows != rows || c->cols != cols) {
      throw ShapeError(fmt::format(
          "captures for '{}' disagree on layout: [{}x{}] vs [{}x{}]", c->param,
          rows, cols, c->rows, c->cols));
    }
    const ConstMatrixMap y = YBlock(*c, b);
    if (c->is_one_hot()) {
      for (int64_t t = 0; t < c->steps; ++t) g.row(OneHotAt(*c, b, t)) += y.row(t);
    } else {
      g.noalias() += XBlock(*c, b).transpose() * y;
    }
  }
  for (const ExplicitCapture* e : group.explicit_grads) {
    g += Eigen::Map<const RowMatrix>(e->per_example.data().data() + b * size,
                                     rows, cols);
  }
  return g;
}

int64_t BatchOf(Var losses) {
  if (!losses.valid()) throw UsageError("per-example losses are detached");
  const Tensor& v = losses.value();
  if (v.rank() != 1 || v.dim(0) < 1) {
    throw ShapeError(fmt::format("per-example losses must be [B], got {}",
                                 ShapeString(v.shape())));
  }
  return v.dim(0);
}

GradMap TrainableOnly(GradMap grads, const ParamStore& params) {
  GradMap out;
  for (auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it != params.end() && it->second.trainable) out.emplace(name, std::move(g));
  }
  CompleteGrads(params, out);
  return out;
}

void CheckGradCoverage(const ParamStore& params, const GradMap& grad) {
  for (const auto& [name, g] : grad) {
    auto it = params.find(name);
    if (it == params.end() || !it->second.trainable) {
      throw StructuralError(
          fmt::format("gradient for non-trainable or unknown parameter '{}'",
                      name));
    }
    if (g.shape() != it->second.value.shape()) {
      throw ShapeError(fmt::format("gradient for '{}' has shape {}, expected {}",
                                   name, ShapeString(g.shape()),
                                   ShapeString(it->second.value.shape())));
    }
  }
  for (const auto& [name, p] : params) {
    if (p.trainable && !grad.contains(name)) {
      throw StructuralError(
          fmt::format("missing gradient for trainable parameter '{}'", name));
    }
  }
}

void AdamImpl(ParamStore& params, const GradMap& grad, OptimState& state,
              bool decoupled) {
  CheckGradCoverage(params, grad);
  const AdamConfig& cfg = state.config;
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (const auto& [name, g] : grad) {
    Tensor& theta = params.at(name).value;
    auto [mit, m_new] = state.m.try_emplace(name, theta.shape());
    auto [vit, v_new] = state.v.try_emplace(name, theta.shape());
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    if (decoupled && cfg.weight_decay != 0.0) {
      const double shrink = 1.0 - cfg.lr * cfg.weight_decay;
      for (double& x : theta.data()) x *= shrink;
    }
    for (int64_t j = 0; j < theta.size(); ++j) {
      double gj = g[j];
      if (!decoupled && cfg.weight_decay != 0.0) gj += cfg.weight_decay * theta[j];
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      theta[j] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
    if (!theta.AllFinite()) {
      throw NumericError(fmt::format(
          "non-finite value in '{}' after optimizer step {}", name, state.t));
    }
  }
}

}  // namespace

const char* ClipModeName(ClipMode mode) {
  return mode == ClipMode::kGhost ? "ghost" : "naive";
}

ClipMode ParseClipMode(const std::string& name) {
  if (name == "ghost") return ClipMode::kGhost;
  if (name == "naive") return ClipMode::kNaive;
  throw ConfigError(
      fmt::format("unknown clipping mode '{}' (expected ghost or naive)", name));
}

void ClipConfig::Validate() const {
  if (!(clipping_norm > 0.0)) {
    throw DomainError(
        fmt::format("clipping norm must be positive, got {}", clipping_norm));
  }
  if (!(noise_multiplier >= 0.0)) {
    throw DomainError(fmt::format("noise multiplier must be >= 0, got {}",
                                  noise_multiplier));
  }
  if (batch_size < 1) {
    throw DomainError(fmt::format("batch size must be >= 1, got {}", batch_size));
  }
}

std::vector<double> PerExampleNormsNaive(std::span<const GradMap> per_example) {
  std::vector<double> norms;
  norms.reserve(per_example.size());
  for (size_t i = 0; i < per_example.size(); ++i) {
    const GradMap& g = per_example[i];
    if (i > 0) {
      const GradMap& ref = per_example[0];
      bool same = g.size() == ref.size();
      for (auto it = g.begin(), jt = ref.begin(); same && it != g.end();
           ++it, ++jt) {
        same = it->first == jt->first && it->second.shape() == jt->second.shape();
      }
      if (!same) {
        throw StructuralError(fmt::format(
            "per-example gradient {} has a different parameter set than "
            "example 0",
            i));
      }
    }
    double sq = 0.0;
    for (const auto& [name, t] : g) sq += t.SquaredNorm();
    norms.push_back(std::sqrt(sq));
  }
  return norms;
}

std::vector<double> PerExampleNormsGhost(const BackwardResult& captures,
                                         const ParamStore& params,
                                         int64_t batch) {
  const auto groups = GroupCaptures(captures, params, batch);
  std::vector<double> sq(static_cast<size_t>(batch), 0.0);
  for (const auto& [name, group] : groups) {
    const int64_t size = params.at(name).value.size();
    int64_t total_steps = 0;
    for (const AffineCapture* c : group.affine) total_steps += c->steps;
    const bool gram = group.explicit_grads.empty() &&
                      total_steps * total_steps <= size;
    for (int64_t b = 0; b < batch; ++b) {
      double s = 0.0;
      if (group.affine.empty()) {
        // Explicit-only: sum the contributions, then take the norm.
        Eigen::RowVectorXd g = Eigen::RowVectorXd::Zero(size);
        for (const ExplicitCapture* e : group.explicit_grads) {
          g += Eigen::Map<const Eigen::RowVectorXd>(
              e->per_example.data().data() + b * size, size);
        }
        s = g.squaredNorm();
      } else if (gram) {
        const auto& uses = group.affine;
        for (size_t k = 0; k < uses.size(); ++k) {
          s += CrossGram(*uses[k], *uses[k], b);
          for (size_t l = k + 1; l < uses.size(); ++l) {
            s += 2.0 * CrossGram(*uses[k], *uses[l], b);
          }
        }
        s = std::max(s, 0.0);
      } else {
        s = Materialize(group, size, b).squaredNorm();
      }
      sq[static_cast<size_t>(b)] += s;
    }
  }
  std::vector<double> norms(sq.size());
  std::transform(sq.begin(), sq.end(), norms.begin(),
                 [](double v) { return std::sqrt(v); });
  return norms;
}

std::vector<GradMap> PerExampleGradsFromCaptures(const BackwardResult& captures,
                                                 const ParamStore& params,
                                                 int64_t batch) {
  const auto groups = GroupCaptures(captures, params, batch);
  std::vector<GradMap> out(static_cast<size_t>(batch));
  for (const auto& [name, group] : groups) {
    const Tensor& value = params.at(name).value;
    for (int64_t b = 0; b < batch; ++b) {
      RowMatrix g = Materialize(group, value.size(), b);
      Tensor t(value.shape());
      std::copy_n(g.data(), value.size(), t.data().data());
      out[static_cast<size_t>(b)].emplace(name, std::move(t));
    }
  }
  return out;
}

std::vector<GradMap> PerExampleGradsByBackprop(const Tape& tape, Var losses,
                                               const ParamStore& params) {
  const int64_t batch = BatchOf(losses);
  std::vector<GradMap> out;
  out.reserve(static_cast<size_t>(batch));
  for (int64_t b = 0; b < batch; ++b) {
    Tensor seed({batch});
    seed[b] = 1.0;
    out.push_back(TrainableOnly(tape.Backward(losses, seed).grads, params));
  }
  return out;
}

std::vector<double> ClipFactors(std::span<const double> norms,
                                double clipping_norm) {
  std::vector<double> factors;
  factors.reserve(norms.size());
  for (double n : norms) {
    if (!(n >= 0.0)) {
      throw DomainError(fmt::format("per-example norm must be >= 0, got {}", n));
    }
    factors.push_back(n <= clipping_norm ? 1.0 : clipping_norm / n);
  }
  return factors;
}

GradMap ClippedSum(std::span<const GradMap> per_example,
                   std::span<const double> factors) {
  if (per_example.size() != factors.size()) {
    throw ShapeError(fmt::format("{} per-example gradients but {} clip factors",
                                 per_example.size(), factors.size()));
  }
  GradMap sum;
  for (size_t i = 0; i < per_example.size(); ++i) {
    for (const auto& [name, g] : per_example[i]) {
      auto [it, inserted] = sum.try_emplace(name, g.shape());
      if (it->second.shape() != g.shape()) {
        throw StructuralError(
            fmt::format("per-example gradients disagree on '{}'", name));
      }
      it->second.AddInPlace(g, factors[i]);
    }
  }
  return sum;
}

GradMap ZeroGrads(const ParamStore& params) {
  GradMap out;
  for (const auto& [name, p] : params) {
    if (p.trainable) out.emplace(name, Tensor(p.value.shape()));
  }
  return out;
}

void CompleteGrads(const ParamStore& params, GradMap& grads) {
  for (const auto& [name, p] : params) {
    if (p.trainable) grads.try_emplace(name, p.value.shape());
  }
}

GradMap Privatize(const GradMap& clipped_sum, const ClipConfig& config,
                  uint64_t seed, int64_t step) {
  config.Validate();
  const double stddev = config.noise_multiplier * config.clipping_norm;
  const double divisor = static_cast<double>(config.batch_size);
  GradMap out;
  for (const auto& [name, sum] : clipped_sum) {
    Tensor t = sum;
    if (stddev > 0.0) {
      CounterRng rng(CounterRng::DeriveKey(
          seed, {static_cast<uint64_t>(step), Fnv1a64(name)}));
      for (int64_t j = 0; j < t.size(); ++j) {
        t[j] += stddev * rng.GaussianAt(static_cast<uint64_t>(j));
      }
    }
    for (double& x : t.data()) x /= divisor;
    out.emplace(name, std::move(t));
  }
  return out;
}

PrivateGradient ComputePrivateGradient(const Tape& tape, Var losses,
                                       const ParamStore& params,
                                       const ClipConfig& config, uint64_t seed,
                                       int64_t step) {
  const int64_t batch = BatchOf(losses);
  ClipConfig cfg = config;
  cfg.batch_size = batch;
  cfg.Validate();
  PrivateGradient out;
  GradMap clipped;
  if (cfg.mode == ClipMode::kGhost) {
    BackwardOptions norm_pass;
    norm_pass.capture_per_example = true;
    norm_pass.accumulate_leaf_grads = false;
    BackwardResult captured = tape.Backward(losses, Tensor({batch}, 1.0), norm_pass);
    out.norms = PerExampleNormsGhost(captured, params, batch);
    captured = BackwardResult();
    out.factors = ClipFactors(out.norms, cfg.clipping_norm);
    Tensor reweight({batch}, std::vector<double>(out.factors));
    clipped = TrainableOnly(tape.Backward(losses, reweight).grads, params);
  } else {
    std::vector<GradMap> per_example =
        PerExampleGradsByBackprop(tape, losses, params);
    out.norms = PerExampleNormsNaive(per_example);
    out.factors = ClipFactors(out.norms, cfg.clipping_norm);
    clipped = ClippedSum(per_example, out.factors);
    CompleteGrads(params, clipped);
  }
  out.grad = Privatize(clipped, cfg, seed, step);
  return out;
}

void DpAdamStep(ParamStore& params, const GradMap& grad, OptimState& state) {
  AdamImpl(params, grad, state, /*decoupled=*/false);
}

void AdamWStep(ParamStore& params, const GradMap& grad, OptimState& state) {
  AdamImpl(params, grad, state, /*decoupled=*/true);
}

}  // namespace dpsum
