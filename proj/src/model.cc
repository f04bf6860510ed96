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

#include "dpsum/model.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <utility>

#include <fmt/format.h>

#include "dpsum/common.h"
#include "dpsum/rng.h"

namespace dpsum {
namespace {

using json = nlohmann::ordered_json;

constexpr double kInitStd = 0.02;
constexpr double kLayerNormEps = 1e-5;
constexpr char kMagic[] = "DPSUMCK1";
constexpr size_t kMagicSize = 8;

std::string LayerPrefix(int64_t l) { return fmt::format("h{}", l); }

Tensor RandomNormal(Shape shape, uint64_t seed, const std::string& name) {
  Tensor t(std::move(shape));
  CounterRng rng(CounterRng::DeriveKey(seed, {Fnv1a64(name)}));
  for (double& v : t.data()) v = kInitStd * rng.NextGaussian();
  return t;
}

// Projection `name` with an optional adapter.
Var Project(Tape& tape, const ParamStore& params, const LoraConfig& lora,
            const std::string& name, Var x) {
  Var w = tape.Param(params, name + ".w");
  Var b = tape.Param(params, name + ".b");
  if (lora.enabled && params.contains(LoraAName(name))) {
    return LoraForward(x, w, b, tape.Param(params, LoraAName(name)),
                       tape.Param(params, LoraBName(name)), lora.scaling());
  }
  return Affine(x, w, b);
}

RowMatrix ToMatrix(const Tensor& t) {
  return ConstMatrixMap(t.data().data(), t.rows(), t.cols());
}

Eigen::RowVectorXd ToRow(const Tensor& t) {
  return Eigen::Map<const Eigen::RowVectorXd>(t.data().data(), t.size());
}

const Tensor& Get(const ParamStore& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) {
    throw StructuralError(fmt::format("missing model parameter '{}'", name));
  }
  return it->second.value;
}

RowMatrix LayerNormRows(const RowMatrix& x, const Eigen::RowVectorXd& g,
                        const Eigen::RowVectorXd& b) {
  const int64_t n = x.cols();
  RowMatrix y(x.rows(), n);
  for (int64_t r = 0; r < x.rows(); ++r) {
    double mean = 0.0;
    for (int64_t j = 0; j < n; ++j) mean += x(r, j);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t j = 0; j < n; ++j) var += (x(r, j) - mean) * (x(r, j) - mean);
    var /= static_cast<double>(n);
    const double rs = 1.0 / std::sqrt(var + kLayerNormEps);
    for (int64_t j = 0; j < n; ++j) y(r, j) = (x(r, j) - mean) * rs * g(j) + b(j);
  }
  return y;
}

void GeluInPlace(RowMatrix& x) {
  constexpr double kC = 0.7978845608028654;
  constexpr double kA = 0.044715;
  for (int64_t i = 0; i < x.size(); ++i) {
    double& v = x.data()[i];
    v = 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v)));
  }
}

std::vector<double> LogSoftmax(const Eigen::RowVectorXd& logits) {
  const double mx = logits.maxCoeff();
  double s = 0.0;
  for (int64_t i = 0; i < logits.size(); ++i) s += std::exp(logits(i) - mx);
  const double lse = mx + std::log(s);
  std::vector<double> out(static_cast<size_t>(logits.size()));
  for (int64_t i = 0; i < logits.size(); ++i) out[static_cast<size_t>(i)] = logits(i) - lse;
  return out;
}

void AppendLe(std::string& out, const Tensor& t) {
  const size_t offset = out.size();
  out.resize(offset + t.data().size() * sizeof(double));
  char* dst = out.data() + offset;
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(dst, t.data().data(), t.data().size() * sizeof(double));
  } else {
    for (double v : t.data()) {
      uint64_t bits = std::bit_cast<uint64_t>(v);
      for (int i = 0; i < 8; ++i) *dst++ = static_cast<char>((bits >> (8 * i)) & 0xff);
    }
  }
}

void ReadLe(const char* src, Tensor& t) {
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(t.data().data(), src, t.data().size() * sizeof(double));
  } else {
    for (double& v : t.data()) {
      uint64_t bits = 0;
      for (int i = 0; i < 8; ++i) {
        bits |= static_cast<uint64_t>(static_cast<unsigned char>(*src++)) << (8 * i);
      }
      v = std::bit_cast<double>(bits);
    }
  }
}

}  // namespace

void ModelConfig::Validate() const {
  if (vocab_size < kNumSpecials) {
    throw ConfigError(fmt::format("vocab_size must be >= {} (reserved specials), got {}",
                                  kNumSpecials, vocab_size));
  }
  if (context_length < 16) {
    throw ConfigError(fmt::format("context_length must be >= 16, got {}", context_length));
  }
  if (d_model < 1 || n_layers < 1 || n_heads < 1) {
    throw ConfigError(fmt::format(
        "d_model, n_layers and n_heads must be positive (got {}, {}, {})",
        d_model, n_layers, n_heads));
  }
  if (d_model % n_heads != 0) {
    throw ConfigError(fmt::format("d_model {} is not divisible by n_heads {}",
                                  d_model, n_heads));
  }
}

json ModelConfig::ToJson() const {
  return json{{"vocab_size", vocab_size}, {"context_length", context_length},
              {"d_model", d_model},       {"n_layers", n_layers},
              {"n_heads", n_heads},       {"tie_embeddings", tie_embeddings}};
}

ModelConfig ModelConfig::FromJson(const json& j) {
  ModelConfig c;
  try {
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.context_length = j.value("context_length", c.context_length);
    c.d_model = j.value("d_model", c.d_model);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.tie_embeddings = j.value("tie_embeddings", c.tie_embeddings);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("invalid model config: {}", e.what()));
  }
  c.Validate();
  return c;
}

ParamStore InitParams(const ModelConfig& config, uint64_t seed) {
  config.Validate();
  const int64_t d = config.d_model;
  ParamStore p;
  auto normal = [&](const std::string& name, Shape shape) {
    p[name] = {RandomNormal(std::move(shape), seed, name), true};
  };
  auto fill = [&](const std::string& name, Shape shape, double value) {
    p[name] = {Tensor(std::move(shape), value), true};
  };
  normal("tok_emb", {config.vocab_size, d});
  normal("pos_emb", {config.context_length, d});
  for (int64_t l = 0; l < config.n_layers; ++l) {
    const std::string h = LayerPrefix(l);
    fill(h + ".ln1.g", {d}, 1.0);
    fill(h + ".ln1.b", {d}, 0.0);
    for (const char* proj : {"q", "k", "v", "o"}) {
      normal(fmt::format("{}.attn.{}.w", h, proj), {d, d});
      fill(fmt::format("{}.attn.{}.b", h, proj), {d}, 0.0);
    }
    fill(h + ".ln2.g", {d}, 1.0);
    fill(h + ".ln2.b", {d}, 0.0);
    normal(h + ".mlp.fc.w", {d, 4 * d});
    fill(h + ".mlp.fc.b", {4 * d}, 0.0);
    normal(h + ".mlp.proj.w", {4 * d, d});
    fill(h + ".mlp.proj.b", {d}, 0.0);
  }
  fill("ln_f.g", {d}, 1.0);
  fill("ln_f.b", {d}, 0.0);
  if (!config.tie_embeddings) normal("lm_head.w", {d, config.vocab_size});
  return p;
}

void ApplyLora(ParamStore& params, const ModelConfig& config,
               const LoraConfig& lora, uint64_t seed) {
  if (!lora.enabled) return;
  lora.Validate(config.d_model, config.d_model);
  for (int64_t l = 0; l < config.n_layers; ++l) {
    for (const std::string& t : lora.targets) {
      AttachLora(params, fmt::format("{}.attn.{}", LayerPrefix(l), t), lora, seed);
    }
  }
  FreezeBase(params);
}

std::optional<SerializedExample> SerializeExample(
    std::span<const int32_t> query, std::span<const int32_t> transcript,
    std::span<const int32_t> summary, int64_t context_length) {
  const auto q = static_cast<int64_t>(query.size());
  const auto x = static_cast<int64_t>(transcript.size());
  const auto y = static_cast<int64_t>(summary.size());
  const int64_t fixed = q + y + 4;
  if (fixed > context_length) return std::nullopt;
  const int64_t keep = std::min(x, context_length - fixed);
  SerializedExample out;
  out.transcript_dropped = x - keep;
  auto& t = out.tokens;
  t.reserve(static_cast<size_t>(fixed + keep));
  t.push_back(kQueryId);
  t.insert(t.end(), query.begin(), query.end());
  t.push_back(kTranscriptId);
  t.insert(t.end(), transcript.begin(), transcript.begin() + keep);
  t.push_back(kSummaryId);
  const size_t summary_start = t.size();
  t.insert(t.end(), summary.begin(), summary.end());
  t.push_back(kEosId);
  out.loss_mask.assign(t.size(), 0.0);
  std::fill(out.loss_mask.begin() + static_cast<int64_t>(summary_start),
            out.loss_mask.end(), 1.0);
  return out;
}

std::vector<int32_t> SerializePrompt(std::span<const int32_t> query,
                                     std::span<const int32_t> transcript,
                                     int64_t context_length, int64_t reserve) {
  const auto q = static_cast<int64_t>(query.size());
  const int64_t fixed = q + 3;
  if (fixed + reserve > context_length) {
    throw ContextOverflowError(fmt::format(
        "prompt with a {}-token query leaves no room for {} summary tokens in "
        "a context of {}",
        q, reserve, context_length));
  }
  const int64_t keep = std::min(static_cast<int64_t>(transcript.size()),
                                context_length - fixed - reserve);
  std::vector<int32_t> t;
  t.push_back(kQueryId);
  t.insert(t.end(), query.begin(), query.end());
  t.push_back(kTranscriptId);
  t.insert(t.end(), transcript.begin(), transcript.begin() + keep);
  t.push_back(kSummaryId);
  return t;
}

Batch MakeBatch(std::span<const SerializedExample* const> examples) {
  if (examples.empty()) throw ShapeError("empty batch");
  Batch b;
  b.batch = static_cast<int64_t>(examples.size());
  for (const SerializedExample* e : examples) {
    if (e->tokens.size() < 2 || e->tokens.size() != e->loss_mask.size()) {
      throw ShapeError("serialized example needs >= 2 tokens and a matching mask");
    }
    b.steps = std::max(b.steps, static_cast<int64_t>(e->tokens.size()) - 1);
  }
  const auto n = static_cast<size_t>(b.batch * b.steps);
  b.inputs.assign(n, kUnkId);
  b.targets.assign(n, kUnkId);
  b.mask.assign(n, 0.0);
  for (int64_t i = 0; i < b.batch; ++i) {
    const SerializedExample& e = *examples[static_cast<size_t>(i)];
    const size_t base = static_cast<size_t>(i * b.steps);
    for (size_t t = 0; t + 1 < e.tokens.size(); ++t) {
      b.inputs[base + t] = e.tokens[t];
      b.targets[base + t] = e.tokens[t + 1];
      b.mask[base + t] = e.loss_mask[t + 1];
    }
  }
  return b;
}

Var ForwardLogits(Tape& tape, const ParamStore& params,
                  const ModelConfig& config, const LoraConfig& lora,
                  std::span<const int32_t> ids, int64_t batch, int64_t steps) {
  if (steps > config.context_length) {
    throw ContextOverflowError(fmt::format(
        "sequence of {} tokens exceeds the context length {}", steps,
        config.context_length));
  }
  Var tok = tape.Param(params, "tok_emb");
  std::vector<int32_t> positions(static_cast<size_t>(batch * steps));
  for (size_t i = 0; i < positions.size(); ++i) {
    positions[i] = static_cast<int32_t>(static_cast<int64_t>(i) % steps);
  }
  Var h = Add(EmbedLookup(tok, ids, batch, steps),
              EmbedLookup(tape.Param(params, "pos_emb"), positions, batch, steps));
  for (int64_t l = 0; l < config.n_layers; ++l) {
    const std::string p = LayerPrefix(l);
    Var a = LayerNorm(h, tape.Param(params, p + ".ln1.g"),
                      tape.Param(params, p + ".ln1.b"), kLayerNormEps);
    Var q = Project(tape, params, lora, p + ".attn.q", a);
    Var k = Project(tape, params, lora, p + ".attn.k", a);
    Var v = Project(tape, params, lora, p + ".attn.v", a);
    Var att = CausalAttention(q, k, v, config.n_heads);
    h = Add(h, Project(tape, params, lora, p + ".attn.o", att));
    Var m = LayerNorm(h, tape.Param(params, p + ".ln2.g"),
                      tape.Param(params, p + ".ln2.b"), kLayerNormEps);
    Var f = Gelu(Affine(m, tape.Param(params, p + ".mlp.fc.w"),
                        tape.Param(params, p + ".mlp.fc.b")));
    h = Add(h, Affine(f, tape.Param(params, p + ".mlp.proj.w"),
                      tape.Param(params, p + ".mlp.proj.b")));
  }
  h = LayerNorm(h, tape.Param(params, "ln_f.g"), tape.Param(params, "ln_f.b"),
                kLayerNormEps);
  if (config.tie_embeddings) return AffineTransposed(h, tok);
  return Affine(h, tape.Param(params, "lm_head.w"));
}

Var ForwardLoss(Tape& tape, const ParamStore& params, const ModelConfig& config,
                const LoraConfig& lora, const Batch& batch) {
  Var logits = ForwardLogits(tape, params, config, lora, batch.inputs,
                             batch.batch, batch.steps);
  return CrossEntropyPerExample(logits, batch.targets, batch.mask);
}

// ---------------------------------------------------------------------------
// KvDecoder

struct KvDecoder::Layer {
  struct Proj {
    RowMatrix w;
    Eigen::RowVectorXd b;
    bool adapted = false;
    RowMatrix a;   // [r x d]
    RowMatrix bb;  // [p x r]
  };
  Eigen::RowVectorXd ln1_g, ln1_b, ln2_g, ln2_b;
  Proj q, k, v, o;
  RowMatrix fc_w, proj_w;
  Eigen::RowVectorXd fc_b, proj_b;
};

KvDecoder::KvDecoder(const ParamStore& params, const ModelConfig& config,
                     const LoraConfig& lora)
    : config_(config), lora_(lora) {
  config_.Validate();
  auto proj = [&](const std::string& name) {
    Layer::Proj p;
    p.w = ToMatrix(Get(params, name + ".w"));
    p.b = ToRow(Get(params, name + ".b"));
    if (lora_.enabled && params.contains(LoraAName(name))) {
      p.adapted = true;
      p.a = ToMatrix(Get(params, LoraAName(name)));
      p.bb = ToMatrix(Get(params, LoraBName(name)));
    }
    return p;
  };
  for (int64_t l = 0; l < config_.n_layers; ++l) {
    const std::string p = LayerPrefix(l);
    auto layer = std::make_shared<Layer>();
    layer->ln1_g = ToRow(Get(params, p + ".ln1.g"));
    layer->ln1_b = ToRow(Get(params, p + ".ln1.b"));
    layer->ln2_g = ToRow(Get(params, p + ".ln2.g"));
    layer->ln2_b = ToRow(Get(params, p + ".ln2.b"));
    layer->q = proj(p + ".attn.q");
    layer->k = proj(p + ".attn.k");
    layer->v = proj(p + ".attn.v");
    layer->o = proj(p + ".attn.o");
    layer->fc_w = ToMatrix(Get(params, p + ".mlp.fc.w"));
    layer->fc_b = ToRow(Get(params, p + ".mlp.fc.b"));
    layer->proj_w = ToMatrix(Get(params, p + ".mlp.proj.w"));
    layer->proj_b = ToRow(Get(params, p + ".mlp.proj.b"));
    layers_.push_back(std::move(layer));
  }
  tok_emb_ = ToMatrix(Get(params, "tok_emb"));
  pos_emb_ = ToMatrix(Get(params, "pos_emb"));
  if (tok_emb_.rows() != config_.vocab_size || tok_emb_.cols() != config_.d_model ||
      pos_emb_.rows() != config_.context_length) {
    throw ShapeError("embedding tables do not match the model config");
  }
  head_ = config_.tie_embeddings ? RowMatrix(tok_emb_.transpose())
                                 : ToMatrix(Get(params, "lm_head.w"));
  lnf_g_ = ToRow(Get(params, "ln_f.g"));
  lnf_b_ = ToRow(Get(params, "ln_f.b"));
}

RowMatrix KvDecoder::Run(const Cache* prefix, Cache& suffix,
                         std::span<const int32_t> tokens) const {
  const int64_t d = config_.d_model;
  const int64_t n_heads = config_.n_heads;
  const int64_t dh = d / n_heads;
  const auto n = static_cast<int64_t>(tokens.size());
  const int64_t p_pre = prefix != nullptr ? prefix->length : 0;
  const int64_t start = p_pre + suffix.length;
  if (start + n > config_.context_length) {
    throw ContextOverflowError(fmt::format(
        "{} cached plus {} new tokens exceed the context length {}", start, n,
        config_.context_length));
  }
  if (suffix.k.empty()) {
    suffix.k.resize(layers_.size());
    suffix.v.resize(layers_.size());
  }
  RowMatrix h(n, d);
  for (int64_t i = 0; i < n; ++i) {
    const int32_t id = tokens[static_cast<size_t>(i)];
    if (id < 0 || id >= config_.vocab_size) {
      throw IndexError(fmt::format("token {} outside [0, {})", id, config_.vocab_size));
    }
    h.row(i) = tok_emb_.row(id) + pos_emb_.row(start + i);
  }
  auto project = [&](const Layer::Proj& p, const RowMatrix& x) {
    RowMatrix y = x * p.w;
    y.rowwise() += p.b;
    if (p.adapted) {
      RowMatrix delta = (x * p.a.transpose()) * p.bb.transpose();
      y += lora_.scaling() * delta;
    }
    return y;
  };
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  using Strided = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;
  for (size_t l = 0; l < layers_.size(); ++l) {
    const Layer& L = *layers_[l];
    const RowMatrix a = LayerNormRows(h, L.ln1_g, L.ln1_b);
    const RowMatrix q = project(L.q, a);
    const RowMatrix k = project(L.k, a);
    const RowMatrix v = project(L.v, a);
    std::vector<double>& ks = suffix.k[l];
    std::vector<double>& vs = suffix.v[l];
    ks.insert(ks.end(), k.data(), k.data() + k.size());
    vs.insert(vs.end(), v.data(), v.data() + v.size());
    const int64_t p_suf = static_cast<int64_t>(ks.size()) / d;  // incl. new
    RowMatrix att(n, d);
    for (int64_t head = 0; head < n_heads; ++head) {
      const int64_t off = head * dh;
      Strided qh(q.data() + off, n, dh, Eigen::OuterStride<>(d));
      Strided ksh(ks.data() + off, p_suf, dh, Eigen::OuterStride<>(d));
      Strided vsh(vs.data() + off, p_suf, dh, Eigen::OuterStride<>(d));
      RowMatrix s_suf = (qh * ksh.transpose()) * scale;
      RowMatrix s_pre;
      if (p_pre > 0) {
        Strided kph(prefix->k[l].data() + off, p_pre, dh, Eigen::OuterStride<>(d));
        s_pre = (qh * kph.transpose()) * scale;
      }
      for (int64_t i = 0; i < n; ++i) {
        // New token i sits at suffix row (p_suf - n + i) and sees suffix rows
        // up to and including itself.
        const int64_t visible = p_suf - n + i + 1;
        double mx = -std::numeric_limits<double>::infinity();
        for (int64_t j = 0; j < p_pre; ++j) mx = std::max(mx, s_pre(i, j));
        for (int64_t j = 0; j < visible; ++j) mx = std::max(mx, s_suf(i, j));
        double total = 0.0;
        for (int64_t j = 0; j < p_pre; ++j) total += (s_pre(i, j) = std::exp(s_pre(i, j) - mx));
        for (int64_t j = 0; j < visible; ++j) total += (s_suf(i, j) = std::exp(s_suf(i, j) - mx));
        Eigen::RowVectorXd out = Eigen::RowVectorXd::Zero(dh);
        if (p_pre > 0) {
          Strided vph(prefix->v[l].data() + off, p_pre, dh, Eigen::OuterStride<>(d));
          out.noalias() += (s_pre.row(i) / total) * vph;
        }
        out.noalias() += (s_suf.row(i).head(visible) / total) * vsh.topRows(visible);
        att.block(i, off, 1, dh) = out;
      }
    }
    h += project(L.o, att);
    RowMatrix f = LayerNormRows(h, L.ln2_g, L.ln2_b) * L.fc_w;
    f.rowwise() += L.fc_b;
    GeluInPlace(f);
    RowMatrix m = f * L.proj_w;
    m.rowwise() += L.proj_b;
    h += m;
  }
  suffix.length += n;
  return LayerNormRows(h, lnf_g_, lnf_b_);
}

RowMatrix KvDecoder::Logits(const RowMatrix& hidden) const {
  return hidden * head_;
}

KvDecoder::State KvDecoder::Start(std::span<const int32_t> prefix) const {
  if (prefix.empty()) throw ContextOverflowError("empty prompt");
  if (static_cast<int64_t>(prefix.size()) >= config_.context_length) {
    throw ContextOverflowError(fmt::format(
        "prompt of {} tokens leaves no room in a context of {}", prefix.size(),
        config_.context_length));
  }
  auto cache = std::make_shared<Cache>();
  RowMatrix hidden = Run(nullptr, *cache, prefix);
  State s;
  s.log_probs = LogSoftmax(Logits(hidden.bottomRows(1)).row(0));
  s.prefix = std::move(cache);
  s.suffix.k.resize(layers_.size());
  s.suffix.v.resize(layers_.size());
  return s;
}

KvDecoder::State KvDecoder::Extend(const State& state, int32_t token) const {
  State next;
  next.prefix = state.prefix;
  next.suffix = state.suffix;
  const int32_t tokens[] = {token};
  RowMatrix hidden = Run(next.prefix.get(), next.suffix, tokens);
  next.log_probs = LogSoftmax(Logits(hidden).row(0));
  return next;
}

const std::vector<double>& KvDecoder::LogProbs(const State& state) {
  return state.log_probs;
}

int64_t KvDecoder::Length(const State& state) {
  return (state.prefix ? state.prefix->length : 0) + state.suffix.length;
}

RowMatrix KvDecoder::LogitsFor(std::span<const int32_t> tokens) const {
  Cache cache;
  return Logits(Run(nullptr, cache, tokens));
}

// ---------------------------------------------------------------------------
// Checkpoints

std::string EncodeCheckpoint(const Checkpoint& checkpoint) {
  json manifest = json::array();
  int64_t offset = 0;
  for (const auto& [name, p] : checkpoint.params) {
    manifest.push_back(json{{"name", name},
                            {"shape", p.value.shape()},
                            {"trainable", p.trainable},
                            {"offset", offset},
                            {"count", p.value.size()}});
    offset += p.value.size();
  }
  json header{{"format", "dpsum-checkpoint"},
              {"version", 1},
              {"config", checkpoint.config.ToJson()},
              {"tokenizer_hash", checkpoint.tokenizer_hash},
              {"metadata", checkpoint.metadata.is_null() ? json::object()
                                                         : checkpoint.metadata},
              {"params", manifest}};
  const std::string text = header.dump();
  std::string out(kMagic, kMagicSize);
  const uint64_t len = text.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((len >> (8 * i)) & 0xff));
  out += text;
  for (const auto& [name, p] : checkpoint.params) AppendLe(out, p.value);
  return out;
}

Checkpoint DecodeCheckpoint(std::string_view bytes) {
  if (bytes.size() < kMagicSize + 8 ||
      bytes.substr(0, kMagicSize) != std::string_view(kMagic, kMagicSize)) {
    throw ParseError("not a dpsum checkpoint (bad magic)");
  }
  uint64_t len = 0;
  for (int i = 0; i < 8; ++i) {
    len |= static_cast<uint64_t>(static_cast<unsigned char>(bytes[kMagicSize + i]))
           << (8 * i);
  }
  const size_t header_start = kMagicSize + 8;
  if (len > bytes.size() - header_start) {
    throw ParseError("checkpoint header is truncated");
  }
  json header;
  try {
    header = json::parse(bytes.substr(header_start, len));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(fmt::format("checkpoint header is not valid JSON: {}", e.what()));
  }
  Checkpoint ck;
  const char* data = bytes.data() + header_start + len;
  const size_t available = bytes.size() - header_start - len;
  try {
    if (header.at("format") != "dpsum-checkpoint" || header.at("version") != 1) {
      throw ParseError("unsupported checkpoint format or version");
    }
    ck.config = ModelConfig::FromJson(header.at("config"));
    ck.tokenizer_hash = header.at("tokenizer_hash").get<std::string>();
    ck.metadata = header.at("metadata");
    size_t expected = 0;
    for (const json& entry : header.at("params")) {
      Shape shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<int64_t>();
      Tensor t(shape);
      if (entry.at("count").get<int64_t>() != t.size() ||
          offset != static_cast<int64_t>(expected / sizeof(double))) {
        throw ParseError(fmt::format("inconsistent manifest entry for '{}'",
                                     entry.at("name").get<std::string>()));
      }
      const size_t nbytes = static_cast<size_t>(t.size()) * sizeof(double);
      if (expected + nbytes > available) {
        throw ParseError("checkpoint parameter data is truncated");
      }
      ReadLe(data + expected, t);
      expected += nbytes;
      if (!t.AllFinite()) {
        throw ParseError(fmt::format("non-finite values in '{}'",
                                     entry.at("name").get<std::string>()));
      }
      ck.params[entry.at("name").get<std::string>()] = {
          std::move(t), entry.at("trainable").get<bool>()};
    }
    if (expected != available) {
      throw ParseError("trailing bytes after checkpoint parameter data");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(fmt::format("malformed checkpoint header: {}", e.what()));
  }
  return ck;
}

void SaveCheckpoint(const std::string& path, const Checkpoint& checkpoint) {
  WriteFileAtomic(path, EncodeCheckpoint(checkpoint));
}

Checkpoint LoadCheckpoint(const std::string& path) {
  return DecodeCheckpoint(ReadFile(path));
}

}  // namespace dpsum
