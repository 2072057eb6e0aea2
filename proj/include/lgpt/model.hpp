#pragma once

#include <algorithm>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "lgpt/attention.hpp"
#include "lgpt/config.hpp"
#include "lgpt/rope.hpp"
#include "lgpt/tensor.hpp"

namespace lgpt {

// ---------------------------------------------------------------------------
// Decoder-only GPT: token embedding, pre-norm blocks of attention + MLP with
// GELU and 4x expansion, final norm, output head tied to the embedding.
// Learned absolute position embeddings are used by the mha and mla variants;
// mla_rope relies on rotation alone.
// ---------------------------------------------------------------------------

template <class Real>
struct NamedParam {
  std::string name;
  Tensor<Real> tensor;  // shares storage with the model
  bool decay;           // weight decay applies (matrices, not norms/embeddings)
};

template <class Real>
struct LayerNormWeights {
  Tensor<Real> gain, bias;

  static LayerNormWeights init(std::size_t d) {
    return {Tensor<Real>::full({d}, Real(1), true),
            Tensor<Real>::zeros({d}, true)};
  }
};

template <class Real>
struct MlpWeights {
  Tensor<Real> fc_w, fc_b;      // d x 4d, 4d
  Tensor<Real> proj_w, proj_b;  // 4d x d, d

  static MlpWeights init(std::size_t d, std::mt19937_64& rng,
                         Real stddev = Real(0.02)) {
    MlpWeights m;
    m.fc_w = Tensor<Real>::randn({d, 4 * d}, rng, stddev, true);
    m.fc_b = Tensor<Real>::zeros({4 * d}, true);
    m.proj_w = Tensor<Real>::randn({4 * d, d}, rng, stddev, true);
    m.proj_b = Tensor<Real>::zeros({d}, true);
    return m;
  }
};

template <class Real>
struct TransformerBlock {
  LayerNormWeights<Real> ln1, ln2;
  AttentionWeights<Real> attn;
  MlpWeights<Real> mlp;
};

template <class Real>
struct GptModel {
  ModelConfig cfg;  // normalized
  Tensor<Real> tok_emb;            // vocab x d
  Tensor<Real> pos_emb;            // context x d; undefined for mla_rope
  Tensor<Real> head_w;             // vocab x d; undefined when tied
  std::vector<TransformerBlock<Real>> blocks;
  LayerNormWeights<Real> ln_f;
  std::optional<RopeTable<Real>> rope;

  bool uses_pos_emb() const { return cfg.variant != Variant::kMlaRope; }

  std::vector<NamedParam<Real>> parameters() const {
    std::vector<NamedParam<Real>> out;
    out.push_back({"tok_emb", tok_emb, false});
    if (uses_pos_emb()) out.push_back({"pos_emb", pos_emb, false});
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      const auto& b = blocks[l];
      const std::string p = "block" + std::to_string(l) + ".";
      out.push_back({p + "ln1.gain", b.ln1.gain, false});
      out.push_back({p + "ln1.bias", b.ln1.bias, false});
      out.push_back({p + "attn.wq", b.attn.wq, true});
      if (b.attn.variant == Variant::kMha) {
        out.push_back({p + "attn.wk", b.attn.wk, true});
        out.push_back({p + "attn.wv", b.attn.wv, true});
      } else {
        out.push_back({p + "attn.wk_down", b.attn.wk_down, true});
        out.push_back({p + "attn.wk_up", b.attn.wk_up, true});
        out.push_back({p + "attn.wv_down", b.attn.wv_down, true});
        out.push_back({p + "attn.wv_up", b.attn.wv_up, true});
      }
      out.push_back({p + "attn.wo", b.attn.wo, true});
      out.push_back({p + "ln2.gain", b.ln2.gain, false});
      out.push_back({p + "ln2.bias", b.ln2.bias, false});
      out.push_back({p + "mlp.fc_w", b.mlp.fc_w, true});
      out.push_back({p + "mlp.fc_b", b.mlp.fc_b, false});
      out.push_back({p + "mlp.proj_w", b.mlp.proj_w, true});
      out.push_back({p + "mlp.proj_b", b.mlp.proj_b, false});
    }
    out.push_back({"ln_f.gain", ln_f.gain, false});
    out.push_back({"ln_f.bias", ln_f.bias, false});
    if (!cfg.tied_output) out.push_back({"head_w", head_w, true});
    return out;
  }

  void zero_grads() const {
    for (auto& p : parameters()) {
      Tensor<Real> t = p.tensor;
      t.zero_grad();
    }
  }
};

// Exact number of distinct scalars (tied weights counted once).
template <class Real>
std::size_t count_params(const GptModel<Real>& m) {
  std::size_t total = 0;
  for (const auto& p : m.parameters()) total += p.tensor.size();
  return total;
}

// Closed-form parameter count for a configuration.
inline std::size_t param_count(const ModelConfig& raw) {
  ModelConfig c = raw.normalized();
  c.validate();
  const std::size_t d = c.hidden, H = c.heads, dk = c.head_dim(),
                    r = c.latent, L = c.layers, V = c.vocab;
  std::size_t attn = 2 * d * d;  // wq + wo
  if (c.variant == Variant::kMha)
    attn += 2 * d * d;
  else
    attn += 2 * (d * H * r + H * r * dk);
  const std::size_t mlp = d * 4 * d + 4 * d + 4 * d * d + d;
  const std::size_t norms = 4 * d;  // two layer norms
  std::size_t total = V * d + L * (attn + mlp + norms) + 2 * d;
  if (c.variant != Variant::kMlaRope) total += c.context * d;
  if (!c.tied_output) total += V * d;
  return total;
}

template <class Real>
GptModel<Real> build_model(const ModelConfig& raw, std::uint64_t seed) {
  ModelConfig cfg = raw.normalized();
  cfg.validate();
  auto rng = seeded_rng(seed);
  GptModel<Real> m;
  m.cfg = cfg;
  const std::size_t d = cfg.hidden;
  m.tok_emb = Tensor<Real>::randn({cfg.vocab, d}, rng, Real(0.02), true);
  if (m.uses_pos_emb())
    m.pos_emb = Tensor<Real>::randn({cfg.context, d}, rng, Real(0.02), true);
  m.blocks.reserve(cfg.layers);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    TransformerBlock<Real> b;
    b.ln1 = LayerNormWeights<Real>::init(d);
    b.attn = AttentionWeights<Real>::init(cfg.variant, d, cfg.heads,
                                          cfg.latent, rng);
    b.ln2 = LayerNormWeights<Real>::init(d);
    b.mlp = MlpWeights<Real>::init(d, rng);
    m.blocks.push_back(std::move(b));
  }
  m.ln_f = LayerNormWeights<Real>::init(d);
  if (!cfg.tied_output)
    m.head_w = Tensor<Real>::randn({cfg.vocab, d}, rng, Real(0.02), true);
  if (cfg.variant == Variant::kMlaRope)
    m.rope.emplace(cfg.head_dim(), cfg.context);
  return m;
}

template <class Real>
struct ForwardOptions {
  bool training = false;
  std::mt19937_64* dropout_rng = nullptr;
};

// Full-sequence causal logits (n x vocab). Dropout is active only when
// training mode is on and a dropout rng is supplied.
template <class Real>
Tensor<Real> forward(const GptModel<Real>& m, const std::vector<int>& tokens,
                     ForwardOptions<Real> opt = {}) {
  const std::size_t n = tokens.size();
  if (n == 0) throw ContractError("forward: empty token list");
  if (n > m.cfg.context)
    throw CapacityError("forward: sequence length " + std::to_string(n) +
                        " exceeds context " + std::to_string(m.cfg.context));
  const bool drop = opt.training && m.cfg.dropout > 0 && opt.dropout_rng;
  const Real p = Real(m.cfg.dropout);
  auto x = embedding(m.tok_emb, tokens);
  if (m.uses_pos_emb()) x = add(x, slice_rows(m.pos_emb, 0, n));
  const RopeTable<Real>* rope = m.rope ? &*m.rope : nullptr;
  for (const auto& b : m.blocks) {
    auto a = attention_forward(layer_norm(x, b.ln1.gain, b.ln1.bias), b.attn,
                               rope, true);
    if (drop) a = dropout(a, p, *opt.dropout_rng, true);
    x = add(x, a);
    auto h = layer_norm(x, b.ln2.gain, b.ln2.bias);
    auto mlp = add_row(
        matmul(gelu(add_row(matmul(h, b.mlp.fc_w), b.mlp.fc_b)), b.mlp.proj_w),
        b.mlp.proj_b);
    if (drop) mlp = dropout(mlp, p, *opt.dropout_rng, true);
    x = add(x, mlp);
  }
  x = layer_norm(x, m.ln_f.gain, m.ln_f.bias);
  return matmul_bt(x, m.cfg.tied_output ? m.tok_emb : m.head_w);
}

// Per-sequence decoding state: one cache per layer.
template <class Real>
struct DecodeSession {
  std::vector<LatentKVCache<Real>> caches;

  std::size_t position() const {
    return caches.empty() ? 0 : caches[0].next_position();
  }
  std::size_t bytes_used() const {
    std::size_t total = 0;
    for (const auto& c : caches) total += c.bytes_used();
    return total;
  }
};

template <class Real>
DecodeSession<Real> make_session(const GptModel<Real>& m) {
  DecodeSession<Real> s;
  s.caches.reserve(m.blocks.size());
  for (const auto& b : m.blocks)
    s.caches.emplace_back(b.attn.cache_width(), m.cfg.context);
  return s;
}

// Feeds one token, appends to every layer cache, returns logits (1 x vocab).
template <class Real>
Tensor<Real> decode_next(const GptModel<Real>& m, DecodeSession<Real>& s,
                         int token) {
  NoGrad guard;
  const std::size_t pos = s.position();
  if (pos >= m.cfg.context)
    throw CapacityError("decode: context limit " +
                        std::to_string(m.cfg.context) + " reached");
  auto x = embedding(m.tok_emb, std::vector<int>{token});
  if (m.uses_pos_emb())
    x = add(x, slice_rows(m.pos_emb, pos, pos + 1));
  const RopeTable<Real>* rope = m.rope ? &*m.rope : nullptr;
  for (std::size_t l = 0; l < m.blocks.size(); ++l) {
    const auto& b = m.blocks[l];
    auto a = decode_step(layer_norm(x, b.ln1.gain, b.ln1.bias), b.attn,
                         s.caches[l], rope);
    x = add(x, a);
    auto h = layer_norm(x, b.ln2.gain, b.ln2.bias);
    auto mlp = add_row(
        matmul(gelu(add_row(matmul(h, b.mlp.fc_w), b.mlp.fc_b)), b.mlp.proj_w),
        b.mlp.proj_b);
    x = add(x, mlp);
  }
  x = layer_norm(x, m.ln_f.gain, m.ln_f.bias);
  return matmul_bt(x, m.cfg.tied_output ? m.tok_emb : m.head_w);
}

struct SamplerSpec {
  enum class Kind { kGreedy, kTemperature, kTopK };
  Kind kind = Kind::kGreedy;
  double temperature = 1.0;
  std::size_t k = 0;

  static SamplerSpec greedy() { return {}; }
  static SamplerSpec with_temperature(double t) {
    return {Kind::kTemperature, t, 0};
  }
  static SamplerSpec top_k(std::size_t k, double t = 1.0) {
    return {Kind::kTopK, t, k};
  }
};

template <class Real>
int sample_token(const Real* logits, std::size_t vocab, const SamplerSpec& spec,
                 std::mt19937_64& rng) {
  if (spec.kind == SamplerSpec::Kind::kGreedy) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < vocab; ++i)
      if (logits[i] > logits[best]) best = i;
    return int(best);
  }
  if (spec.temperature <= 0)
    throw ConfigError("sampler: temperature must be positive");
  std::vector<std::size_t> candidates;
  if (spec.kind == SamplerSpec::Kind::kTopK && spec.k > 0 && spec.k < vocab) {
    candidates.resize(vocab);
    for (std::size_t i = 0; i < vocab; ++i) candidates[i] = i;
    std::partial_sort(candidates.begin(), candidates.begin() + spec.k,
                      candidates.end(), [&](std::size_t a, std::size_t b) {
                        return logits[a] > logits[b];
                      });
    candidates.resize(spec.k);
  } else {
    candidates.resize(vocab);
    for (std::size_t i = 0; i < vocab; ++i) candidates[i] = i;
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t c : candidates)
    mx = std::max(mx, double(logits[c]) / spec.temperature);
  std::vector<double> probs(candidates.size());
  double z = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    probs[i] = std::exp(double(logits[candidates[i]]) / spec.temperature - mx);
    z += probs[i];
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double draw = u(rng) * z;
  double acc = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    acc += probs[i];
    if (draw < acc) return int(candidates[i]);
  }
  return int(candidates.back());
}

struct GenerateResult {
  std::vector<int> tokens;  // effective prompt + completion
  std::size_t prompt_tokens = 0;
  std::size_t new_tokens = 0;
  std::size_t truncated_prompt_tokens = 0;
};

// Cached greedy/temperature/top-k generation. Prompts longer than the
// context window are truncated from the left, reported in the result.
template <class Real>
GenerateResult generate(const GptModel<Real>& m, const std::vector<int>& prompt,
                        std::size_t max_new, const SamplerSpec& spec,
                        std::uint64_t seed) {
  if (prompt.empty()) throw ContractError("generate: prompt must be nonempty");
  NoGrad guard;
  GenerateResult res;
  std::size_t keep = prompt.size();
  if (keep + max_new > m.cfg.context) {
    std::size_t budget =
        m.cfg.context > max_new ? m.cfg.context - max_new : std::size_t(1);
    keep = std::min(keep, budget);
  }
  res.truncated_prompt_tokens = prompt.size() - keep;
  res.prompt_tokens = keep;
  res.tokens.assign(prompt.end() - std::ptrdiff_t(keep), prompt.end());
  if (max_new == 0) return res;

  auto rng = seeded_rng(seed);
  auto session = make_session(m);
  Tensor<Real> logits;
  for (std::size_t i = 0; i < keep; ++i)
    logits = decode_next(m, session, res.tokens[i]);
  const std::size_t cap = m.cfg.context - keep;
  const std::size_t budget = std::min(max_new, cap);
  for (std::size_t i = 0; i < budget; ++i) {
    int next = sample_token(logits.data(), m.cfg.vocab, spec, rng);
    res.tokens.push_back(next);
    ++res.new_tokens;
    if (i + 1 < budget) logits = decode_next(m, session, next);
  }
  return res;
}

}  // namespace lgpt
