#pragma once

#include <cmath>
#include <cstring>
#include <type_traits>
#include <vector>

#include "lgpt/common.hpp"
#include "lgpt/config.hpp"
#include "lgpt/rope.hpp"
#include "lgpt/tensor.hpp"

namespace lgpt {

// ---------------------------------------------------------------------------
// The three attention variants. MHA projects keys/values at full rank; MLA
// factorizes them per head through a rank-r bottleneck so that only the
// n x (H*r) latents need caching at decode time; MLA+RoPE additionally
// rotates queries and up-projected keys. The latent is cached un-rotated:
// rotation happens after up-projection, at whatever position the entry
// holds, so compression is independent of position handling.
// ---------------------------------------------------------------------------

template <class Real>
struct AttentionWeights {
  Variant variant = Variant::kMha;
  std::size_t hidden = 0;    // d
  std::size_t heads = 0;     // H
  std::size_t head_dim = 0;  // d_k = d/H
  std::size_t latent = 0;    // r (== head_dim for MHA)

  Tensor<Real> wq;                  // d x d
  Tensor<Real> wk, wv;              // MHA: d x d
  Tensor<Real> wk_down, wv_down;    // MLA: d x (H*r), head h owns cols [h*r,(h+1)*r)
  Tensor<Real> wk_up, wv_up;        // MLA: (H*r) x d_k, head h owns rows [h*r,(h+1)*r)
  Tensor<Real> wo;                  // d x d

  bool is_latent() const { return variant != Variant::kMha; }
  // Per-token cache row width: full keys for MHA, latents for MLA.
  std::size_t cache_width() const {
    return heads * (is_latent() ? latent : head_dim);
  }

  static AttentionWeights init(Variant variant, std::size_t hidden,
                               std::size_t heads, std::size_t latent,
                               std::mt19937_64& rng,
                               Real stddev = Real(0.02)) {
    if (heads == 0 || hidden % heads != 0)
      throw ConfigError("attention: hidden " + std::to_string(hidden) +
                        " not divisible by heads " + std::to_string(heads));
    const std::size_t dk = hidden / heads;
    if (variant != Variant::kMha && (latent == 0 || latent > dk))
      throw ConfigError("attention: latent rank " + std::to_string(latent) +
                        " must be in [1, " + std::to_string(dk) + "]");
    AttentionWeights w;
    w.variant = variant;
    w.hidden = hidden;
    w.heads = heads;
    w.head_dim = dk;
    w.latent = variant == Variant::kMha ? dk : latent;
    w.wq = Tensor<Real>::randn({hidden, hidden}, rng, stddev, true);
    if (variant == Variant::kMha) {
      w.wk = Tensor<Real>::randn({hidden, hidden}, rng, stddev, true);
      w.wv = Tensor<Real>::randn({hidden, hidden}, rng, stddev, true);
    } else {
      const std::size_t hr = heads * w.latent;
      w.wk_down = Tensor<Real>::randn({hidden, hr}, rng, stddev, true);
      w.wk_up = Tensor<Real>::randn({hr, dk}, rng, stddev, true);
      w.wv_down = Tensor<Real>::randn({hidden, hr}, rng, stddev, true);
      w.wv_up = Tensor<Real>::randn({hr, dk}, rng, stddev, true);
    }
    w.wo = Tensor<Real>::randn({hidden, hidden}, rng, stddev, true);
    return w;
  }
};

// Per-layer, per-sequence append-only store of key/value rows (latent rows
// for MLA, full-rank rows for MHA).
template <class Real>
class LatentKVCache {
 public:
  LatentKVCache(std::size_t width, std::size_t capacity)
      : width_(width), capacity_(capacity) {
    k_.reserve(width * capacity);
    v_.reserve(width * capacity);
  }

  std::size_t width() const { return width_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t next_position() const { return next_; }
  std::size_t bytes_used() const {
    return (k_.size() + v_.size()) * sizeof(Real);
  }

  void append(const Real* k_row, const Real* v_row) {
    if (next_ >= capacity_)
      throw CapacityError("kv cache: context limit " +
                          std::to_string(capacity_) + " reached");
    k_.insert(k_.end(), k_row, k_row + width_);
    v_.insert(v_.end(), v_row, v_row + width_);
    ++next_;
  }

  const Real* k_row(std::size_t i) const { return k_.data() + i * width_; }
  const Real* v_row(std::size_t i) const { return v_.data() + i * width_; }

 private:
  std::size_t width_;
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::vector<Real> k_, v_;
};

// Analytic per-token cache cost: 2 buffers x L layers x H heads x r entries
// (r -> d_k for MHA).
inline std::size_t cache_bytes_per_token(const ModelConfig& cfg,
                                         std::size_t element_bytes) {
  ModelConfig c = cfg.normalized();
  c.validate();
  std::size_t width =
      c.variant == Variant::kMha ? c.head_dim() : c.latent;
  return 2 * c.layers * c.heads * width * element_bytes;
}

template <class Real>
struct AttentionTrace {
  std::size_t n = 0;
  // Scaled pre-mask score matrices, one n*n buffer per head.
  std::vector<std::vector<Real>> head_scores;
};

namespace detail {

template <class Real>
Tensor<Real> causal_mask(std::size_t n) {
  auto m = Tensor<Real>::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      m.data()[i * n + j] = Real(-1e9);
  return m;
}

}  // namespace detail

// Full-sequence attention, all variants. Rows of x are consecutive tokens
// whose absolute positions start at pos_offset (RoPE variants only).
template <class Real>
Tensor<Real> attention_forward(const Tensor<Real>& x,
                               const AttentionWeights<Real>& w,
                               std::type_identity_t<const RopeTable<Real>*> rope,
                               bool causal,
                               std::size_t pos_offset = 0,
                               AttentionTrace<Real>* trace = nullptr) {
  if (x.shape().size() != 2 || x.cols() != w.hidden)
    throw ShapeError("attention: input " + format_shape(x.shape()) +
                     " does not match hidden size " +
                     std::to_string(w.hidden));
  if ((w.variant == Variant::kMlaRope) != (rope != nullptr))
    throw ConfigError(w.variant == Variant::kMlaRope
                          ? "attention: mla_rope requires a rope table"
                          : "attention: rope table given to a non-rope variant");
  const std::size_t n = x.rows();
  const std::size_t H = w.heads, dk = w.head_dim, r = w.latent;
  const Real inv_sqrt_dk = Real(1) / std::sqrt(Real(dk));

  auto q_full = matmul(x, w.wq);
  Tensor<Real> k_full, v_full, k_lat, v_lat;
  if (w.variant == Variant::kMha) {
    k_full = matmul(x, w.wk);
    v_full = matmul(x, w.wv);
  } else {
    k_lat = matmul(x, w.wk_down);
    v_lat = matmul(x, w.wv_down);
  }

  Tensor<Real> mask;
  if (causal) mask = detail::causal_mask<Real>(n);
  std::vector<std::size_t> positions;
  if (rope) {
    positions.resize(n);
    for (std::size_t i = 0; i < n; ++i) positions[i] = pos_offset + i;
  }
  if (trace) {
    trace->n = n;
    trace->head_scores.clear();
  }

  std::vector<Tensor<Real>> contexts;
  contexts.reserve(H);
  for (std::size_t h = 0; h < H; ++h) {
    auto q_h = slice_cols(q_full, h * dk, (h + 1) * dk);
    Tensor<Real> k_h, v_h;
    if (w.variant == Variant::kMha) {
      k_h = slice_cols(k_full, h * dk, (h + 1) * dk);
      v_h = slice_cols(v_full, h * dk, (h + 1) * dk);
    } else {
      k_h = matmul(slice_cols(k_lat, h * r, (h + 1) * r),
                   slice_rows(w.wk_up, h * r, (h + 1) * r));
      v_h = matmul(slice_cols(v_lat, h * r, (h + 1) * r),
                   slice_rows(w.wv_up, h * r, (h + 1) * r));
    }
    if (rope) {
      q_h = apply_rope(q_h, positions, *rope);
      k_h = apply_rope(k_h, positions, *rope);
    }
    auto scores = scale(matmul_bt(q_h, k_h), inv_sqrt_dk);
    if (trace) trace->head_scores.push_back(scores.values());
    if (causal) scores = add(scores, mask);
    auto attn = softmax(scores, 1);
    contexts.push_back(matmul(attn, v_h));
  }
  return matmul(concat_cols(contexts), w.wo);
}

template <class Real>
Tensor<Real> mha_forward(const Tensor<Real>& x, const AttentionWeights<Real>& w,
                         bool causal = true) {
  if (w.variant != Variant::kMha)
    throw ConfigError("mha_forward: weights are " + variant_name(w.variant));
  return attention_forward(x, w, nullptr, causal);
}

template <class Real>
Tensor<Real> mla_forward(const Tensor<Real>& x, const AttentionWeights<Real>& w,
                         std::type_identity_t<const RopeTable<Real>*> rope,
                         bool causal = true,
                         std::size_t pos_offset = 0,
                         AttentionTrace<Real>* trace = nullptr) {
  if (w.variant == Variant::kMha)
    throw ConfigError("mla_forward: weights are mha");
  return attention_forward(x, w, rope, causal, pos_offset, trace);
}

// One incremental decoding step: appends this token's cache row, then
// attends the single query against everything cached so far. Matches row
// `next_position` of the full-sequence forward. Graph-free.
template <class Real>
Tensor<Real> decode_step(const Tensor<Real>& x_t,
                         const AttentionWeights<Real>& w,
                         LatentKVCache<Real>& cache,
                         std::type_identity_t<const RopeTable<Real>*> rope) {
  NoGrad guard;
  if (x_t.shape().size() != 2 || x_t.rows() != 1 || x_t.cols() != w.hidden)
    throw ShapeError("decode_step: expected 1x" + std::to_string(w.hidden) +
                     " input, got " + format_shape(x_t.shape()));
  if (cache.width() != w.cache_width())
    throw ConfigError("decode_step: cache width " +
                      std::to_string(cache.width()) + " != expected " +
                      std::to_string(w.cache_width()));
  if ((w.variant == Variant::kMlaRope) != (rope != nullptr))
    throw ConfigError("decode_step: rope table mismatch for variant " +
                      variant_name(w.variant));
  if (cache.next_position() >= cache.capacity())
    throw CapacityError("decode_step: context limit " +
                        std::to_string(cache.capacity()) + " reached");

  const std::size_t d = w.hidden, H = w.heads, dk = w.head_dim, r = w.latent;
  const std::size_t pos = cache.next_position();
  const Real inv_sqrt_dk = Real(1) / std::sqrt(Real(dk));

  std::vector<Real> q(d, Real(0));
  detail::gemm_nn(1, d, d, x_t.data(), w.wq.data(), q.data());
  const std::size_t cw = w.cache_width();
  std::vector<Real> k_row(cw, Real(0)), v_row(cw, Real(0));
  if (w.variant == Variant::kMha) {
    detail::gemm_nn(1, d, d, x_t.data(), w.wk.data(), k_row.data());
    detail::gemm_nn(1, d, d, x_t.data(), w.wv.data(), v_row.data());
  } else {
    detail::gemm_nn(1, d, cw, x_t.data(), w.wk_down.data(), k_row.data());
    detail::gemm_nn(1, d, cw, x_t.data(), w.wv_down.data(), v_row.data());
  }
  cache.append(k_row.data(), v_row.data());
  const std::size_t t1 = pos + 1;

  auto out_heads = Tensor<Real>::zeros({1, d});
  std::vector<Real> lat_k, lat_v, keys, vals, scores;
  for (std::size_t h = 0; h < H; ++h) {
    Real* qh = q.data() + h * dk;
    if (rope) rope->rotate_row(qh, pos);

    const Real* key_rows;
    const Real* val_rows;
    if (w.variant == Variant::kMha) {
      keys.assign(t1 * dk, Real(0));
      vals.assign(t1 * dk, Real(0));
      for (std::size_t i = 0; i < t1; ++i) {
        std::memcpy(keys.data() + i * dk, cache.k_row(i) + h * dk,
                    dk * sizeof(Real));
        std::memcpy(vals.data() + i * dk, cache.v_row(i) + h * dk,
                    dk * sizeof(Real));
      }
    } else {
      lat_k.assign(t1 * r, Real(0));
      lat_v.assign(t1 * r, Real(0));
      for (std::size_t i = 0; i < t1; ++i) {
        std::memcpy(lat_k.data() + i * r, cache.k_row(i) + h * r,
                    r * sizeof(Real));
        std::memcpy(lat_v.data() + i * r, cache.v_row(i) + h * r,
                    r * sizeof(Real));
      }
      keys.assign(t1 * dk, Real(0));
      vals.assign(t1 * dk, Real(0));
      detail::gemm_nn(t1, r, dk, lat_k.data(), w.wk_up.data() + h * r * dk,
                      keys.data());
      detail::gemm_nn(t1, r, dk, lat_v.data(), w.wv_up.data() + h * r * dk,
                      vals.data());
    }
    if (rope)
      for (std::size_t i = 0; i < t1; ++i)
        rope->rotate_row(keys.data() + i * dk, i);
    key_rows = keys.data();
    val_rows = vals.data();

    scores.assign(t1, Real(0));
    detail::gemm_nt(1, dk, t1, qh, key_rows, scores.data());
    for (std::size_t i = 0; i < t1; ++i) scores[i] *= inv_sqrt_dk;
    Real mx = scores[0];
    for (std::size_t i = 1; i < t1; ++i) mx = std::max(mx, scores[i]);
    Real z = 0;
    for (std::size_t i = 0; i < t1; ++i) {
      scores[i] = std::exp(scores[i] - mx);
      z += scores[i];
    }
    Real invz = Real(1) / z;
    Real* ctx = out_heads.data() + h * dk;
    for (std::size_t i = 0; i < t1; ++i) {
      Real p = scores[i] * invz;
      const Real* v = val_rows + i * dk;
      for (std::size_t j = 0; j < dk; ++j) ctx[j] += p * v[j];
    }
  }

  auto out = Tensor<Real>::zeros({1, d});
  detail::gemm_nn(1, d, d, out_heads.data(), w.wo.data(), out.data());
  return out;
}

}  // namespace lgpt
