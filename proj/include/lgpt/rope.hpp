#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "lgpt/common.hpp"
#include "lgpt/tensor.hpp"

namespace lgpt {

// ---------------------------------------------------------------------------
// Rotary position embedding. Coordinate pairs (2i, 2i+1) of a head vector are
// rotated by angle m * theta_i, theta_i = base^(-2i/d_k); the table holds
// cos/sin for every position up to the context limit. Frequencies are fixed,
// not learned. Rotation preserves pair norms, and dot products between
// rotated vectors depend only on position differences.
// ---------------------------------------------------------------------------

template <class Real>
class RopeTable {
 public:
  RopeTable(std::size_t head_dim, std::size_t max_positions,
            Real base = Real(10000)) {
    if (head_dim == 0 || head_dim % 2 != 0)
      throw ConfigError("rope: head dimension must be even, got " +
                        std::to_string(head_dim));
    head_dim_ = head_dim;
    capacity_ = max_positions;
    base_ = base;
    const std::size_t half = head_dim / 2;
    freqs_.resize(half);
    for (std::size_t i = 0; i < half; ++i)
      freqs_[i] = std::pow(base, -Real(2 * i) / Real(head_dim));
    cos_.resize(max_positions * half);
    sin_.resize(max_positions * half);
    for (std::size_t m = 0; m < max_positions; ++m) {
      for (std::size_t i = 0; i < half; ++i) {
        Real angle = Real(m) * freqs_[i];
        cos_[m * half + i] = std::cos(angle);
        sin_[m * half + i] = std::sin(angle);
      }
    }
  }

  std::size_t head_dim() const { return head_dim_; }
  std::size_t capacity() const { return capacity_; }
  Real base() const { return base_; }
  Real freq(std::size_t i) const { return freqs_.at(i); }

  const Real* cos_row(std::size_t m) const {
    return cos_.data() + m * (head_dim_ / 2);
  }
  const Real* sin_row(std::size_t m) const {
    return sin_.data() + m * (head_dim_ / 2);
  }

  void check_position(std::size_t m) const {
    if (m >= capacity_)
      throw CapacityError("rope: position " + std::to_string(m) +
                          " exceeds table capacity " +
                          std::to_string(capacity_));
  }

  // In-place rotation of one head vector, used by the raw decode path.
  void rotate_row(Real* row, std::size_t m) const {
    check_position(m);
    const Real* c = cos_row(m);
    const Real* s = sin_row(m);
    const std::size_t half = head_dim_ / 2;
    for (std::size_t i = 0; i < half; ++i) {
      Real x0 = row[2 * i], x1 = row[2 * i + 1];
      row[2 * i] = x0 * c[i] - x1 * s[i];
      row[2 * i + 1] = x0 * s[i] + x1 * c[i];
    }
  }

 private:
  std::size_t head_dim_ = 0;
  std::size_t capacity_ = 0;
  Real base_ = 0;
  std::vector<Real> freqs_;
  std::vector<Real> cos_, sin_;
};

// Rotates each row of x (n x d_k) by its position's angles. Differentiable;
// the gradient is the inverse rotation applied to the output gradient.
template <class Real>
Tensor<Real> apply_rope(const Tensor<Real>& x,
                        const std::vector<std::size_t>& positions,
                        const RopeTable<Real>& table) {
  if (x.shape().size() != 2 || x.cols() != table.head_dim())
    throw ShapeError("rope: input " + format_shape(x.shape()) +
                     " does not match head dimension " +
                     std::to_string(table.head_dim()));
  if (positions.size() != x.rows())
    throw ShapeError("rope: " + std::to_string(positions.size()) +
                     " positions for " + std::to_string(x.rows()) + " rows");
  for (std::size_t m : positions) table.check_position(m);

  const std::size_t n = x.rows(), half = table.head_dim() / 2;
  bool tracked = detail::record<Real>({&x});
  auto out = detail::result_like<Real>(x.shape(), {&x}, tracked);
  std::vector<Real> saved;  // per-row cos|sin, kept alive for backward
  if (tracked) saved.resize(n * 2 * half);
  for (std::size_t r = 0; r < n; ++r) {
    const Real* src = x.data() + r * table.head_dim();
    Real* dst = out.data() + r * table.head_dim();
    const Real* c = table.cos_row(positions[r]);
    const Real* s = table.sin_row(positions[r]);
    if (tracked) {
      std::copy(c, c + half, saved.begin() + r * 2 * half);
      std::copy(s, s + half, saved.begin() + r * 2 * half + half);
    }
    for (std::size_t i = 0; i < half; ++i) {
      Real x0 = src[2 * i], x1 = src[2 * i + 1];
      dst[2 * i] = x0 * c[i] - x1 * s[i];
      dst[2 * i + 1] = x0 * s[i] + x1 * c[i];
    }
  }
  if (tracked) {
    out.node()->backprop = [saved = std::move(saved), n,
                            half](TensorNode<Real>& self) {
      auto& px = *self.parents[0];
      px.ensure_grad();
      const std::size_t d = 2 * half;
      for (std::size_t r = 0; r < n; ++r) {
        const Real* g = self.grad.data() + r * d;
        Real* dx = px.grad.data() + r * d;
        const Real* c = saved.data() + r * d;
        const Real* s = c + half;
        for (std::size_t i = 0; i < half; ++i) {
          dx[2 * i] += g[2 * i] * c[i] + g[2 * i + 1] * s[i];
          dx[2 * i + 1] += -g[2 * i] * s[i] + g[2 * i + 1] * c[i];
        }
      }
    };
  }
  return out;
}

// Convenience: consecutive positions start, start+1, ...
template <class Real>
Tensor<Real> apply_rope(const Tensor<Real>& x, std::size_t start,
                        const RopeTable<Real>& table) {
  std::vector<std::size_t> positions(x.rows());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = start + i;
  return apply_rope(x, positions, table);
}

}  // namespace lgpt
