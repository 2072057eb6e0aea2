#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <random>
#include <unordered_set>
#include <utility>
#include <vector>

#include "lgpt/common.hpp"

namespace lgpt {

// ---------------------------------------------------------------------------
// Dense row-major tensor with reverse-mode autodiff.
//
// Every op that touches a tensor requiring gradients records a node with
// parent references and a backprop closure; backward() walks the recorded
// graph once in reverse topological order. Storage is contiguous row-major,
// no strided views. Gradients accumulate: callers zero them between steps.
// Real is float for training/inference and double for gradient checking.
// ---------------------------------------------------------------------------

namespace detail {

// C += A(m x k) * B(k x n)
template <class Real>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const Real* a,
             const Real* b, Real* c) {
  parallel_for(m, 16, [=](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      const Real* arow = a + i * k;
      Real* crow = c + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        Real ap = arow[p];
        const Real* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += ap * brow[j];
      }
    }
  });
}

// C += A(m x k) * B(n x k)^T
template <class Real>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const Real* a,
             const Real* b, Real* c) {
  parallel_for(m, 16, [=](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      const Real* arow = a + i * k;
      Real* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        const Real* brow = b + j * k;
        Real acc = 0;
        for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
        crow[j] += acc;
      }
    }
  });
}

// C(k x n) += A(m x k)^T * B(m x n)
template <class Real>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const Real* a,
             const Real* b, Real* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const Real* arow = a + i * k;
    const Real* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      Real ap = arow[p];
      Real* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += ap * brow[j];
    }
  }
}

}  // namespace detail

template <class Real>
struct TensorNode {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;

  std::size_t size() const { return value.size(); }
  bool is_leaf() const { return parents.empty(); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), Real(0));
  }
};

// Disables graph recording for a scope (inference / raw evaluation).
struct NoGrad {
  NoGrad() { depth()++; }
  ~NoGrad() { depth()--; }
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;
  static int& depth() {
    static thread_local int d = 0;
    return d;
  }
  static bool active() { return depth() > 0; }
};

template <class Real>
class Tensor {
 public:
  using Node = TensorNode<Real>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value.assign(shape_numel(n->shape), Real(0));
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor full(Shape shape, Real v, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.node_->value.begin(), t.node_->value.end(), v);
    return t;
  }

  static Tensor from(Shape shape, std::vector<Real> data,
                     bool requires_grad = false) {
    if (shape_numel(shape) != data.size())
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + format_shape(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor randn(Shape shape, std::mt19937_64& rng, Real stddev,
                      bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::normal_distribution<Real> dist(Real(0), stddev);
    for (auto& v : t.node_->value) v = dist(rng);
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->value.size(); }
  std::size_t rows() const { return node_->shape.at(0); }
  std::size_t cols() const { return node_->shape.at(1); }

  Real* data() { return node_->value.data(); }
  const Real* data() const { return node_->value.data(); }
  std::vector<Real>& values() { return node_->value; }
  const std::vector<Real>& values() const { return node_->value; }

  Real at(std::size_t i) const { return node_->value.at(i); }
  Real at(std::size_t i, std::size_t j) const {
    return node_->value.at(i * cols() + j);
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::vector<Real>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  const std::vector<Real>& grad() const { return node_->grad; }
  void zero_grad() {
    if (node_) std::fill(node_->grad.begin(), node_->grad.end(), Real(0));
  }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

template <class Real>
bool record(std::initializer_list<const Tensor<Real>*> parents) {
  if (NoGrad::active()) return false;
  for (const auto* p : parents)
    if (p->requires_grad()) return true;
  return false;
}

template <class Real>
Tensor<Real> result_like(Shape shape,
                         std::initializer_list<const Tensor<Real>*> parents,
                         bool tracked) {
  auto out = Tensor<Real>::zeros(std::move(shape), false);
  if (tracked) {
    out.node()->requires_grad = true;
    for (const auto* p : parents) out.node()->parents.push_back(p->node());
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitive ops
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.cols() != b.rows())
    throw ShapeError("matmul: incompatible shapes " + format_shape(a.shape()) +
                     " and " + format_shape(b.shape()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  bool tracked = detail::record<Real>({&a, &b});
  auto out = detail::result_like<Real>({m, n}, {&a, &b}, tracked);
  detail::gemm_nn(m, k, n, a.data(), b.data(), out.data());
  if (tracked) {
    out.node()->backprop = [m, k, n](TensorNode<Real>& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      if (pa.requires_grad) {
        pa.ensure_grad();  // dA += dC * B^T
        detail::gemm_nt(m, n, k, self.grad.data(), pb.value.data(),
                        pa.grad.data());
      }
      if (pb.requires_grad) {
        pb.ensure_grad();  // dB += A^T * dC
        detail::gemm_tn(m, k, n, pa.value.data(), self.grad.data(),
                        pb.grad.data());
      }
    };
  }
  return out;
}

// a(m x k) * b(n x k)^T -> (m x n)
template <class Real>
Tensor<Real> matmul_bt(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.cols() != b.cols())
    throw ShapeError("matmul_bt: incompatible shapes " +
                     format_shape(a.shape()) + " and " +
                     format_shape(b.shape()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  bool tracked = detail::record<Real>({&a, &b});
  auto out = detail::result_like<Real>({m, n}, {&a, &b}, tracked);
  detail::gemm_nt(m, k, n, a.data(), b.data(), out.data());
  if (tracked) {
    out.node()->backprop = [m, k, n](TensorNode<Real>& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      if (pa.requires_grad) {
        pa.ensure_grad();  // dA += dC * B
        detail::gemm_nn(m, n, k, self.grad.data(), pb.value.data(),
                        pa.grad.data());
      }
      if (pb.requires_grad) {
        pb.ensure_grad();  // dB += dC^T * A
        detail::gemm_tn(m, n, k, self.grad.data(), pa.value.data(),
                        pb.grad.data());
      }
    };
  }
  return out;
}

template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("add: shape mismatch " + format_shape(a.shape()) +
                     " vs " + format_shape(b.shape()));
  bool tracked = detail::record<Real>({&a, &b});
  auto out = detail::result_like<Real>(a.shape(), {&a, &b}, tracked);
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (tracked) {
    out.node()->backprop = [](TensorNode<Real>& self) {
      for (auto& p : self.parents) {
        if (!p->requires_grad) continue;
        p->ensure_grad();
        for (std::size_t i = 0; i < self.size(); ++i)
          p->grad[i] += self.grad[i];
      }
    };
  }
  return out;
}

// a(n x d) + row(d), broadcast over rows
template <class Real>
Tensor<Real> add_row(const Tensor<Real>& a, const Tensor<Real>& row) {
  if (a.shape().size() != 2 || row.size() != a.cols())
    throw ShapeError("add_row: " + format_shape(a.shape()) + " + " +
                     format_shape(row.shape()));
  bool tracked = detail::record<Real>({&a, &row});
  auto out = detail::result_like<Real>(a.shape(), {&a, &row}, tracked);
  const std::size_t n = a.rows(), d = a.cols();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      out.data()[i * d + j] = a.data()[i * d + j] + row.data()[j];
  if (tracked) {
    out.node()->backprop = [n, d](TensorNode<Real>& self) {
      auto& pa = *self.parents[0];
      auto& pr = *self.parents[1];
      if (pa.requires_grad) {
        pa.ensure_grad();
        for (std::size_t i = 0; i < n * d; ++i) pa.grad[i] += self.grad[i];
      }
      if (pr.requires_grad) {
        pr.ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j)
            pr.grad[j] += self.grad[i * d + j];
      }
    };
  }
  return out;
}

template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("mul: shape mismatch " + format_shape(a.shape()) +
                     " vs " + format_shape(b.shape()));
  bool tracked = detail::record<Real>({&a, &b});
  auto out = detail::result_like<Real>(a.shape(), {&a, &b}, tracked);
  for (std::size_t i = 0; i < a.size(); ++i)
    out.data()[i] = a.data()[i] * b.data()[i];
  if (tracked) {
    out.node()->backprop = [](TensorNode<Real>& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      if (pa.requires_grad) {
        pa.ensure_grad();
        for (std::size_t i = 0; i < self.size(); ++i)
          pa.grad[i] += self.grad[i] * pb.value[i];
      }
      if (pb.requires_grad) {
        pb.ensure_grad();
        for (std::size_t i = 0; i < self.size(); ++i)
          pb.grad[i] += self.grad[i] * pa.value[i];
      }
    };
  }
  return out;
}

template <class Real>
Tensor<Real> scale(const Tensor<Real>& a, Real c) {
  bool tracked = detail::record<Real>({&a});
  auto out = detail::result_like<Real>(a.shape(), {&a}, tracked);
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * c;
  if (tracked) {
    out.node()->backprop = [c](TensorNode<Real>& self) {
      auto& pa = *self.parents[0];
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.size(); ++i)
        pa.grad[i] += self.grad[i] * c;
    };
  }
  return out;
}

template <class Real>
Tensor<Real> sum(const Tensor<Real>& a) {
  bool tracked = detail::record<Real>({&a});
  auto out = detail::result_like<Real>({1}, {&a}, tracked);
  Real acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a.data()[i];
  out.data()[0] = acc;
  if (tracked) {
    out.node()->backprop = [](TensorNode<Real>& self) {
      auto& pa = *self.parents[0];
      pa.ensure_grad();
      for (std::size_t i = 0; i < pa.grad.size(); ++i)
        pa.grad[i] += self.grad[0];
    };
  }
  return out;
}

namespace detail {
template <class Real>
struct GeluConst {
  static constexpr Real alpha = Real(0.7978845608028653559);  // sqrt(2/pi)
  static constexpr Real cubic = Real(0.044715);
};
}  // namespace detail

// tanh-approximation GELU, the GPT-2 activation
template <class Real>
Tensor<Real> gelu(const Tensor<Real>& a) {
  constexpr Real kAlpha = detail::GeluConst<Real>::alpha;
  constexpr Real kCubic = detail::GeluConst<Real>::cubic;
  bool tracked = detail::record<Real>({&a});
  auto out = detail::result_like<Real>(a.shape(), {&a}, tracked);
  for (std::size_t i = 0; i < a.size(); ++i) {
    Real x = a.data()[i];
    Real t = std::tanh(kAlpha * (x + kCubic * x * x * x));
    out.data()[i] = Real(0.5) * x * (Real(1) + t);
  }
  if (tracked) {
    out.node()->backprop = [](TensorNode<Real>& self) {
      constexpr Real al = detail::GeluConst<Real>::alpha;
      constexpr Real cu = detail::GeluConst<Real>::cubic;
      auto& pa = *self.parents[0];
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.size(); ++i) {
        Real x = pa.value[i];
        Real t = std::tanh(al * (x + cu * x * x * x));
        Real du = al * (Real(1) + Real(3) * cu * x * x);
        Real dy = Real(0.5) * (Real(1) + t) +
                  Real(0.5) * x * (Real(1) - t * t) * du;
        pa.grad[i] += self.grad[i] * dy;
      }
    };
  }
  return out;
}

// Max-shifted softmax along `axis`.
template <class Real>
Tensor<Real> softmax(const Tensor<Real>& a, std::size_t axis) {
  if (axis >= a.shape().size())
    throw ShapeError("softmax: axis " + std::to_string(axis) +
                     " out of range for shape " + format_shape(a.shape()));
  std::size_t lane = a.shape()[axis];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < a.shape().size(); ++i)
    inner *= a.shape()[i];
  std::size_t outer = a.size() / (lane * inner);
  bool tracked = detail::record<Real>({&a});
  auto out = detail::result_like<Real>(a.shape(), {&a}, tracked);
  auto for_each_lane = [=](const Real* src, Real* dst) {
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const Real* x = src + o * lane * inner + in;
        Real* y = dst + o * lane * inner + in;
        Real mx = x[0];
        for (std::size_t l = 1; l < lane; ++l)
          mx = std::max(mx, x[l * inner]);
        Real z = 0;
        for (std::size_t l = 0; l < lane; ++l) {
          Real e = std::exp(x[l * inner] - mx);
          y[l * inner] = e;
          z += e;
        }
        Real invz = Real(1) / z;
        for (std::size_t l = 0; l < lane; ++l) y[l * inner] *= invz;
      }
    }
  };
  for_each_lane(a.data(), out.data());
  if (tracked) {
    out.node()->backprop = [lane, inner, outer](TensorNode<Real>& self) {
      auto& pa = *self.parents[0];
      pa.ensure_grad();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const Real* p = self.value.data() + o * lane * inner + in;
          const Real* g = self.grad.data() + o * lane * inner + in;
          Real* dx = pa.grad.data() + o * lane * inner + in;
          Real dot = 0;
          for (std::size_t l = 0; l < lane; ++l)
            dot += g[l * inner] * p[l * inner];
          for (std::size_t l = 0; l < lane; ++l)
            dx[l * inner] += p[l * inner] * (g[l * inner] - dot);
        }
      }
    };
  }
  return out;
}

// Per-row normalization over the last axis of a 2-D tensor, then affine.
template <class Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gain,
                        const Tensor<Real>& bias, Real eps = Real(1e-5)) {
  if (x.shape().size() != 2)
    throw ShapeError("layer_norm: expected 2-D input, got " +
                     format_shape(x.shape()));
  const std::size_t n = x.rows(), d = x.cols();
  if (gain.size() != d || bias.size() != d)
    throw ShapeError("layer_norm: gain/bias " + format_shape(gain.shape()) +
                     "/" + format_shape(bias.shape()) +
                     " do not match last extent of " + format_shape(x.shape()));
  bool tracked = detail::record<Real>({&x, &gain, &bias});
  auto out = detail::result_like<Real>(x.shape(), {&x, &gain, &bias}, tracked);
  std::vector<Real> inv_sd(n), norm;
  if (tracked) norm.resize(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    const Real* row = x.data() + i * d;
    Real mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= Real(d);
    Real var = 0;
    for (std::size_t j = 0; j < d; ++j) {
      Real c = row[j] - mu;
      var += c * c;
    }
    var /= Real(d);
    Real isd = Real(1) / std::sqrt(var + eps);
    inv_sd[i] = isd;
    Real* yrow = out.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) {
      Real nj = (row[j] - mu) * isd;
      if (tracked) norm[i * d + j] = nj;
      yrow[j] = gain.data()[j] * nj + bias.data()[j];
    }
  }
  if (tracked) {
    out.node()->backprop = [n, d, inv_sd = std::move(inv_sd),
                            norm = std::move(norm)](TensorNode<Real>& self) {
      auto& px = *self.parents[0];
      auto& pg = *self.parents[1];
      auto& pb = *self.parents[2];
      if (pg.requires_grad) pg.ensure_grad();
      if (pb.requires_grad) pb.ensure_grad();
      if (px.requires_grad) px.ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        const Real* go = self.grad.data() + i * d;
        const Real* nr = norm.data() + i * d;
        if (pg.requires_grad)
          for (std::size_t j = 0; j < d; ++j) pg.grad[j] += go[j] * nr[j];
        if (pb.requires_grad)
          for (std::size_t j = 0; j < d; ++j) pb.grad[j] += go[j];
        if (px.requires_grad) {
          // dnorm = go * gain; dx = (dnorm - mean(dnorm) - n*mean(dnorm*n))*isd
          Real mean_dn = 0, mean_dnn = 0;
          for (std::size_t j = 0; j < d; ++j) {
            Real dn = go[j] * pg.value[j];
            mean_dn += dn;
            mean_dnn += dn * nr[j];
          }
          mean_dn /= Real(d);
          mean_dnn /= Real(d);
          Real* dx = px.grad.data() + i * d;
          for (std::size_t j = 0; j < d; ++j) {
            Real dn = go[j] * pg.value[j];
            dx[j] += (dn - mean_dn - nr[j] * mean_dnn) * inv_sd[i];
          }
        }
      }
    };
  }
  return out;
}

// Row gather: out[i, :] = table[ids[i], :]
template <class Real>
Tensor<Real> embedding(const Tensor<Real>& table,
                       const std::vector<int>& ids) {
  if (table.shape().size() != 2)
    throw ShapeError("embedding: table must be 2-D, got " +
                     format_shape(table.shape()));
  const std::size_t v = table.rows(), d = table.cols();
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= v)
      throw IndexError("embedding: id " + std::to_string(id) +
                       " out of range [0," + std::to_string(v) + ")");
  bool tracked = detail::record<Real>({&table});
  auto out = detail::result_like<Real>({ids.size(), d}, {&table}, tracked);
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::memcpy(out.data() + i * d, table.data() + std::size_t(ids[i]) * d,
                d * sizeof(Real));
  if (tracked) {
    out.node()->backprop = [ids, d](TensorNode<Real>& self) {
      auto& pt = *self.parents[0];
      pt.ensure_grad();
      for (std::size_t i = 0; i < ids.size(); ++i) {
        Real* dst = pt.grad.data() + std::size_t(ids[i]) * d;
        const Real* src = self.grad.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    };
  }
  return out;
}

// Mean negative log-softmax of the target entries (natural log).
template <class Real>
Tensor<Real> cross_entropy(const Tensor<Real>& logits,
                           const std::vector<int>& targets) {
  if (logits.shape().size() != 2 || logits.rows() != targets.size())
    throw ShapeError("cross_entropy: logits " + format_shape(logits.shape()) +
                     " vs " + std::to_string(targets.size()) + " targets");
  const std::size_t n = logits.rows(), v = logits.cols();
  for (int t : targets)
    if (t < 0 || static_cast<std::size_t>(t) >= v)
      throw IndexError("cross_entropy: target " + std::to_string(t) +
                       " out of range [0," + std::to_string(v) + ")");
  bool tracked = detail::record<Real>({&logits});
  auto out = detail::result_like<Real>({1}, {&logits}, tracked);
  std::vector<Real> probs;
  if (tracked) probs.resize(n * v);
  Real loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Real* row = logits.data() + i * v;
    Real mx = row[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    Real z = 0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
    Real logz = std::log(z) + mx;
    loss += logz - row[std::size_t(targets[i])];
    if (tracked) {
      Real invz = Real(1) / z;
      for (std::size_t j = 0; j < v; ++j)
        probs[i * v + j] = std::exp(row[j] - mx) * invz;
    }
  }
  out.data()[0] = loss / Real(n);
  if (tracked) {
    out.node()->backprop = [n, v, targets,
                            probs = std::move(probs)](TensorNode<Real>& self) {
      auto& pl = *self.parents[0];
      pl.ensure_grad();
      Real g = self.grad[0] / Real(n);
      for (std::size_t i = 0; i < n; ++i) {
        Real* dst = pl.grad.data() + i * v;
        const Real* p = probs.data() + i * v;
        for (std::size_t j = 0; j < v; ++j) dst[j] += g * p[j];
        dst[std::size_t(targets[i])] -= g;
      }
    };
  }
  return out;
}

template <class Real>
Tensor<Real> slice_cols(const Tensor<Real>& a, std::size_t c0,
                        std::size_t c1) {
  if (a.shape().size() != 2 || c0 >= c1 || c1 > a.cols())
    throw ShapeError("slice_cols: [" + std::to_string(c0) + "," +
                     std::to_string(c1) + ") invalid for " +
                     format_shape(a.shape()));
  const std::size_t n = a.rows(), d = a.cols(), w = c1 - c0;
  bool tracked = detail::record<Real>({&a});
  auto out = detail::result_like<Real>({n, w}, {&a}, tracked);
  for (std::size_t i = 0; i < n; ++i)
    std::memcpy(out.data() + i * w, a.data() + i * d + c0, w * sizeof(Real));
  if (tracked) {
    out.node()->backprop = [n, d, w, c0](TensorNode<Real>& self) {
      auto& pa = *self.parents[0];
      pa.ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        Real* dst = pa.grad.data() + i * d + c0;
        const Real* src = self.grad.data() + i * w;
        for (std::size_t j = 0; j < w; ++j) dst[j] += src[j];
      }
    };
  }
  return out;
}

template <class Real>
Tensor<Real> slice_rows(const Tensor<Real>& a, std::size_t r0,
                        std::size_t r1) {
  if (a.shape().size() != 2 || r0 >= r1 || r1 > a.rows())
    throw ShapeError("slice_rows: [" + std::to_string(r0) + "," +
                     std::to_string(r1) + ") invalid for " +
                     format_shape(a.shape()));
  const std::size_t d = a.cols(), h = r1 - r0;
  bool tracked = detail::record<Real>({&a});
  auto out = detail::result_like<Real>({h, d}, {&a}, tracked);
  std::memcpy(out.data(), a.data() + r0 * d, h * d * sizeof(Real));
  if (tracked) {
    out.node()->backprop = [d, h, r0](TensorNode<Real>& self) {
      auto& pa = *self.parents[0];
      pa.ensure_grad();
      Real* dst = pa.grad.data() + r0 * d;
      for (std::size_t i = 0; i < h * d; ++i) dst[i] += self.grad[i];
    };
  }
  return out;
}

template <class Real>
Tensor<Real> concat_cols(const std::vector<Tensor<Real>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t n = parts[0].rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.shape().size() != 2 || p.rows() != n)
      throw ShapeError("concat_cols: row mismatch " +
                       format_shape(parts[0].shape()) + " vs " +
                       format_shape(p.shape()));
    total += p.cols();
  }
  bool tracked = false;
  if (!NoGrad::active())
    for (const auto& p : parts) tracked = tracked || p.requires_grad();
  auto out = Tensor<Real>::zeros({n, total}, false);
  if (tracked) {
    out.node()->requires_grad = true;
    for (const auto& p : parts) out.node()->parents.push_back(p.node());
  }
  std::vector<std::size_t> widths;
  widths.reserve(parts.size());
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    widths.push_back(w);
    for (std::size_t i = 0; i < n; ++i)
      std::memcpy(out.data() + i * total + off, p.data() + i * w,
                  w * sizeof(Real));
    off += w;
  }
  if (tracked) {
    out.node()->backprop = [n, total, widths](TensorNode<Real>& self) {
      std::size_t off = 0;
      for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
        auto& p = *self.parents[pi];
        const std::size_t w = widths[pi];
        if (p.requires_grad) {
          p.ensure_grad();
          for (std::size_t i = 0; i < n; ++i) {
            Real* dst = p.grad.data() + i * w;
            const Real* src = self.grad.data() + i * total + off;
            for (std::size_t j = 0; j < w; ++j) dst[j] += src[j];
          }
        }
        off += w;
      }
    };
  }
  return out;
}

// Inverted dropout; identity when !training. Mask is drawn from `rng`.
template <class Real>
Tensor<Real> dropout(const Tensor<Real>& a, Real p, std::mt19937_64& rng,
                     bool training) {
  if (!training || p <= Real(0)) return a;
  if (p >= Real(1))
    throw ConfigError("dropout: probability must be < 1, got " +
                      std::to_string(double(p)));
  bool tracked = detail::record<Real>({&a});
  auto out = detail::result_like<Real>(a.shape(), {&a}, tracked);
  std::vector<Real> mask(a.size());
  std::uniform_real_distribution<Real> u(Real(0), Real(1));
  const Real keep = Real(1) - p;
  for (std::size_t i = 0; i < a.size(); ++i)
    mask[i] = u(rng) < p ? Real(0) : Real(1) / keep;
  for (std::size_t i = 0; i < a.size(); ++i)
    out.data()[i] = a.data()[i] * mask[i];
  if (tracked) {
    out.node()->backprop = [mask = std::move(mask)](TensorNode<Real>& self) {
      auto& pa = *self.parents[0];
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.size(); ++i)
        pa.grad[i] += self.grad[i] * mask[i];
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tape: reverse topological traversal of the recorded graph.
// ---------------------------------------------------------------------------

template <class Real>
class Tape {
 public:
  explicit Tape(const Tensor<Real>& root) {
    // Iterative post-order DFS; order_ ends child-before-parent, so the
    // reverse walk in backward() visits each node exactly once, parents after
    // all of their consumers.
    std::vector<std::pair<TensorNode<Real>*, std::size_t>> stack;
    std::unordered_set<TensorNode<Real>*> visited;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
      auto& [node, idx] = stack.back();
      if (idx < node->parents.size()) {
        TensorNode<Real>* parent = node->parents[idx++].get();
        if (visited.insert(parent).second) stack.emplace_back(parent, 0);
      } else {
        order_.push_back(node);
        stack.pop_back();
      }
    }
  }

  const std::vector<TensorNode<Real>*>& order() const { return order_; }

  // Seeds the root gradient with 1 and propagates. Leaf (parameter/input)
  // gradients accumulate across calls; interior gradients are reset per call.
  void backward() {
    for (auto* n : order_)
      if (!n->is_leaf()) n->grad.assign(n->value.size(), Real(0));
    TensorNode<Real>* root = order_.back();
    root->ensure_grad();
    std::fill(root->grad.begin(), root->grad.end(), Real(1));
    for (auto it = order_.rbegin(); it != order_.rend(); ++it)
      if ((*it)->backprop) (*it)->backprop(**it);
  }

 private:
  std::vector<TensorNode<Real>*> order_;
};

template <class Real>
void backward(const Tensor<Real>& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw ContractError("backward: loss must be a scalar tensor, got " +
                        (loss.defined() ? format_shape(loss.shape())
                                        : std::string("undefined")));
  Tape<Real>(loss).backward();
}

}  // namespace lgpt
