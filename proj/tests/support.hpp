#pragma once

// Test-only numeric oracles. These deliberately avoid the library's autodiff
// and attention paths so they can serve as independent references.

#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <vector>

#include "lgpt/tensor.hpp"

namespace testsup {

// Relative error with a floor so near-zero gradients compare absolutely.
inline double rel_err(double a, double b, double floor = 1e-3) {
  double denom = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / denom;
}

// Central finite differences of a scalar-valued function with respect to
// every element of `param`, compared against `analytic`. Returns the max
// relative error over the checked indices (all indices when `sample` is 0).
template <class LossFn>
double max_fd_rel_err(LossFn&& loss, lgpt::Tensor<double>& param,
                      const std::vector<double>& analytic,
                      double h = 1e-5, std::size_t sample = 0,
                      std::uint64_t seed = 0) {
  std::vector<std::size_t> idx;
  if (sample == 0 || sample >= param.size()) {
    idx.resize(param.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  } else {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, param.size() - 1);
    for (std::size_t i = 0; i < sample; ++i) idx.push_back(pick(rng));
  }
  double worst = 0;
  for (std::size_t i : idx) {
    double saved = param.data()[i];
    param.data()[i] = saved + h;
    double fp = loss();
    param.data()[i] = saved - h;
    double fm = loss();
    param.data()[i] = saved;
    double fd = (fp - fm) / (2 * h);
    worst = std::max(worst, rel_err(analytic[i], fd));
  }
  return worst;
}

// Eigenvalues of a symmetric n x n matrix by cyclic Jacobi rotations,
// returned in descending order.
inline std::vector<double> sym_eigenvalues(std::vector<double> a,
                                           std::size_t n) {
  for (int sweep = 0; sweep < 60; ++sweep) {
    double off = 0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double apq = a[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        double app = a[p * n + p], aqq = a[q * n + q];
        double tau = (aqq - app) / (2 * apq);
        double t = (tau >= 0 ? 1.0 : -1.0) /
                   (std::abs(tau) + std::sqrt(1 + tau * tau));
        double c = 1 / std::sqrt(1 + t * t), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a[i * n + i];
  std::sort(ev.rbegin(), ev.rend());
  return ev;
}

// Singular values of a rows x cols matrix (descending), via the Gram matrix.
inline std::vector<double> singular_values(const double* a, std::size_t rows,
                                           std::size_t cols) {
  std::vector<double> gram(cols * cols, 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t p = 0; p < cols; ++p)
      for (std::size_t q = 0; q < cols; ++q)
        gram[p * cols + q] += a[i * cols + p] * a[i * cols + q];
  auto ev = sym_eigenvalues(std::move(gram), cols);
  std::vector<double> sv(cols);
  for (std::size_t i = 0; i < cols; ++i)
    sv[i] = std::sqrt(std::max(0.0, ev[i]));
  return sv;
}

template <class Real>
lgpt::Tensor<Real> random_tensor(lgpt::Shape shape, std::mt19937_64& rng,
                                 bool requires_grad = false,
                                 Real stddev = Real(1)) {
  return lgpt::Tensor<Real>::randn(std::move(shape), rng, stddev,
                                   requires_grad);
}

}  // namespace testsup
