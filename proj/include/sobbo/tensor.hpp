#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "sobbo/errors.hpp"

namespace sobbo {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

/// Dense row-major tensor of 64-bit reals. Rank 0 (scalar), 1, and 2 are the
/// shapes the engine works with.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != data.size())
      throw shape_error("tensor: shape " + shape_str(shape) + " does not match data length " +
                        std::to_string(data.size()));
  }

  static Tensor zeros(Shape s) {
    std::vector<double> d(shape_numel(s), 0.0);
    return Tensor(std::move(s), std::move(d));
  }
  static Tensor full(Shape s, double v) {
    std::vector<double> d(shape_numel(s), v);
    return Tensor(std::move(s), std::move(d));
  }
  static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }
  static Tensor vector(std::vector<double> d) {
    Shape s{d.size()};
    return Tensor(std::move(s), std::move(d));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> d) {
    return Tensor(Shape{rows, cols}, std::move(d));
  }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  bool is_scalar() const { return data.size() == 1; }
  std::size_t rows() const { return rank() == 2 ? shape[0] : (rank() == 1 ? shape[0] : 1); }
  std::size_t cols() const { return rank() == 2 ? shape[1] : 1; }

  double& operator()(std::size_t i) { return data[i]; }
  double operator()(std::size_t i) const { return data[i]; }
  double& operator()(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

  double value() const {
    if (!is_scalar()) throw shape_error("tensor: value() on non-scalar " + shape_str(shape));
    return data[0];
  }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

/// C = A * B for row-major rank-2 tensors, accumulating in ikj order.
inline void matmul_into(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  const double* __restrict pa = a.data.data();
  const double* __restrict pb = b.data.data();
  double* __restrict pc = c.data.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* __restrict ci = pc + i * n;
    for (std::size_t j = 0; j < n; ++j) ci[j] = 0.0;
    const double* ai = pa + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = ai[kk];
      const double* __restrict bk = pb + kk * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bk[j];
    }
  }
}

}  // namespace sobbo
