#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sobbo/rng.hpp"
#include "sobbo/tape.hpp"
#include "sobbo/tensor.hpp"

namespace sobbo {

enum class QuadRule { trapezoid, midpoint };

struct QuadratureSpec {
  std::size_t steps = 512;
  QuadRule rule = QuadRule::trapezoid;

  void validate() const {
    if (steps < 1) throw config_error("quadrature: steps must be >= 1");
  }
};

/// Per-coordinate polynomial curve r_i(t) = a_i0 + a_i1 t + ... + a_itau t^tau
/// with r(0) and r(1) pinned to the endpoints exactly.
struct PolynomialPath {
  std::size_t dim = 0;
  std::size_t degree = 1;            // tau
  std::vector<double> coeffs;        // dim x (tau+1), row i holds a_i0..a_itau

  double coeff(std::size_t i, std::size_t m) const { return coeffs[i * (degree + 1) + m]; }
  double& coeff(std::size_t i, std::size_t m) { return coeffs[i * (degree + 1) + m]; }

  std::vector<double> start() const {
    std::vector<double> s(dim);
    for (std::size_t i = 0; i < dim; ++i) s[i] = coeff(i, 0);
    return s;
  }
  std::vector<double> end() const {
    std::vector<double> e(dim, 0.0);
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t m = 0; m <= degree; ++m) e[i] += coeff(i, m);
    return e;
  }

  /// r(t), written into out (size dim). Horner evaluation.
  void eval(double t, std::span<double> out) const {
    for (std::size_t i = 0; i < dim; ++i) {
      double acc = coeff(i, degree);
      for (std::size_t m = degree; m-- > 0;) acc = acc * t + coeff(i, m);
      out[i] = acc;
    }
  }

  /// r'(t), analytic from the coefficients.
  void derivative(double t, std::span<double> out) const {
    for (std::size_t i = 0; i < dim; ++i) {
      double acc = static_cast<double>(degree) * coeff(i, degree);
      for (std::size_t m = degree; m-- > 1;) acc = acc * t + static_cast<double>(m) * coeff(i, m);
      out[i] = degree >= 1 ? acc : 0.0;
    }
  }

  /// The same curve traversed end-to-start: r~(t) = r(1 - t).
  PolynomialPath reversed() const {
    PolynomialPath p;
    p.dim = dim;
    p.degree = degree;
    p.coeffs.assign(dim * (degree + 1), 0.0);
    // binomial expansion of sum_k a_k (1-t)^k
    std::vector<std::vector<double>> binom(degree + 1, std::vector<double>(degree + 1, 0.0));
    for (std::size_t k = 0; k <= degree; ++k) {
      binom[k][0] = 1.0;
      for (std::size_t m = 1; m <= k; ++m)
        binom[k][m] = binom[k - 1][m - 1] + (m <= k - 1 ? binom[k - 1][m] : 0.0);
    }
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t k = 0; k <= degree; ++k)
        for (std::size_t m = 0; m <= k; ++m) {
          const double sign = (m % 2 == 0) ? 1.0 : -1.0;
          p.coeff(i, m) += coeff(i, k) * binom[k][m] * sign;
        }
    return p;
  }
};

inline PolynomialPath linear_path(std::span<const double> start, std::span<const double> end) {
  if (start.size() != end.size()) throw shape_error("linear_path: endpoint dimensions differ");
  PolynomialPath p;
  p.dim = start.size();
  p.degree = 1;
  p.coeffs.resize(p.dim * 2);
  for (std::size_t i = 0; i < p.dim; ++i) {
    p.coeff(i, 0) = start[i];
    p.coeff(i, 1) = end[i] - start[i];
  }
  return p;
}

/// Random degree-tau path: interior coefficients a_i1..a_i(tau-1) are drawn
/// i.i.d. uniform on [-1, 1]; the last coefficient closes the curve so that
/// r(1) hits the end point exactly. tau = 1 is the linear path and consumes
/// no randomness.
inline PolynomialPath sample_path(std::span<const double> start, std::span<const double> end,
                                  std::size_t tau, Rng& rng) {
  if (tau < 1) throw config_error("sample_path: degree must be >= 1");
  if (start.size() != end.size()) throw shape_error("sample_path: endpoint dimensions differ");
  PolynomialPath p;
  p.dim = start.size();
  p.degree = tau;
  p.coeffs.assign(p.dim * (tau + 1), 0.0);
  for (std::size_t i = 0; i < p.dim; ++i) {
    p.coeff(i, 0) = start[i];
    double interior = 0.0;
    for (std::size_t m = 1; m + 1 <= tau; ++m) {
      const double a = rng.uniform(-1.0, 1.0);
      p.coeff(i, m) = a;
      interior += a;
    }
    p.coeff(i, tau) = end[i] - start[i] - interior;
  }
  return p;
}

namespace detail {

inline void quad_nodes(const QuadratureSpec& q, std::vector<double>& ts, std::vector<double>& ws) {
  q.validate();
  const std::size_t k = q.steps;
  if (q.rule == QuadRule::trapezoid) {
    ts.resize(k + 1);
    ws.resize(k + 1);
    for (std::size_t m = 0; m <= k; ++m) {
      ts[m] = static_cast<double>(m) / static_cast<double>(k);
      ws[m] = (m == 0 || m == k) ? 0.5 / static_cast<double>(k) : 1.0 / static_cast<double>(k);
    }
  } else {
    ts.resize(k);
    ws.assign(k, 1.0 / static_cast<double>(k));
    for (std::size_t m = 0; m < k; ++m)
      ts[m] = (static_cast<double>(m) + 0.5) / static_cast<double>(k);
  }
}

}  // namespace detail

/// Composite quadrature of the line integral of a plain vector field along a
/// path. `field(point, out)` writes the field value at `point`.
template <class Field>
double path_integral(Field&& field, const PolynomialPath& path, const QuadratureSpec& quad) {
  std::vector<double> ts, ws;
  detail::quad_nodes(quad, ts, ws);
  std::vector<double> point(path.dim), vel(path.dim), fval(path.dim);
  double acc = 0.0;
  for (std::size_t m = 0; m < ts.size(); ++m) {
    path.eval(ts[m], point);
    path.derivative(ts[m], vel);
    field(std::span<const double>(point), std::span<double>(fval));
    double dot = 0.0;
    for (std::size_t i = 0; i < path.dim; ++i) {
      if (!std::isfinite(fval[i])) throw numeric_error("path_integral: non-finite field value");
      dot += fval[i] * vel[i];
    }
    acc += ws[m] * dot;
  }
  return acc;
}

/// Quadrature-node matrix for a batch of paths: all evaluation points stacked
/// into one [(P * nodes) x d] block, plus the matching weight-times-velocity
/// rows. A single field evaluation over the stack then yields every integral.
struct PathQuadBatch {
  std::size_t num_paths = 0;
  std::size_t nodes_per_path = 0;
  Tensor points;      // [(P*nodes) x d]
  Tensor weighted_v;  // [(P*nodes) x d], row = w_m * r'(t_m)
};

inline PathQuadBatch build_quad_batch(std::span<const PolynomialPath> paths,
                                      const QuadratureSpec& quad) {
  if (paths.empty()) throw config_error("build_quad_batch: no paths");
  std::vector<double> ts, ws;
  detail::quad_nodes(quad, ts, ws);
  const std::size_t d = paths[0].dim;
  const std::size_t nodes = ts.size();
  PathQuadBatch b;
  b.num_paths = paths.size();
  b.nodes_per_path = nodes;
  b.points = Tensor::zeros({paths.size() * nodes, d});
  b.weighted_v = Tensor::zeros({paths.size() * nodes, d});
  std::vector<double> point(d), vel(d);
  for (std::size_t p = 0; p < paths.size(); ++p) {
    if (paths[p].dim != d) throw shape_error("build_quad_batch: mixed path dimensions");
    for (std::size_t m = 0; m < nodes; ++m) {
      paths[p].eval(ts[m], point);
      paths[p].derivative(ts[m], vel);
      const std::size_t row = p * nodes + m;
      for (std::size_t i = 0; i < d; ++i) {
        b.points(row, i) = point[i];
        b.weighted_v(row, i) = ws[m] * vel[i];
      }
    }
  }
  return b;
}

/// Tape version over a batch of paths. `field_out` must be the field
/// evaluated on `points_node` (shape [(P*nodes) x d]); the result is the
/// vector node of per-path integrals, differentiable through the field.
inline NodeId path_integrals_from_field(Tape& t, const PathQuadBatch& b, NodeId field_out) {
  NodeId wv = t.constant(b.weighted_v);
  NodeId contrib = t.mul(field_out, wv);                          // [(P*nodes) x d]
  NodeId per_node = t.row_sum(contrib);                           // [P*nodes]
  NodeId grouped = t.reshape_to(per_node, {b.num_paths, b.nodes_per_path});
  return t.row_sum(grouped);                                      // [P]
}

}  // namespace sobbo
