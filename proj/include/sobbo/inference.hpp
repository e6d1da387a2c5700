#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sobbo/adam.hpp"
#include "sobbo/dataset.hpp"
#include "sobbo/mlp.hpp"
#include "sobbo/problems.hpp"
#include "sobbo/rng.hpp"

namespace sobbo {

enum class EstimatorKind { etd, dgi };

/// A trained model plus the dataset's x pool (no access to extra data).
struct GradientEstimator {
  EstimatorKind kind = EstimatorKind::etd;
  MlpModel model;
  Tensor x_pool;  // [n x d_x]
  std::size_t d_theta = 0;

  void validate() const {
    if (x_pool.rank() != 2 || x_pool.shape[0] == 0)
      throw config_error("estimator: x_pool must be a nonempty [n x d_x] matrix");
    const std::size_t d = d_theta + x_pool.shape[1];
    if (model.spec.input_dim != d) throw config_error("estimator: model input_dim mismatch");
    if (kind == EstimatorKind::etd && model.spec.output_dim != 1)
      throw config_error("estimator: ETD needs a surrogate model");
    if (kind == EstimatorKind::dgi && model.spec.output_dim != d)
      throw config_error("estimator: DGI needs a field model");
  }
};

inline GradientEstimator make_estimator(EstimatorKind kind, MlpModel model,
                                        const OfflineDataset& ds) {
  GradientEstimator est;
  est.kind = kind;
  est.model = std::move(model);
  est.d_theta = ds.d_theta;
  est.x_pool = Tensor::zeros({ds.size(), ds.d_x});
  std::copy(ds.xs.begin(), ds.xs.end(), est.x_pool.data.begin());
  est.validate();
  return est;
}

namespace detail {

inline Tensor gather_rows(const Tensor& pool, std::span<const std::size_t> idx) {
  const std::size_t d = pool.shape[1];
  Tensor out = Tensor::zeros({idx.size(), d});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= pool.shape[0]) throw config_error("x subset index out of range");
    std::copy(pool.data.begin() + idx[r] * d, pool.data.begin() + (idx[r] + 1) * d,
              out.data.begin() + r * d);
  }
  return out;
}

}  // namespace detail

/// ETD-style estimate through an arbitrary tape surrogate: the theta-gradient
/// of the mean surrogate value over the x rows.
template <class Surrogate>
std::vector<double> etd_gradient_with(Tape& t, const Surrogate& surrogate,
                                      std::span<const double> theta, const Tensor& x_rows) {
  const std::size_t m = x_rows.shape[0];
  NodeId th = t.leaf(Tensor::vector(std::vector<double>(theta.begin(), theta.end())));
  NodeId rows = t.concat2(t.broadcast_rows(th, m), t.constant(x_rows), 1);
  NodeId out = surrogate.eval(t, rows);  // [m x 1]
  NodeId avg = t.mean(out);
  NodeId g = backward_nodes(t, avg, std::array<NodeId, 1>{th}).at(th);
  return t.val(g).data;
}

/// DGI-style estimate through an arbitrary batch field evaluator: the mean of
/// the first d_theta field outputs over the x rows (pure forward pass).
template <class FieldEval>
std::vector<double> dgi_gradient_with(FieldEval&& field, std::span<const double> theta,
                                      const Tensor& x_rows, std::size_t d_theta) {
  const std::size_t m = x_rows.shape[0], d_x = x_rows.shape[1];
  Tensor rows = Tensor::zeros({m, d_theta + d_x});
  for (std::size_t r = 0; r < m; ++r) {
    std::copy(theta.begin(), theta.end(), rows.data.begin() + r * (d_theta + d_x));
    std::copy(x_rows.data.begin() + r * d_x, x_rows.data.begin() + (r + 1) * d_x,
              rows.data.begin() + r * (d_theta + d_x) + d_theta);
  }
  Tensor h = field(rows);  // [m x d]
  std::vector<double> g(d_theta, 0.0);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t i = 0; i < d_theta; ++i) g[i] += h(r, i);
  for (auto& v : g) v /= static_cast<double>(m);
  return g;
}

/// Gradient estimate at theta over a subset of the x pool. ETD averages the
/// surrogate's theta-gradient (reverse pass); DGI averages the first d_theta
/// field outputs (forward only).
inline std::vector<double> estimate_gradient(const GradientEstimator& est,
                                             std::span<const double> theta,
                                             std::span<const std::size_t> x_subset) {
  if (theta.size() != est.d_theta) throw shape_error("estimate_gradient: theta dimension mismatch");
  if (x_subset.empty()) throw config_error("estimate_gradient: empty x subset");
  Tensor x_rows = detail::gather_rows(est.x_pool, x_subset);
  if (est.kind == EstimatorKind::etd) {
    Tape t;
    auto attached = attach_model_frozen(t, est.model);
    return etd_gradient_with(t, attached, theta, x_rows);
  }
  return dgi_gradient_with([&](const Tensor& rows) { return forward_plain(est.model, rows); },
                           theta, x_rows, est.d_theta);
}

// ---------------------------------------------------------------------------
// Gradient-quality metrics
// ---------------------------------------------------------------------------

/// Standard dot-product cosine; empty when either vector is numerically zero
/// (undefined direction, reported as missing and excluded from means).
inline std::optional<double> cosine_similarity(std::span<const double> a,
                                               std::span<const double> b) {
  if (a.size() != b.size()) throw shape_error("cosine_similarity: dimension mismatch");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na <= 0 || nb <= 0) return std::nullopt;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline double norm_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw shape_error("norm_distance: dimension mismatch");
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(acc);
}

struct GradientEvalRow {
  double mean_cos_sim = std::numeric_limits<double>::quiet_NaN();
  double mean_norm_dist = 0.0;
  std::size_t evaluated = 0;
  std::size_t missing_cos = 0;  // zero-gradient probes excluded from the mean
};

/// Mean cosine similarity and norm distance over freshly sampled designs,
/// each compared against the true-gradient oracle on the same x subset.
inline GradientEvalRow evaluate_gradients(const GradientEstimator& est, const ProblemSpec& spec,
                                          std::size_t n_thetas, std::size_t x_subset_size,
                                          Rng& rng) {
  if (n_thetas < 1) throw config_error("evaluate_gradients: n_thetas must be >= 1");
  if (x_subset_size < 1) throw config_error("evaluate_gradients: x_subset_size must be >= 1");
  const std::size_t pool = est.x_pool.shape[0];
  GradientEvalRow row;
  double cos_acc = 0.0, norm_acc = 0.0;
  std::size_t cos_n = 0;
  std::vector<double> theta(est.d_theta);
  for (std::size_t q = 0; q < n_thetas; ++q) {
    for (std::size_t i = 0; i < est.d_theta; ++i)
      theta[i] = rng.uniform(spec.theta_domain.lo[i], spec.theta_domain.hi[i]);
    std::vector<std::size_t> idx(std::min(x_subset_size, pool));
    for (auto& v : idx) v = rng.uniform_index(pool);
    const auto estimate = estimate_gradient(est, theta, idx);
    const Tensor x_rows = detail::gather_rows(est.x_pool, idx);
    const auto oracle = eval_true_gradient(spec, theta, x_rows);
    norm_acc += norm_distance(estimate, oracle);
    if (auto c = cosine_similarity(estimate, oracle)) {
      cos_acc += *c;
      ++cos_n;
    } else {
      ++row.missing_cos;
    }
  }
  row.evaluated = n_thetas;
  row.mean_norm_dist = norm_acc / static_cast<double>(n_thetas);
  if (cos_n > 0) row.mean_cos_sim = cos_acc / static_cast<double>(cos_n);
  return row;
}

// ---------------------------------------------------------------------------
// Design optimization
// ---------------------------------------------------------------------------

struct InferenceConfig {
  enum class Init { random, greedy };  // R / G
  Init init = Init::random;
  std::size_t gd_steps = 200;
  double gd_lr = 0.01;
  std::size_t x_subset_size = 0;  // 0: the whole pool, per the SAA estimator
  std::size_t true_value_samples = 10000;
};

inline std::size_t greedy_index(const OfflineDataset& ds) {
  if (ds.size() == 0) throw config_error("greedy_index: empty dataset");
  std::size_t best = 0;
  for (std::size_t k = 1; k < ds.size(); ++k)
    if (ds.ys[k] < ds.ys[best]) best = k;
  return best;
}

struct OptimizationEntry {
  std::string method;
  double mean_true_value = 0.0;
  std::vector<double> attempt_values;
};

/// M attempts of projected Adam ascent down the estimated gradient, each
/// scored by the Monte Carlo true value of its final design. R starts from a
/// uniformly drawn dataset design; G starts from the design with the smallest
/// observed y, with attempt j perturbed by uniform noise of radius
/// 0.01 * j / M (attempt 0 is the exact greedy point).
inline OptimizationEntry optimize_design(const GradientEstimator& est, const OfflineDataset& ds,
                                         const ProblemSpec& spec, const InferenceConfig& cfg,
                                         std::size_t attempts, Rng& rng) {
  if (attempts < 1) throw config_error("optimize_design: attempts must be >= 1");
  if (cfg.gd_steps < 1) throw config_error("optimize_design: gd_steps must be >= 1");
  OptimizationEntry entry;
  entry.method = std::string(est.kind == EstimatorKind::etd ? "etd" : "dgi") +
                 (cfg.init == InferenceConfig::Init::random ? "(R)" : "(G)");

  const std::size_t pool = est.x_pool.shape[0];
  const bool full_pool = cfg.x_subset_size == 0;
  std::vector<std::size_t> idx(full_pool ? pool : std::min(cfg.x_subset_size, pool));
  if (full_pool)
    for (std::size_t i = 0; i < pool; ++i) idx[i] = i;
  const std::size_t greedy = greedy_index(ds);

  for (std::size_t j = 0; j < attempts; ++j) {
    std::vector<double> theta(est.d_theta);
    if (cfg.init == InferenceConfig::Init::random) {
      const std::size_t k = rng.uniform_index(ds.size());
      auto row = ds.theta_row(k);
      std::copy(row.begin(), row.end(), theta.begin());
    } else {
      auto row = ds.theta_row(greedy);
      std::copy(row.begin(), row.end(), theta.begin());
      const double radius = 0.01 * static_cast<double>(j) / static_cast<double>(attempts);
      for (std::size_t i = 0; i < theta.size(); ++i) {
        if (j > 0) theta[i] += rng.uniform(-radius, radius);
        theta[i] = spec.theta_domain.clamp(i, theta[i]);
      }
    }

    if (!full_pool)
      for (auto& v : idx) v = rng.uniform_index(pool);

    Tensor p = Tensor::vector(theta);
    AdamState opt = AdamState::zeros_like({&p});
    for (std::size_t s = 0; s < cfg.gd_steps; ++s) {
      const auto g = estimate_gradient(est, p.data, idx);
      Tensor gt = Tensor::vector(g);
      adam_step({&p}, {&gt}, opt, cfg.gd_lr);
      for (std::size_t i = 0; i < p.numel(); ++i) p.data[i] = spec.theta_domain.clamp(i, p.data[i]);
    }

    Rng value_rng(rng.next_u64());
    entry.attempt_values.push_back(
        eval_true_value(spec, p.data, cfg.true_value_samples, value_rng).value);
  }
  double acc = 0.0;
  for (double v : entry.attempt_values) acc += v;
  entry.mean_true_value = acc / static_cast<double>(attempts);
  return entry;
}

/// Mean true value of M uniformly sampled designs.
inline OptimizationEntry baseline_random_search(const ProblemSpec& spec, std::size_t attempts,
                                                std::size_t true_value_samples, Rng& rng) {
  if (attempts < 1) throw config_error("baseline_random_search: attempts must be >= 1");
  OptimizationEntry entry;
  entry.method = "rs";
  std::vector<double> theta(spec.d_theta);
  for (std::size_t j = 0; j < attempts; ++j) {
    for (std::size_t i = 0; i < spec.d_theta; ++i)
      theta[i] = rng.uniform(spec.theta_domain.lo[i], spec.theta_domain.hi[i]);
    Rng value_rng(rng.next_u64());
    entry.attempt_values.push_back(
        eval_true_value(spec, theta, true_value_samples, value_rng).value);
  }
  double acc = 0.0;
  for (double v : entry.attempt_values) acc += v;
  entry.mean_true_value = acc / static_cast<double>(attempts);
  return entry;
}

/// The true value of the best design present in the dataset (not attainable
/// in practice; the observed y are noisy).
inline OptimizationEntry baseline_dataset_oracle(const OfflineDataset& ds, const ProblemSpec& spec,
                                                 std::size_t true_value_samples, Rng& rng) {
  if (ds.size() == 0) throw config_error("baseline_dataset_oracle: empty dataset");
  OptimizationEntry entry;
  entry.method = "oc";
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < ds.size(); ++k) {
    Rng value_rng(derive_seed(0x0C0C, k) ^ rng.next_u64());
    const double v = eval_true_value(spec, ds.theta_row(k), true_value_samples, value_rng).value;
    best = std::min(best, v);
  }
  entry.mean_true_value = best;
  entry.attempt_values = {best};
  return entry;
}

// ---------------------------------------------------------------------------
// Normalized scoring
// ---------------------------------------------------------------------------

struct NormalizedScore {
  double value = 0.0;
  bool absolute_mode = false;  // reference too close to zero; plain difference
};

/// (y - x*) / |x*| against the reference optimized value x*; falls back to
/// the absolute difference (flagged) when |x*| is numerically zero.
inline NormalizedScore normalize_score(double y, double reference) {
  NormalizedScore s;
  if (std::abs(reference) < 1e-9) {
    s.value = y - reference;
    s.absolute_mode = true;
  } else {
    s.value = (y - reference) / std::abs(reference);
  }
  return s;
}

/// Reference optimum for normalization: multistart projected Adam driven by
/// the true SAA gradient, final candidates scored by Monte Carlo true value.
inline double reference_optimum(const ProblemSpec& spec, std::size_t multistarts,
                                std::size_t gd_steps, double gd_lr, std::size_t grad_x_samples,
                                std::size_t true_value_samples, Rng& rng) {
  double best = std::numeric_limits<double>::infinity();
  std::vector<double> theta(spec.d_theta);
  for (std::size_t s0 = 0; s0 < multistarts; ++s0) {
    for (std::size_t i = 0; i < spec.d_theta; ++i)
      theta[i] = rng.uniform(spec.theta_domain.lo[i], spec.theta_domain.hi[i]);
    Tensor p = Tensor::vector(theta);
    AdamState opt = AdamState::zeros_like({&p});
    for (std::size_t s = 0; s < gd_steps; ++s) {
      Tensor xs = Tensor::zeros({grad_x_samples, spec.d_x});
      for (std::size_t r = 0; r < grad_x_samples; ++r)
        for (std::size_t i = 0; i < spec.d_x; ++i)
          xs(r, i) = rng.uniform(spec.x_domain.lo[i], spec.x_domain.hi[i]);
      const auto g = eval_true_gradient(spec, p.data, xs);
      Tensor gt = Tensor::vector(g);
      adam_step({&p}, {&gt}, opt, gd_lr);
      for (std::size_t i = 0; i < p.numel(); ++i) p.data[i] = spec.theta_domain.clamp(i, p.data[i]);
    }
    Rng value_rng(rng.next_u64());
    best = std::min(best, eval_true_value(spec, p.data, true_value_samples, value_rng).value);
  }
  return best;
}

}  // namespace sobbo
