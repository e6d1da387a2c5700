#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sobbo/dataset.hpp"
#include "sobbo/hash.hpp"
#include "sobbo/mlp.hpp"
#include "sobbo/rng.hpp"
#include "sobbo/tape.hpp"

namespace sobbo {

struct Box {
  std::vector<double> lo, hi;

  std::size_t dim() const { return lo.size(); }
  static Box uniform(std::size_t d, double l, double h) {
    Box b;
    b.lo.assign(d, l);
    b.hi.assign(d, h);
    return b;
  }
  void validate() const {
    if (lo.size() != hi.size()) throw config_error("box: bound arrays differ in length");
    for (std::size_t i = 0; i < lo.size(); ++i)
      if (!(lo[i] < hi[i]) || !std::isfinite(lo[i]) || !std::isfinite(hi[i]))
        throw config_error("box: bounds must be finite and ordered");
  }
  bool contains(std::span<const double> p, double tol = 0.0) const {
    for (std::size_t i = 0; i < dim(); ++i)
      if (p[i] < lo[i] - tol || p[i] > hi[i] + tol) return false;
    return true;
  }
  double clamp(std::size_t i, double v) const { return std::min(hi[i], std::max(lo[i], v)); }
};

enum class ProblemKind { closed_form, neural, simulator };
enum class ZLayout { theta_first, x_first };

inline std::string kind_name(ProblemKind k) {
  switch (k) {
    case ProblemKind::closed_form: return "closed_form";
    case ProblemKind::neural: return "neural";
    case ProblemKind::simulator: return "simulator";
  }
  return "?";
}

/// A ground-truth objective with its sampling domains and scaling constants.
/// Closed-form and neural objectives map unit-cube inputs through a declared
/// affine box and scale outputs so that E[g^2] is O(1); simulators work in
/// their natural units (identity scaling).
struct ProblemSpec {
  std::string name;
  std::size_t d_theta = 0;
  std::size_t d_x = 0;
  Box theta_domain, x_domain;  // sampling domains
  ProblemKind kind = ProblemKind::closed_form;
  ZLayout layout = ZLayout::x_first;
  Box canonical_box;        // per-z-coordinate affine target (closed_form / neural)
  double output_scale = 1;  // applied after raw_value
  nlohmann::json params;    // function constants, emitted with every dataset

  std::function<double(std::span<const double>)> raw_value;  // over canonical z
  std::function<void(std::span<const double>, std::span<double>)> raw_grad;  // dz gradient
  std::function<double(std::span<const double>, std::span<const double>, Rng&)> simulate;
  /// Optional override for the averaged theta-gradient (used by the neural
  /// objectives to batch their backward pass).
  std::function<std::vector<double>(std::span<const double>, const Tensor&)> grad_theta_saa;

  std::size_t sim_reps = 128;   // simulate() draws per expected-value estimate
  std::uint64_t sim_seed = 0;   // base for deterministic expectation substreams
  bool fd_gradient = false;     // simulator theta-gradient via CRN finite differences
  double fd_step = 1e-4;

  std::size_t d() const { return d_theta + d_x; }

  /// z in formula layout from (theta, x) in sampling coordinates.
  std::vector<double> assemble_z(std::span<const double> th, std::span<const double> x) const {
    std::vector<double> z;
    z.reserve(d());
    if (layout == ZLayout::theta_first) {
      z.insert(z.end(), th.begin(), th.end());
      z.insert(z.end(), x.begin(), x.end());
    } else {
      z.insert(z.end(), x.begin(), x.end());
      z.insert(z.end(), th.begin(), th.end());
    }
    return z;
  }

  std::size_t theta_offset_in_z() const { return layout == ZLayout::theta_first ? 0 : d_x; }

  std::vector<double> to_canonical(std::vector<double> z) const {
    for (std::size_t i = 0; i < z.size(); ++i)
      z[i] = canonical_box.lo[i] + (canonical_box.hi[i] - canonical_box.lo[i]) * z[i];
    return z;
  }

  nlohmann::json scaling_json() const {
    nlohmann::json j;
    j["canonical_lo"] = canonical_box.lo;
    j["canonical_hi"] = canonical_box.hi;
    j["output_scale"] = output_scale;
    return j;
  }
};

// ---------------------------------------------------------------------------
// Simulators
// ---------------------------------------------------------------------------

struct NewsvendorSettings {
  double alpha = 2.0;   // Burr XII shape
  double beta = 20.0;   // Burr XII shape
  double sell = 9.0;    // unit sale price
  double salvage = 1.0; // unit salvage price
};

/// Burr Type XII demand via inverse CDF: F(z) = 1 - (1 + z^alpha)^(-beta).
inline double burr12_demand(double alpha, double beta, double u) {
  return std::pow(std::pow(1.0 - u, -1.0 / beta) - 1.0, 1.0 / alpha);
}

/// One day's realized profit for order quantity theta at unit cost x.
inline double simulate_newsvendor(double theta, double x, const NewsvendorSettings& s, Rng& rng) {
  if (s.alpha <= 0 || s.beta <= 0) throw config_error("newsvendor: alpha and beta must be > 0");
  if (theta < 0) throw config_error("newsvendor: order quantity must be >= 0");
  const double demand = burr12_demand(s.alpha, s.beta, rng.uniform());
  const double sold = std::min(theta, demand);
  const double leftover = std::max(theta - demand, 0.0);
  return s.sell * sold + s.salvage * leftover - x * theta;
}

struct Mm1Settings {
  double penalty = 0.1;       // c in c * theta^2
  std::size_t warmup = 1000;  // customers discarded
  std::size_t horizon = 100000;
  bool allow_unstable = false;
};

/// Lindley-recursion M/M/1 sample: mean sojourn over the horizon after the
/// warmup, plus the service-rate penalty c * theta^2. Service rate theta,
/// arrival rate x; per customer one interarrival then one service draw.
inline double simulate_mm1(double theta, double x, const Mm1Settings& s, Rng& rng) {
  if (!(theta > 0) || !(x > 0)) throw config_error("mm1: rates must be > 0");
  if (theta <= x && !s.allow_unstable)
    throw numeric_error("mm1: unstable regime (theta <= x) without allow_unstable");
  double wait = 0.0;
  double prev_busy = 0.0;  // W_{n-1} + S_{n-1}
  double acc = 0.0;
  const std::size_t total = s.warmup + s.horizon;
  for (std::size_t n = 0; n < total; ++n) {
    const double inter = -std::log(1.0 - rng.uniform()) / x;
    const double service = -std::log(1.0 - rng.uniform()) / theta;
    // Lindley: W_n = max(0, W_{n-1} + S_{n-1} - A_n)
    if (n > 0) wait = std::max(0.0, prev_busy - inter);
    prev_busy = wait + service;
    if (n >= s.warmup) acc += wait + service;  // sojourn of customer n
  }
  return acc / static_cast<double>(s.horizon) + s.penalty * theta * theta;
}

struct SanTopology {
  std::size_t num_nodes = 0;
  std::vector<std::pair<std::size_t, std::size_t>> arcs;  // 0-based (src, dst)
};

/// The shipped 9-node, 13-arc activity network (nodes a..i as 0..8).
inline SanTopology default_san_topology() {
  SanTopology t;
  t.num_nodes = 9;
  t.arcs = {{0, 1}, {0, 2}, {1, 2}, {1, 3}, {1, 5}, {2, 5}, {3, 4},
            {4, 5}, {4, 6}, {4, 7}, {5, 7}, {6, 8}, {7, 8}};
  return t;
}

inline void save_san_topology(const std::string& path, const SanTopology& t) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw config_error("san: cannot open for write: " + path);
  f << "src,dst,arc_id\n";
  for (std::size_t i = 0; i < t.arcs.size(); ++i)
    f << t.arcs[i].first << "," << t.arcs[i].second << "," << i << "\n";
}

inline SanTopology load_san_topology(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw config_error("san: cannot open: " + path);
  std::string line;
  if (!std::getline(f, line) || line != "src,dst,arc_id")
    throw config_error("san: bad topology header in " + path);
  SanTopology t;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::size_t src = 0, dst = 0, id = 0;
    if (std::sscanf(line.c_str(), "%zu,%zu,%zu", &src, &dst, &id) != 3)
      throw config_error("san: bad topology row in " + path);
    t.arcs.emplace_back(src, dst);
    t.num_nodes = std::max({t.num_nodes, src + 1, dst + 1});
  }
  return t;
}

/// Longest source-to-sink path by dynamic programming in topological order.
inline double san_longest_path(const SanTopology& t, std::span<const double> durations) {
  if (durations.size() != t.arcs.size()) throw shape_error("san: one duration per arc required");
  // Kahn topological order over nodes.
  std::vector<std::size_t> indeg(t.num_nodes, 0);
  for (const auto& [s, d] : t.arcs) {
    if (s >= t.num_nodes || d >= t.num_nodes) throw config_error("san: arc endpoint out of range");
    ++indeg[d];
  }
  std::vector<std::size_t> order;
  order.reserve(t.num_nodes);
  std::vector<std::size_t> ready;
  for (std::size_t n = 0; n < t.num_nodes; ++n)
    if (indeg[n] == 0) ready.push_back(n);
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> out_arcs(t.num_nodes);
  for (std::size_t a = 0; a < t.arcs.size(); ++a) out_arcs[t.arcs[a].first].push_back({t.arcs[a].second, a});
  while (!ready.empty()) {
    const std::size_t n = ready.back();
    ready.pop_back();
    order.push_back(n);
    for (const auto& [d, a] : out_arcs[n])
      if (--indeg[d] == 0) ready.push_back(d);
  }
  if (order.size() != t.num_nodes) throw config_error("san: topology has a cycle");

  const double neg_inf = -std::numeric_limits<double>::infinity();
  std::vector<double> dist(t.num_nodes, neg_inf);
  dist[0] = 0.0;
  for (std::size_t n : order) {
    if (dist[n] == neg_inf) continue;
    for (const auto& [d, a] : out_arcs[n]) dist[d] = std::max(dist[d], dist[n] + durations[a]);
  }
  const double ans = dist[t.num_nodes - 1];
  if (ans == neg_inf) throw numeric_error("san: sink unreachable from source");
  return ans;
}

/// One objective sample: exponential task durations with means mu (theta
/// holds mu_1..mu_8, x holds mu_9..mu_13), longest path plus arc costs.
inline double simulate_san(std::span<const double> theta, std::span<const double> x,
                           const SanTopology& t, Rng& rng) {
  std::vector<double> mu;
  mu.reserve(theta.size() + x.size());
  mu.insert(mu.end(), theta.begin(), theta.end());
  mu.insert(mu.end(), x.begin(), x.end());
  if (mu.size() != t.arcs.size()) throw shape_error("san: need one mean per arc");
  double cost = 0.0;
  std::vector<double> durations(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) {
    if (mu[i] <= 0) throw config_error("san: means must be > 0");
    durations[i] = -mu[i] * std::log(1.0 - rng.uniform());
    cost += 1.0 / mu[i];
  }
  return san_longest_path(t, durations) + cost;
}

// ---------------------------------------------------------------------------
// Objective evaluation
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint64_t point_stream(const ProblemSpec& spec, std::span<const double> th,
                                  std::span<const double> x) {
  std::uint64_t h = hash_doubles(th, fnv1a64(spec.name));
  h = hash_doubles(x, h);
  return h ^ spec.sim_seed;
}

}  // namespace detail

/// Noiseless g(theta, x): the exact scaled formula for closed-form/neural
/// objectives, or a fixed-budget Monte Carlo estimate of the expected
/// simulator output (deterministic per input point).
inline double eval_objective(const ProblemSpec& spec, std::span<const double> th,
                             std::span<const double> x) {
  if (th.size() != spec.d_theta || x.size() != spec.d_x)
    throw shape_error("eval_objective: dimension mismatch for problem " + spec.name);
  if (spec.kind == ProblemKind::simulator) {
    Rng rng(detail::point_stream(spec, th, x));
    double acc = 0.0;
    for (std::size_t r = 0; r < spec.sim_reps; ++r) acc += spec.simulate(th, x, rng);
    const double v = acc / static_cast<double>(spec.sim_reps);
    if (!std::isfinite(v)) throw numeric_error("eval_objective: simulator returned non-finite value");
    return v;
  }
  const double v = spec.output_scale * spec.raw_value(spec.to_canonical(spec.assemble_z(th, x)));
  if (!std::isfinite(v)) throw numeric_error("eval_objective: non-finite value for " + spec.name);
  return v;
}

struct TrueValue {
  double value = 0.0;
  double std_error = 0.0;
};

/// Monte Carlo estimate of nu(theta) = E_X[g(theta, X)] over fresh x draws.
inline TrueValue eval_true_value(const ProblemSpec& spec, std::span<const double> th,
                                 std::size_t mc_samples, Rng& rng) {
  if (mc_samples < 1) throw config_error("eval_true_value: mc_samples must be >= 1");
  double mean = 0.0, m2 = 0.0;
  std::vector<double> x(spec.d_x);
  for (std::size_t s = 0; s < mc_samples; ++s) {
    for (std::size_t i = 0; i < spec.d_x; ++i)
      x[i] = rng.uniform(spec.x_domain.lo[i], spec.x_domain.hi[i]);
    const double v = eval_objective(spec, th, x);
    const double delta = v - mean;
    mean += delta / static_cast<double>(s + 1);
    m2 += delta * (v - mean);
  }
  TrueValue out;
  out.value = mean;
  out.std_error = mc_samples > 1
                      ? std::sqrt(m2 / static_cast<double>(mc_samples - 1) /
                                  static_cast<double>(mc_samples))
                      : 0.0;
  return out;
}

/// SAA theta-gradient (1/|X|) sum over the x rows of grad_theta g(theta, x).
/// Analytic for closed-form, batched reverse pass for neural, common-random-
/// number central differences for simulators when enabled.
inline std::vector<double> eval_true_gradient(const ProblemSpec& spec, std::span<const double> th,
                                              const Tensor& x_set) {
  if (x_set.rank() != 2 || x_set.shape[1] != spec.d_x)
    throw shape_error("eval_true_gradient: x_set must be [m x d_x]");
  const std::size_t m = x_set.shape[0];
  if (m == 0) throw config_error("eval_true_gradient: empty x set");

  if (spec.grad_theta_saa) return spec.grad_theta_saa(th, x_set);

  if (spec.kind == ProblemKind::simulator) {
    if (!spec.fd_gradient)
      throw config_error("eval_true_gradient: simulator " + spec.name +
                         " has no differentiable objective and fd_gradient is disabled");
    std::vector<double> g(spec.d_theta, 0.0);
    std::vector<double> tp(th.begin(), th.end());
    for (std::size_t r = 0; r < m; ++r) {
      std::span<const double> x(x_set.data.data() + r * spec.d_x, spec.d_x);
      for (std::size_t i = 0; i < spec.d_theta; ++i) {
        const double h = spec.fd_step;
        // common random numbers: the same substream on both sides
        const std::uint64_t stream = detail::point_stream(spec, th, x) ^ (0x9e37ULL * (i + 1));
        const double orig = tp[i];
        double plus = 0.0, minus = 0.0;
        tp[i] = orig + h;
        {
          Rng rng(stream);
          for (std::size_t q = 0; q < spec.sim_reps; ++q) plus += spec.simulate(tp, x, rng);
        }
        tp[i] = orig - h;
        {
          Rng rng(stream);
          for (std::size_t q = 0; q < spec.sim_reps; ++q) minus += spec.simulate(tp, x, rng);
        }
        tp[i] = orig;
        g[i] += (plus - minus) / (2.0 * h * static_cast<double>(spec.sim_reps));
      }
    }
    for (auto& v : g) v /= static_cast<double>(m);
    return g;
  }

  // closed-form: chain rule through the affine input map
  std::vector<double> g(spec.d_theta, 0.0);
  std::vector<double> zgrad(spec.d());
  const std::size_t off = spec.theta_offset_in_z();
  for (std::size_t r = 0; r < m; ++r) {
    std::span<const double> x(x_set.data.data() + r * spec.d_x, spec.d_x);
    const auto z = spec.to_canonical(spec.assemble_z(th, x));
    spec.raw_grad(z, zgrad);
    for (std::size_t i = 0; i < spec.d_theta; ++i) {
      const std::size_t zi = off + i;
      g[i] += spec.output_scale * zgrad[zi] * (spec.canonical_box.hi[zi] - spec.canonical_box.lo[zi]);
    }
  }
  for (auto& v : g) v /= static_cast<double>(m);
  return g;
}

// ---------------------------------------------------------------------------
// Noise calibration and dataset generation
// ---------------------------------------------------------------------------

struct NoiseModel {
  double target_s3nr = std::numeric_limits<double>::infinity();
  double sigma2 = 0.0;
  std::size_t estimation_samples = 0;
};

/// sigma^2 = E[g^2] / S3NR with E estimated over the sampling distribution.
/// An infinite target is the noiseless sentinel.
inline NoiseModel calibrate_noise(const ProblemSpec& spec, double target_s3nr,
                                  std::size_t samples, Rng& rng) {
  if (!(target_s3nr > 0)) throw config_error("calibrate_noise: target S3NR must be > 0");
  NoiseModel nm;
  nm.target_s3nr = target_s3nr;
  nm.estimation_samples = samples;
  if (std::isinf(target_s3nr)) {
    nm.sigma2 = 0.0;
    return nm;
  }
  double acc = 0.0;
  std::vector<double> th(spec.d_theta), x(spec.d_x);
  for (std::size_t s = 0; s < samples; ++s) {
    for (std::size_t i = 0; i < spec.d_theta; ++i)
      th[i] = rng.uniform(spec.theta_domain.lo[i], spec.theta_domain.hi[i]);
    for (std::size_t i = 0; i < spec.d_x; ++i)
      x[i] = rng.uniform(spec.x_domain.lo[i], spec.x_domain.hi[i]);
    const double g = eval_objective(spec, th, x);
    acc += g * g;
  }
  const double mean_sq = acc / static_cast<double>(samples);
  if (mean_sq < 1e-12)
    throw numeric_error("calibrate_noise: E[g^2] is degenerate for " + spec.name);
  nm.sigma2 = mean_sq / target_s3nr;
  return nm;
}

/// n i.i.d. records: theta, x uniform on their domains, y = g + N(0, sigma^2).
inline OfflineDataset generate_dataset(const ProblemSpec& spec, std::size_t n,
                                       const NoiseModel& noise, std::uint64_t seed) {
  if (n < 1) throw config_error("generate_dataset: n must be >= 1");
  OfflineDataset ds;
  ds.d_theta = spec.d_theta;
  ds.d_x = spec.d_x;
  Rng rng(seed);
  const double sigma = std::sqrt(noise.sigma2);
  std::vector<double> th(spec.d_theta), x(spec.d_x);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < spec.d_theta; ++i)
      th[i] = rng.uniform(spec.theta_domain.lo[i], spec.theta_domain.hi[i]);
    for (std::size_t i = 0; i < spec.d_x; ++i)
      x[i] = rng.uniform(spec.x_domain.lo[i], spec.x_domain.hi[i]);
    const double y = eval_objective(spec, th, x) + (sigma > 0 ? sigma * rng.normal() : 0.0);
    if (!std::isfinite(y)) throw numeric_error("generate_dataset: non-finite y");
    ds.thetas.insert(ds.thetas.end(), th.begin(), th.end());
    ds.xs.insert(ds.xs.end(), x.begin(), x.end());
    ds.ys.push_back(y);
  }
  ds.provenance["problem"] = spec.name;
  ds.provenance["seed"] = seed;
  ds.provenance["n"] = n;
  ds.provenance["s3nr"] = std::isinf(noise.target_s3nr) ? nlohmann::json("inf")
                                                        : nlohmann::json(noise.target_s3nr);
  ds.provenance["sigma2"] = noise.sigma2;
  ds.provenance["d_theta"] = spec.d_theta;
  ds.provenance["d_x"] = spec.d_x;
  ds.provenance["scaling"] = spec.scaling_json();
  ds.provenance["params"] = spec.params;
  return ds;
}

// ---------------------------------------------------------------------------
// Problem registry
// ---------------------------------------------------------------------------

inline constexpr std::uint64_t kDefaultProblemSeed = 0x50B0;

namespace detail {

/// Shared scaffold for the 6-d "z" benchmark functions: x = z[0..2],
/// theta = z[3..5], unit-cube sampling, declared canonical box.
inline ProblemSpec z6_problem(const std::string& name, double lo, double hi) {
  ProblemSpec s;
  s.name = name;
  s.d_theta = 3;
  s.d_x = 3;
  s.theta_domain = Box::uniform(3, 0.0, 1.0);
  s.x_domain = Box::uniform(3, 0.0, 1.0);
  s.kind = ProblemKind::closed_form;
  s.layout = ZLayout::x_first;
  s.canonical_box = Box::uniform(6, lo, hi);
  return s;
}

/// Output scale normalizing E[g^2] to 1 over the sampling distribution,
/// computed with a fixed internal stream so the constant is reproducible.
inline void normalize_output_scale(ProblemSpec& s, std::size_t samples = 8192) {
  Rng rng(0x5CA1E ^ fnv1a64(s.name));
  double acc = 0.0;
  std::vector<double> u(s.d());
  for (std::size_t q = 0; q < samples; ++q) {
    for (auto& v : u) v = rng.uniform();
    const double g = s.raw_value(s.to_canonical(u));
    acc += g * g;
  }
  const double rms = std::sqrt(acc / static_cast<double>(samples));
  s.output_scale = rms > 1e-12 ? 1.0 / rms : 1.0;
  s.params["output_scale"] = s.output_scale;
}

}  // namespace detail

inline std::vector<std::string> problem_names() {
  return {"linear",       "quadratic",    "nn_small",        "nn_large",  "perm",
          "rosenbrock",   "zakharov",     "trid",            "dixon_price", "griewank",
          "ackley",       "welded_beam",  "pressure_vessel", "newsvendor", "mm1", "san"};
}

inline ProblemSpec make_problem(const std::string& name, std::uint64_t seed = kDefaultProblemSeed);

namespace detail {

inline ProblemSpec make_bilinear(const std::string& name, bool squared, std::uint64_t seed) {
  ProblemSpec s;
  s.name = name;
  s.d_theta = 3;
  s.d_x = 3;
  s.theta_domain = Box::uniform(3, 0.0, 1.0);
  s.x_domain = Box::uniform(3, 0.0, 1.0);
  s.kind = ProblemKind::closed_form;
  s.layout = ZLayout::x_first;
  s.canonical_box = Box::uniform(6, 0.0, 1.0);

  // S is the function parameter; entries are drawn once and emitted.
  Rng rng(derive_seed(seed, fnv1a64(name)));
  auto S = std::make_shared<std::vector<double>>(9);
  for (auto& v : *S) v = rng.uniform(-1.0, 1.0);
  s.params["S"] = *S;

  s.raw_value = [S, squared](std::span<const double> z) {
    // z = (x, theta)
    double acc = 0.0;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) acc += z[i] * (*S)[i * 3 + j] * z[3 + j];
    return squared ? acc * acc : acc;
  };
  s.raw_grad = [S, squared](std::span<const double> z, std::span<double> g) {
    double acc = 0.0;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) acc += z[i] * (*S)[i * 3 + j] * z[3 + j];
    const double f = squared ? 2.0 * acc : 1.0;
    for (std::size_t i = 0; i < 3; ++i) {
      double sx = 0.0, st = 0.0;
      for (std::size_t j = 0; j < 3; ++j) {
        sx += (*S)[i * 3 + j] * z[3 + j];   // (S theta)_i
        st += (*S)[j * 3 + i] * z[j];       // (S^T x)_i
      }
      g[i] = f * sx;
      g[3 + i] = f * st;
    }
  };
  return s;
}

inline ProblemSpec make_neural(const std::string& name, std::size_t width, std::uint64_t seed) {
  ProblemSpec s;
  s.name = name;
  s.d_theta = 3;
  s.d_x = 3;
  s.theta_domain = Box::uniform(3, 0.0, 1.0);
  s.x_domain = Box::uniform(3, 0.0, 1.0);
  s.kind = ProblemKind::neural;
  s.layout = ZLayout::x_first;
  s.canonical_box = Box::uniform(6, 0.0, 1.0);

  MlpSpec ms;
  ms.input_dim = 6;
  ms.hidden = {width, width};
  ms.output_dim = 1;
  ms.seed = derive_seed(seed, fnv1a64(name));
  auto model = std::make_shared<MlpModel>(init_model(ms));
  s.params["nn_width"] = width;
  s.params["nn_seed"] = ms.seed;

  s.raw_value = [model](std::span<const double> z) {
    return forward_plain(*model, Tensor::matrix(1, 6, std::vector<double>(z.begin(), z.end())))(0, 0);
  };
  s.raw_grad = [model](std::span<const double> z, std::span<double> g) {
    Tape t;
    auto a = attach_model_frozen(t, *model);
    NodeId in = t.leaf(Tensor::matrix(1, 6, std::vector<double>(z.begin(), z.end())));
    NodeId out = t.reshape_to(a.eval(in), Shape{});
    NodeId gz = backward_nodes(t, out, std::array<NodeId, 1>{in}).at(in);
    const Tensor& gv = t.val(gz);
    for (std::size_t i = 0; i < 6; ++i) g[i] = gv(0, i);
  };
  return s;
}

}  // namespace detail

inline ProblemSpec make_problem(const std::string& name, std::uint64_t seed) {
  if (name == "linear") {
    ProblemSpec s = detail::make_bilinear(name, false, seed);
    detail::normalize_output_scale(s);
    return s;
  }
  if (name == "quadratic") {
    ProblemSpec s = detail::make_bilinear(name, true, seed);
    detail::normalize_output_scale(s);
    return s;
  }
  if (name == "nn_small" || name == "nn_large") {
    ProblemSpec s = detail::make_neural(name, name == "nn_small" ? 100 : 1000, seed);
    detail::normalize_output_scale(s);
    return s;
  }
  if (name == "perm") {
    ProblemSpec s = detail::z6_problem(name, -1.0, 1.0);
    const double beta = 0.5;
    s.params["beta"] = beta;
    s.raw_value = [beta](std::span<const double> z) {
      const std::size_t d = z.size();
      double acc = 0.0;
      for (std::size_t i = 1; i <= d; ++i) {
        double inner = 0.0;
        for (std::size_t j = 1; j <= d; ++j)
          inner += (static_cast<double>(j) + beta) *
                   (std::pow(z[j - 1], static_cast<double>(i)) -
                    1.0 / std::pow(static_cast<double>(j), static_cast<double>(i)));
        acc += inner * inner;
      }
      return acc;
    };
    s.raw_grad = [beta](std::span<const double> z, std::span<double> g) {
      const std::size_t d = z.size();
      for (auto& v : g) v = 0.0;
      for (std::size_t i = 1; i <= d; ++i) {
        double inner = 0.0;
        for (std::size_t j = 1; j <= d; ++j)
          inner += (static_cast<double>(j) + beta) *
                   (std::pow(z[j - 1], static_cast<double>(i)) -
                    1.0 / std::pow(static_cast<double>(j), static_cast<double>(i)));
        for (std::size_t k = 1; k <= d; ++k)
          g[k - 1] += 2.0 * inner * (static_cast<double>(k) + beta) * static_cast<double>(i) *
                      std::pow(z[k - 1], static_cast<double>(i) - 1.0);
      }
    };
    detail::normalize_output_scale(s);
    return s;
  }
  if (name == "rosenbrock") {
    ProblemSpec s = detail::z6_problem(name, -2.0, 2.0);
    s.raw_value = [](std::span<const double> z) {
      double acc = 0.0;
      for (std::size_t i = 0; i + 1 < z.size(); ++i) {
        const double a = z[i + 1] - z[i] * z[i];
        const double b = z[i] - 1.0;
        acc += 100.0 * a * a + b * b;
      }
      return acc;
    };
    s.raw_grad = [](std::span<const double> z, std::span<double> g) {
      for (auto& v : g) v = 0.0;
      for (std::size_t i = 0; i + 1 < z.size(); ++i) {
        const double a = z[i + 1] - z[i] * z[i];
        g[i] += -400.0 * z[i] * a + 2.0 * (z[i] - 1.0);
        g[i + 1] += 200.0 * a;
      }
    };
    detail::normalize_output_scale(s);
    return s;
  }
  if (name == "zakharov") {
    ProblemSpec s = detail::z6_problem(name, -5.0, 10.0);
    s.raw_value = [](std::span<const double> z) {
      double sq = 0.0, w = 0.0;
      for (std::size_t i = 0; i < z.size(); ++i) {
        sq += z[i] * z[i];
        w += 0.5 * static_cast<double>(i + 1) * z[i];
      }
      return sq + w * w + w * w * w * w;
    };
    s.raw_grad = [](std::span<const double> z, std::span<double> g) {
      double w = 0.0;
      for (std::size_t i = 0; i < z.size(); ++i) w += 0.5 * static_cast<double>(i + 1) * z[i];
      for (std::size_t i = 0; i < z.size(); ++i)
        g[i] = 2.0 * z[i] + (2.0 * w + 4.0 * w * w * w) * 0.5 * static_cast<double>(i + 1);
    };
    detail::normalize_output_scale(s);
    return s;
  }
  if (name == "trid") {
    ProblemSpec s = detail::z6_problem(name, -36.0, 36.0);
    s.raw_value = [](std::span<const double> z) {
      double acc = 0.0;
      for (std::size_t i = 0; i < z.size(); ++i) {
        const double a = z[i] - 1.0;
        acc += a * a;
        if (i > 0) acc -= z[i] * z[i - 1];
      }
      return acc;
    };
    s.raw_grad = [](std::span<const double> z, std::span<double> g) {
      const std::size_t d = z.size();
      for (std::size_t i = 0; i < d; ++i) {
        g[i] = 2.0 * (z[i] - 1.0);
        if (i > 0) g[i] -= z[i - 1];
        if (i + 1 < d) g[i] -= z[i + 1];
      }
    };
    detail::normalize_output_scale(s);
    return s;
  }
  if (name == "dixon_price") {
    ProblemSpec s = detail::z6_problem(name, -10.0, 10.0);
    s.raw_value = [](std::span<const double> z) {
      double acc = (z[0] - 1.0) * (z[0] - 1.0);
      for (std::size_t i = 1; i < z.size(); ++i) {
        const double a = 2.0 * z[i] * z[i] - z[i - 1];
        acc += static_cast<double>(i + 1) * a * a;
      }
      return acc;
    };
    s.raw_grad = [](std::span<const double> z, std::span<double> g) {
      for (auto& v : g) v = 0.0;
      g[0] = 2.0 * (z[0] - 1.0);
      for (std::size_t i = 1; i < z.size(); ++i) {
        const double a = 2.0 * z[i] * z[i] - z[i - 1];
        g[i] += static_cast<double>(i + 1) * 2.0 * a * 4.0 * z[i];
        g[i - 1] -= static_cast<double>(i + 1) * 2.0 * a;
      }
    };
    detail::normalize_output_scale(s);
    return s;
  }
  if (name == "griewank") {
    ProblemSpec s = detail::z6_problem(name, -8.0, 8.0);
    s.raw_value = [](std::span<const double> z) {
      double sum = 0.0, prod = 1.0;
      for (std::size_t i = 0; i < z.size(); ++i) {
        sum += z[i] * z[i] / 4000.0;
        prod *= std::cos(z[i] / std::sqrt(static_cast<double>(i + 1)));
      }
      return sum - prod + 1.0;
    };
    s.raw_grad = [](std::span<const double> z, std::span<double> g) {
      const std::size_t d = z.size();
      std::vector<double> c(d), sq(d);
      double prod = 1.0;
      for (std::size_t i = 0; i < d; ++i) {
        sq[i] = std::sqrt(static_cast<double>(i + 1));
        c[i] = std::cos(z[i] / sq[i]);
        prod *= c[i];
      }
      for (std::size_t i = 0; i < d; ++i) {
        double rest = 1.0;
        for (std::size_t j = 0; j < d; ++j)
          if (j != i) rest *= c[j];
        g[i] = z[i] / 2000.0 + rest * std::sin(z[i] / sq[i]) / sq[i];
      }
    };
    detail::normalize_output_scale(s);
    return s;
  }
  if (name == "ackley") {
    ProblemSpec s = detail::z6_problem(name, -5.0, 5.0);
    const double a = 20.0, b = 0.2, c = 6.283185307179586476925286766559;
    s.params["a"] = a;
    s.params["b"] = b;
    s.raw_value = [a, b, c](std::span<const double> z) {
      const double d = static_cast<double>(z.size());
      double sq = 0.0, cs = 0.0;
      for (double v : z) {
        sq += v * v;
        cs += std::cos(c * v);
      }
      return -a * std::exp(-b * std::sqrt(sq / d)) - std::exp(cs / d) + a + std::exp(1.0);
    };
    s.raw_grad = [a, b, c](std::span<const double> z, std::span<double> g) {
      const double d = static_cast<double>(z.size());
      double sq = 0.0, cs = 0.0;
      for (double v : z) {
        sq += v * v;
        cs += std::cos(c * v);
      }
      const double root = std::sqrt(sq / d);
      const double e1 = std::exp(-b * root);
      const double e2 = std::exp(cs / d);
      for (std::size_t i = 0; i < z.size(); ++i) {
        const double droot = root > 1e-12 ? z[i] / (d * root) : 0.0;
        g[i] = a * b * e1 * droot + e2 * c * std::sin(c * z[i]) / d;
      }
    };
    detail::normalize_output_scale(s);
    return s;
  }
  if (name == "welded_beam") {
    ProblemSpec s;
    s.name = name;
    s.d_theta = 3;
    s.d_x = 1;
    s.theta_domain = Box::uniform(3, 0.0, 1.0);
    s.x_domain = Box::uniform(1, 0.0, 1.0);
    s.kind = ProblemKind::closed_form;
    s.layout = ZLayout::theta_first;
    s.canonical_box = Box::uniform(4, 0.0, 1.0);
    s.raw_value = [](std::span<const double> z) {
      return 1.10471 * z[0] * z[0] * z[1] + 0.04811 * z[2] * z[3] * (14.0 + z[1]);
    };
    s.raw_grad = [](std::span<const double> z, std::span<double> g) {
      g[0] = 2.0 * 1.10471 * z[0] * z[1];
      g[1] = 1.10471 * z[0] * z[0] + 0.04811 * z[2] * z[3];
      g[2] = 0.04811 * z[3] * (14.0 + z[1]);
      g[3] = 0.04811 * z[2] * (14.0 + z[1]);
    };
    detail::normalize_output_scale(s);
    return s;
  }
  if (name == "pressure_vessel") {
    ProblemSpec s;
    s.name = name;
    s.d_theta = 3;
    s.d_x = 1;
    s.theta_domain = Box::uniform(3, 0.0, 1.0);
    s.x_domain = Box::uniform(1, 0.0, 1.0);
    s.kind = ProblemKind::closed_form;
    s.layout = ZLayout::theta_first;
    s.canonical_box = Box::uniform(4, 0.0, 1.0);
    s.raw_value = [](std::span<const double> z) {
      return 0.6224 * z[0] * z[2] * z[3] + 1.7781 * z[1] * z[2] * z[2] +
             3.1661 * z[0] * z[0] * z[3] + 19.84 * z[0] * z[0] * z[2];
    };
    s.raw_grad = [](std::span<const double> z, std::span<double> g) {
      g[0] = 0.6224 * z[2] * z[3] + 2.0 * 3.1661 * z[0] * z[3] + 2.0 * 19.84 * z[0] * z[2];
      g[1] = 1.7781 * z[2] * z[2];
      g[2] = 0.6224 * z[0] * z[3] + 2.0 * 1.7781 * z[1] * z[2] + 19.84 * z[0] * z[0];
      g[3] = 0.6224 * z[0] * z[2] + 3.1661 * z[0] * z[0];
    };
    detail::normalize_output_scale(s);
    return s;
  }
  if (name == "newsvendor") {
    ProblemSpec s;
    s.name = name;
    s.d_theta = 1;
    s.d_x = 1;
    s.theta_domain = Box::uniform(1, 0.0, 1.0);
    s.x_domain = Box::uniform(1, 2.5, 7.5);
    s.kind = ProblemKind::simulator;
    s.canonical_box = Box::uniform(2, 0.0, 1.0);
    NewsvendorSettings ns;
    s.params["alpha"] = ns.alpha;
    s.params["beta"] = ns.beta;
    s.params["sell"] = ns.sell;
    s.params["salvage"] = ns.salvage;
    s.sim_reps = 128;
    s.sim_seed = derive_seed(seed, fnv1a64(name));
    s.fd_gradient = true;
    s.fd_step = 1e-3;
    // minimized objective: negative expected profit
    s.simulate = [ns](std::span<const double> th, std::span<const double> x, Rng& rng) {
      return -simulate_newsvendor(th[0], x[0], ns, rng);
    };
    return s;
  }
  if (name == "mm1") {
    ProblemSpec s;
    s.name = name;
    s.d_theta = 1;
    s.d_x = 1;
    s.theta_domain = Box::uniform(1, 1.0, 6.0);
    s.x_domain = Box::uniform(1, 1.0, 6.0);
    s.kind = ProblemKind::simulator;
    s.canonical_box = Box::uniform(2, 0.0, 1.0);
    Mm1Settings ms;
    // the sampling box includes theta <= x; a truncated-horizon sample is
    // still finite there, so unstable draws are allowed for data generation
    ms.allow_unstable = true;
    ms.horizon = 20000;
    s.params["penalty"] = ms.penalty;
    s.params["warmup"] = ms.warmup;
    s.params["horizon"] = ms.horizon;
    s.sim_reps = 1;  // one long run is already a horizon average
    s.sim_seed = derive_seed(seed, fnv1a64(name));
    s.fd_gradient = true;
    s.fd_step = 1e-2;
    s.simulate = [ms](std::span<const double> th, std::span<const double> x, Rng& rng) {
      return simulate_mm1(th[0], x[0], ms, rng);
    };
    return s;
  }
  if (name == "san") {
    ProblemSpec s;
    s.name = name;
    s.d_theta = 8;
    s.d_x = 5;
    s.theta_domain = Box::uniform(8, 0.1, 5.0);
    s.x_domain = Box::uniform(5, 0.1, 5.0);
    s.kind = ProblemKind::simulator;
    s.canonical_box = Box::uniform(13, 0.0, 1.0);
    auto topo = std::make_shared<SanTopology>(default_san_topology());
    s.params["num_nodes"] = topo->num_nodes;
    s.params["num_arcs"] = topo->arcs.size();
    s.sim_reps = 128;
    s.sim_seed = derive_seed(seed, fnv1a64(name));
    s.fd_gradient = true;
    s.fd_step = 1e-2;
    s.simulate = [topo](std::span<const double> th, std::span<const double> x, Rng& rng) {
      return simulate_san(th, x, *topo, rng);
    };
    return s;
  }
  throw config_error("unknown problem: " + name);
}

}  // namespace sobbo
