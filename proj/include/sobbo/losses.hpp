#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "sobbo/path.hpp"
#include "sobbo/rng.hpp"
#include "sobbo/tape.hpp"

namespace sobbo {

/// A minibatch of dataset rows plus the ordered index pairs the pair losses
/// run over. `pairs` entries index into the rows of `zetas`.
struct PairBatch {
  Tensor zetas;             // [B x d]
  std::vector<double> ys;   // B observed values
  std::vector<std::pair<std::size_t, std::size_t>> pairs;

  std::size_t batch_size() const { return zetas.rank() == 2 ? zetas.shape[0] : 0; }
  std::size_t dim() const { return zetas.rank() == 2 ? zetas.shape[1] : 0; }

  std::vector<double> row(std::size_t k) const {
    const std::size_t d = dim();
    return std::vector<double>(zetas.data.begin() + k * d, zetas.data.begin() + (k + 1) * d);
  }
};

/// All ordered pairs (k, k') with k != k' when B <= 16; otherwise B pairs with
/// distinct endpoints drawn uniformly. Keeps the pair estimator unbiased while
/// bounding the dominant path-integral cost.
inline std::vector<std::pair<std::size_t, std::size_t>> make_batch_pairs(std::size_t batch,
                                                                         Rng& rng) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  if (batch < 2) throw config_error("make_batch_pairs: need at least 2 rows");
  if (batch <= 16) {
    for (std::size_t k = 0; k < batch; ++k)
      for (std::size_t l = 0; l < batch; ++l)
        if (k != l) pairs.emplace_back(k, l);
  } else {
    pairs.reserve(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      const std::size_t k = rng.uniform_index(batch);
      std::size_t l = rng.uniform_index(batch - 1);
      if (l >= k) ++l;
      pairs.emplace_back(k, l);
    }
  }
  return pairs;
}

struct LossConfig {
  double balance_weight = 0.0;   // alpha
  std::size_t num_paths = 0;     // Lambda; 0 = linear path only
  std::size_t path_degree = 10;  // tau
  QuadratureSpec quad{};
  std::size_t balance_pairs = 0;  // M; 0 = exhaustive over all ordered coordinate pairs

  void validate() const {
    if (balance_weight < 0) throw config_error("loss config: balance_weight must be >= 0");
    if (path_degree < 1) throw config_error("loss config: path_degree must be >= 1");
    quad.validate();
  }
};

// ---------------------------------------------------------------------------
// ERM loss (surrogate training)
// ---------------------------------------------------------------------------

/// Mean of (g_phi(zeta_k) - y_k)^2 over the batch.
template <class SurrogateOnTape>
NodeId erm_loss_node(Tape& t, const SurrogateOnTape& surrogate, const Tensor& zetas,
                     std::span<const double> ys) {
  if (zetas.rank() != 2 || zetas.shape[0] == 0) throw config_error("erm_loss: empty batch");
  if (zetas.shape[0] != ys.size()) throw shape_error("erm_loss: batch/target size mismatch");
  NodeId z = t.constant(zetas);
  NodeId out = surrogate.eval(t, z);  // [B x 1]
  NodeId flat = t.reshape_to(out, {zetas.shape[0]});
  NodeId y = t.constant(Tensor::vector(std::vector<double>(ys.begin(), ys.end())));
  return t.mean(t.square(t.sub(flat, y)));
}

// ---------------------------------------------------------------------------
// Balance loss (mixed-partial symmetry)
// ---------------------------------------------------------------------------

inline std::vector<std::pair<std::size_t, std::size_t>> all_coordinate_pairs(std::size_t d) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      if (i != j) out.emplace_back(i, j);
  return out;
}

inline std::vector<std::pair<std::size_t, std::size_t>> sample_coordinate_pairs(std::size_t d,
                                                                                std::size_t m,
                                                                                Rng& rng) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(m);
  for (std::size_t q = 0; q < m; ++q) {
    const std::size_t i = rng.uniform_index(d);
    std::size_t j = rng.uniform_index(d - 1);
    if (j >= i) ++j;
    out.emplace_back(i, j);
  }
  return out;
}

/// (1/(B*M)) sum_k sum_m (dh^{i_m}/dz^{j_m} - dh^{j_m}/dz^{i_m})^2 over the
/// given coordinate pairs, differentiable with respect to the field
/// parameters (the input-jacobian columns are recorded gradient passes).
template <class FieldOnTape>
NodeId balance_loss_node(Tape& t, const FieldOnTape& field, const Tensor& zetas,
                         std::span<const std::pair<std::size_t, std::size_t>> coord_pairs) {
  if (zetas.rank() != 2 || zetas.shape[0] == 0) throw config_error("balance_loss: empty batch");
  const std::size_t batch = zetas.shape[0], d = zetas.shape[1];
  if (d < 2) throw config_error("balance_loss: needs input dimension >= 2");
  if (coord_pairs.empty()) throw config_error("balance_loss: empty coordinate pair set");

  NodeId z = t.leaf(zetas);
  NodeId h = field.eval(t, z);  // [B x d]

  // Column sums h^j over the batch; their input gradients give, row by row,
  // dh^j(zeta_k)/dzeta since rows are independent.
  std::vector<NodeId> col_grads(d, kNoNode);
  auto col_grad = [&](std::size_t j) {
    if (col_grads[j] == kNoNode) {
      NodeId sj = t.sum(t.slice_block(h, {0, j}, {batch, 1}));
      col_grads[j] = backward_nodes(t, sj, std::array<NodeId, 1>{z}).at(z);  // [B x d]
    }
    return col_grads[j];
  };

  NodeId acc = kNoNode;
  for (const auto& [i, j] : coord_pairs) {
    if (i >= d || j >= d || i == j) throw config_error("balance_loss: bad coordinate pair");
    NodeId dji = t.slice_block(col_grad(j), {0, i}, {batch, 1});  // dh^j/dz^i per row
    NodeId dij = t.slice_block(col_grad(i), {0, j}, {batch, 1});  // dh^i/dz^j per row
    NodeId term = t.sum(t.square(t.sub(dji, dij)));
    acc = acc == kNoNode ? term : t.add(acc, term);
  }
  const double scale = 1.0 / (static_cast<double>(batch) * static_cast<double>(coord_pairs.size()));
  return t.affine(acc, scale, 0.0);
}

template <class FieldOnTape>
NodeId balance_loss_node(Tape& t, const FieldOnTape& field, const Tensor& zetas, std::size_t m,
                         Rng& rng) {
  const std::size_t d = zetas.rank() == 2 ? zetas.shape[1] : 0;
  if (d < 2) throw config_error("balance_loss: needs input dimension >= 2");
  const auto pairs =
      (m == 0 || m >= d * (d - 1)) ? all_coordinate_pairs(d) : sample_coordinate_pairs(d, m, rng);
  return balance_loss_node(t, field, zetas, std::span<const std::pair<std::size_t, std::size_t>>(pairs));
}

// ---------------------------------------------------------------------------
// Reconstruction loss (linear-path integrals)
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor pair_deltas(const PairBatch& pb, std::size_t repeat) {
  Tensor d = Tensor::zeros({pb.pairs.size() * repeat});
  std::size_t r = 0;
  for (const auto& [k, l] : pb.pairs) {
    const double dy = pb.ys[k] - pb.ys[l];
    for (std::size_t c = 0; c < repeat; ++c) d(r++) = dy;
  }
  return d;
}

}  // namespace detail

/// Mean over pairs of (y_k - y_k' - integral of h along the linear path from
/// zeta_k' to zeta_k)^2.
template <class FieldOnTape>
NodeId reconstruction_loss_node(Tape& t, const FieldOnTape& field, const PairBatch& pb,
                                const QuadratureSpec& quad) {
  if (pb.pairs.empty()) throw config_error("reconstruction_loss: empty pair set");
  std::vector<PolynomialPath> paths;
  paths.reserve(pb.pairs.size());
  for (const auto& [k, l] : pb.pairs) {
    const auto to = pb.row(k);
    const auto from = pb.row(l);
    paths.push_back(linear_path(from, to));
  }
  PathQuadBatch qb = build_quad_batch(paths, quad);
  NodeId pts = t.constant(qb.points);
  NodeId h = field.eval(t, pts);
  NodeId integrals = path_integrals_from_field(t, qb, h);  // [P]
  NodeId deltas = t.constant(detail::pair_deltas(pb, 1));
  return t.mean(t.square(t.sub(deltas, integrals)));
}

// ---------------------------------------------------------------------------
// Path-independence loss (worst case over sampled paths)
// ---------------------------------------------------------------------------

/// Mean over pairs of the max over candidate paths (the linear path plus
/// `num_paths` sampled degree-tau paths) of the squared reconstruction
/// residual. Gradient flows only through each pair's argmax path; ties break
/// to the lowest candidate index. Paths are sampled candidate-major so the
/// candidate sets for increasing Lambda are nested under a fixed rng.
template <class FieldOnTape>
NodeId path_independence_loss_node(Tape& t, const FieldOnTape& field, const PairBatch& pb,
                                   std::size_t num_paths, std::size_t tau,
                                   const QuadratureSpec& quad, Rng& rng) {
  if (num_paths < 1)
    throw config_error("path_independence_loss: num_paths must be >= 1 (use the reconstruction "
                       "loss for the linear-only variant)");
  if (pb.pairs.empty()) throw config_error("path_independence_loss: empty pair set");
  const std::size_t P = pb.pairs.size();
  const std::size_t C = num_paths + 1;

  std::vector<PolynomialPath> paths(P * C);
  for (std::size_t p = 0; p < P; ++p) {
    const auto to = pb.row(pb.pairs[p].first);
    const auto from = pb.row(pb.pairs[p].second);
    paths[p * C] = linear_path(from, to);
  }
  for (std::size_t c = 1; c < C; ++c)
    for (std::size_t p = 0; p < P; ++p) {
      const auto to = pb.row(pb.pairs[p].first);
      const auto from = pb.row(pb.pairs[p].second);
      paths[p * C + c] = sample_path(from, to, tau, rng);
    }

  // Candidate selection runs as a forward-only pass (the nodes stay on the
  // tape but nothing downstream references them, so the reverse sweep skips
  // them); the differentiable graph is then rebuilt for the argmax paths
  // only, which is where the subgradient of the pointwise max lives.
  std::vector<std::size_t> selected(P, 0);
  {
    PathQuadBatch qb = build_quad_batch(paths, quad);
    NodeId pts = t.constant(qb.points);
    NodeId h = field.eval(t, pts);
    NodeId integrals = path_integrals_from_field(t, qb, h);  // [P*C]
    const Tensor& iv = t.val(integrals);
    for (std::size_t p = 0; p < P; ++p) {
      const double dy = pb.ys[pb.pairs[p].first] - pb.ys[pb.pairs[p].second];
      std::size_t best = 0;
      double best_v = -1.0;
      for (std::size_t c = 0; c < C; ++c) {
        const double r = dy - iv(p * C + c);
        if (r * r > best_v) {
          best_v = r * r;
          best = c;  // strict comparison: ties break to the lowest index
        }
      }
      selected[p] = best;
    }
  }

  std::vector<PolynomialPath> chosen(P);
  for (std::size_t p = 0; p < P; ++p) chosen[p] = paths[p * C + selected[p]];
  PathQuadBatch qb = build_quad_batch(chosen, quad);
  NodeId pts = t.constant(qb.points);
  NodeId h = field.eval(t, pts);
  NodeId integrals = path_integrals_from_field(t, qb, h);  // [P]
  NodeId deltas = t.constant(detail::pair_deltas(pb, 1));
  return t.mean(t.square(t.sub(deltas, integrals)));
}

// ---------------------------------------------------------------------------
// Combined DGI objective
// ---------------------------------------------------------------------------

/// L_e (or L_r when num_paths == 0) plus balance_weight * L_b, as one scalar.
template <class FieldOnTape>
NodeId dgi_total_loss_node(Tape& t, const FieldOnTape& field, const PairBatch& pb,
                           const LossConfig& cfg, Rng& rng) {
  cfg.validate();
  NodeId loss = cfg.num_paths == 0
                    ? reconstruction_loss_node(t, field, pb, cfg.quad)
                    : path_independence_loss_node(t, field, pb, cfg.num_paths, cfg.path_degree,
                                                  cfg.quad, rng);
  if (cfg.balance_weight > 0.0) {
    NodeId lb = balance_loss_node(t, field, pb.zetas, cfg.balance_pairs, rng);
    loss = t.add(loss, t.affine(lb, cfg.balance_weight, 0.0));
  }
  return loss;
}

}  // namespace sobbo
