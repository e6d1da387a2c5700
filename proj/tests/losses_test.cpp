#include "sobbo/losses.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "sobbo/mlp.hpp"
#include "test_fields.hpp"

using namespace sobbo;
using test_fields::AffineTapeField;
using test_fields::TanhGradTapeField;

namespace {

Tensor random_batch(std::size_t rows, std::size_t d, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Tensor t = Tensor::zeros({rows, d});
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

AffineTapeField random_symmetric_grad_field(std::size_t d, Rng& rng) {
  AffineTapeField f;
  f.a = Tensor::zeros({d, d});
  f.b = Tensor::zeros({d});
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      const double v = rng.uniform(-1, 1);
      f.a(i, j) = f.a(j, i) = v;
    }
  for (auto& v : f.b.data) v = rng.uniform(-1, 1);
  return f;
}

double quadratic_potential(const AffineTapeField& f, std::span<const double> z) {
  double acc = 0.0;
  const std::size_t d = f.b.shape[0];
  for (std::size_t i = 0; i < d; ++i) {
    acc += f.b(i) * z[i];
    for (std::size_t j = 0; j < d; ++j) acc += 0.5 * z[i] * f.a(i, j) * z[j];
  }
  return acc;
}

PairBatch make_pair_batch(const Tensor& zetas, std::vector<double> ys, bool all_pairs = true) {
  PairBatch pb;
  pb.zetas = zetas;
  pb.ys = std::move(ys);
  if (all_pairs) {
    const std::size_t b = zetas.shape[0];
    for (std::size_t k = 0; k < b; ++k)
      for (std::size_t l = 0; l < b; ++l)
        if (k != l) pb.pairs.emplace_back(k, l);
  }
  return pb;
}

}  // namespace

// ---------------------------------------------------------------------------
// ERM
// ---------------------------------------------------------------------------

TEST(ErmLoss, ConstantZeroModel) {
  MlpSpec s;
  s.input_dim = 2;
  s.hidden = {4};
  s.output_dim = 1;
  MlpModel m = init_model(s);
  for (auto& w : m.weights)
    for (auto& v : w.data) v = 0.0;
  Tape t;
  auto a = attach_model(t, m);
  Tensor z = Tensor::matrix(2, 2, {0.1, 0.2, 0.3, 0.4});
  std::vector<double> ys{1.0, -1.0};
  NodeId loss = erm_loss_node(t, a, z, ys);
  EXPECT_DOUBLE_EQ(t.val(loss).value(), 1.0);
}

TEST(ErmLoss, PerfectInterpolationIsZero) {
  // Surrogate equal to the generating affine rule.
  struct AffineSurrogate {
    Tensor w;  // [d]
    double c;
    NodeId eval(Tape& t, NodeId z) const {
      NodeId col = t.matmul(z, t.constant(Tensor::matrix(w.shape[0], 1, w.data)));
      return t.affine(col, 1.0, c);
    }
  };
  AffineSurrogate s{Tensor::vector({2.0, -1.0}), 0.5};
  Rng rng(3);
  Tensor z = random_batch(5, 2, rng);
  std::vector<double> ys;
  for (std::size_t k = 0; k < 5; ++k) ys.push_back(z(k, 0) * 2.0 + z(k, 1) * -1.0 + 0.5);
  Tape t;
  NodeId loss = erm_loss_node(t, s, z, ys);
  EXPECT_LE(t.val(loss).value(), 1e-28);
}

TEST(ErmLoss, MatchesIndependentMseOnRandomBatches) {
  MlpSpec s;
  s.input_dim = 3;
  s.hidden = {6, 5};
  s.output_dim = 1;
  s.seed = 9;
  MlpModel m = init_model(s);
  Rng rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor z = random_batch(7, 3, rng, -1, 1);
    std::vector<double> ys(7);
    for (auto& v : ys) v = rng.uniform(-2, 2);
    Tape t;
    auto a = attach_model(t, m);
    const double loss = t.val(erm_loss_node(t, a, z, ys)).value();
    // independently coded mean-squared-error
    Tensor out = forward_plain(m, z);
    double mse = 0.0;
    for (std::size_t k = 0; k < 7; ++k) mse += (out(k, 0) - ys[k]) * (out(k, 0) - ys[k]);
    mse /= 7.0;
    EXPECT_NEAR(loss, mse, 1e-12);
  }
}

TEST(ErmLoss, EmptyBatchIsAnError) {
  MlpSpec s;
  s.input_dim = 2;
  s.hidden = {3};
  s.output_dim = 1;
  MlpModel m = init_model(s);
  Tape t;
  auto a = attach_model(t, m);
  Tensor z = Tensor::zeros({0, 2});
  EXPECT_THROW(erm_loss_node(t, a, z, std::vector<double>{}), config_error);
}

// ---------------------------------------------------------------------------
// Balance
// ---------------------------------------------------------------------------

TEST(BalanceLoss, AnalyticGradientFieldIsZero) {
  auto f = test_fields::bilinear_grad_field();
  Rng rng(5);
  Tensor z = random_batch(8, 2, rng);
  Tape t;
  NodeId loss = balance_loss_node(t, f, z, 0, rng);
  EXPECT_LE(t.val(loss).value(), 1e-12);
}

TEST(BalanceLoss, RotationalFieldGivesExactlyFour) {
  auto f = test_fields::rotational_field();
  Rng rng(6);
  Tensor z = random_batch(5, 2, rng);
  Tape t;
  NodeId loss = balance_loss_node(t, f, z, 0, rng);
  EXPECT_DOUBLE_EQ(t.val(loss).value(), 4.0);
}

TEST(BalanceLoss, SampledPairsMatchExhaustiveEnumeration) {
  // With M = d(d-1) the library must reproduce the exhaustive double sum,
  // which for an affine field h = Az + b is mean over ordered pairs of
  // (A[j][i] - A[i][j])^2.
  Rng rng(8);
  const std::size_t d = 5;
  AffineTapeField f;
  f.a = Tensor::zeros({d, d});
  f.b = Tensor::zeros({d});
  for (auto& v : f.a.data) v = rng.uniform(-1, 1);
  Tensor z = random_batch(4, d, rng);

  double oracle = 0.0;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      if (i != j) {
        const double diff = f.a(j, i) - f.a(i, j);
        oracle += diff * diff;
      }
  oracle /= static_cast<double>(d * (d - 1));

  Tape t;
  NodeId loss = balance_loss_node(t, f, z, d * (d - 1), rng);
  EXPECT_NEAR(t.val(loss).value(), oracle, 1e-12);
}

TEST(BalanceLoss, MlpFieldMatchesPerEntryAssembly) {
  // Assembly oracle: the same Eq.-style sum built entry by entry from
  // input_jacobian_entry on fresh tapes.
  MlpSpec s;
  s.input_dim = 3;
  s.hidden = {5};
  s.output_dim = 3;
  s.seed = 77;
  MlpModel m = init_model(s);
  Rng rng(9);
  Tensor z = random_batch(3, 3, rng);

  Tape t;
  auto attached = attach_model(t, m);
  const double loss = t.val(balance_loss_node(t, attached, z, 0, rng)).value();

  const auto pairs = all_coordinate_pairs(3);
  double oracle = 0.0;
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<double> row(z.data.begin() + k * 3, z.data.begin() + (k + 1) * 3);
    for (const auto& [i, j] : pairs) {
      Tape tt;
      auto aa = attach_model(tt, m);
      const double dji = tt.val(input_jacobian_entry(tt, aa, Tensor::vector(row), i, j)).value();
      const double dij = tt.val(input_jacobian_entry(tt, aa, Tensor::vector(row), j, i)).value();
      oracle += (dji - dij) * (dji - dij);
    }
  }
  oracle /= static_cast<double>(3 * pairs.size());
  EXPECT_NEAR(loss, oracle, 1e-12);
}

TEST(BalanceLoss, DimensionOneIsAnError) {
  AffineTapeField f;
  f.a = Tensor::matrix(1, 1, {2.0});
  f.b = Tensor::zeros({1});
  Rng rng(1);
  Tensor z = Tensor::matrix(3, 1, {0.1, 0.2, 0.3});
  Tape t;
  EXPECT_THROW(balance_loss_node(t, f, z, 0, rng), config_error);
}

TEST(BalanceLoss, InvariantUnderSwappedPairRoles) {
  Rng rng(10);
  const std::size_t d = 4;
  AffineTapeField f;
  f.a = Tensor::zeros({d, d});
  f.b = Tensor::zeros({d});
  for (auto& v : f.a.data) v = rng.uniform(-1, 1);
  Tensor z = random_batch(3, d, rng);

  std::vector<std::pair<std::size_t, std::size_t>> fwd{{0, 1}, {2, 3}, {1, 3}};
  std::vector<std::pair<std::size_t, std::size_t>> swapped{{1, 0}, {3, 2}, {3, 1}};
  Tape t1, t2;
  const double a = t1.val(balance_loss_node(t1, f, z, std::span(fwd))).value();
  const double b = t2.val(balance_loss_node(t2, f, z, std::span(swapped))).value();
  EXPECT_DOUBLE_EQ(a, b);
}

// ---------------------------------------------------------------------------
// Reconstruction
// ---------------------------------------------------------------------------

TEST(ReconstructionLoss, AnalyticGradientNoiselessIsQuadratureLevel) {
  Rng rng(21);
  const std::size_t d = 3;
  TanhGradTapeField f;
  f.c = Tensor::vector({0.7, -1.1, 0.4});
  Tensor z = random_batch(6, d, rng);
  std::vector<double> ys;
  for (std::size_t k = 0; k < 6; ++k) {
    std::vector<double> row(z.data.begin() + k * d, z.data.begin() + (k + 1) * d);
    ys.push_back(f.potential(row));
  }
  PairBatch pb = make_pair_batch(z, ys);
  QuadratureSpec quad;
  quad.steps = 512;
  Tape t;
  NodeId loss = reconstruction_loss_node(t, f, pb, quad);
  EXPECT_LE(t.val(loss).value(), 1e-6);
}

TEST(ReconstructionLoss, IdenticalPointsZero) {
  AffineTapeField f = test_fields::bilinear_grad_field();
  PairBatch pb;
  pb.zetas = Tensor::matrix(2, 2, {0.4, 0.6, 0.4, 0.6});
  pb.ys = {1.7, 1.7};
  pb.pairs = {{0, 1}};
  QuadratureSpec quad;
  Tape t;
  EXPECT_DOUBLE_EQ(t.val(reconstruction_loss_node(t, f, pb, quad)).value(), 0.0);
}

TEST(ReconstructionLoss, EmptyPairSetIsAnError) {
  AffineTapeField f = test_fields::bilinear_grad_field();
  PairBatch pb;
  pb.zetas = Tensor::matrix(2, 2, {0, 0, 1, 1});
  pb.ys = {0, 0};
  QuadratureSpec quad;
  Tape t;
  EXPECT_THROW(reconstruction_loss_node(t, f, pb, quad), config_error);
}

TEST(ReconstructionLoss, LemmaOneNoiseFloor) {
  // With the true gradient field and y = g + eps, E[L_r] = 2 sigma^2.
  // Monte Carlo over 10,000 pairs must land within 5% of the floor.
  Rng rng(31);
  const std::size_t d = 3;
  AffineTapeField f = random_symmetric_grad_field(d, rng);
  const double sigma = 0.5;  // sigma^2 = 0.25, floor = 0.5

  const std::size_t pairs = 10000;
  Tensor z = random_batch(2 * pairs, d, rng);
  std::vector<double> ys(2 * pairs);
  for (std::size_t k = 0; k < 2 * pairs; ++k) {
    std::vector<double> row(z.data.begin() + k * d, z.data.begin() + (k + 1) * d);
    ys[k] = quadratic_potential(f, row) + sigma * rng.normal();
  }
  PairBatch pb;
  pb.zetas = std::move(z);
  pb.ys = std::move(ys);
  for (std::size_t p = 0; p < pairs; ++p) pb.pairs.emplace_back(2 * p, 2 * p + 1);

  QuadratureSpec quad;
  quad.steps = 32;  // trapezoid is exact for affine integrands along lines
  Tape t;
  const double loss = t.val(reconstruction_loss_node(t, f, pb, quad)).value();
  EXPECT_NEAR(loss, 0.5, 0.025);
}

// ---------------------------------------------------------------------------
// Path independence
// ---------------------------------------------------------------------------

TEST(PathIndependenceLoss, ConservativeFieldStaysAtQuadratureLevel) {
  Rng rng(41);
  const std::size_t d = 3;
  TanhGradTapeField f;
  f.c = Tensor::vector({0.9, 0.5, -0.8});
  Tensor z = random_batch(5, d, rng);
  std::vector<double> ys;
  for (std::size_t k = 0; k < 5; ++k) {
    std::vector<double> row(z.data.begin() + k * d, z.data.begin() + (k + 1) * d);
    ys.push_back(f.potential(row));
  }
  PairBatch pb = make_pair_batch(z, ys);
  QuadratureSpec quad;
  quad.steps = 512;
  Tape t;
  Rng prng(42);
  NodeId loss = path_independence_loss_node(t, f, pb, 4, 5, quad, prng);
  EXPECT_LE(t.val(loss).value(), 1e-6);
}

TEST(PathIndependenceLoss, DegreeOneSamplingReducesToReconstruction) {
  Rng rng(51);
  AffineTapeField f = random_symmetric_grad_field(3, rng);
  Tensor z = random_batch(4, 3, rng);
  std::vector<double> ys{0.3, -0.2, 0.9, 0.1};
  PairBatch pb = make_pair_batch(z, ys);
  QuadratureSpec quad;
  quad.steps = 64;
  Tape t1, t2;
  Rng prng(1);
  const double le = t1.val(path_independence_loss_node(t1, f, pb, 1, 1, quad, prng)).value();
  const double lr = t2.val(reconstruction_loss_node(t2, f, pb, quad)).value();
  EXPECT_DOUBLE_EQ(le, lr);
}

TEST(PathIndependenceLoss, RotationalFieldMonotoneInPathCount) {
  // y_k - y_k' = 0 and a non-conservative field: the max over a nested set of
  // candidate paths cannot shrink as Lambda grows.
  auto f = test_fields::rotational_field();
  Rng rng(61);
  Tensor z = random_batch(4, 2, rng);
  PairBatch pb = make_pair_batch(z, {0, 0, 0, 0});
  QuadratureSpec quad;
  quad.steps = 128;
  double prev = -1.0;
  for (std::size_t lambda : {1u, 4u, 16u}) {
    Tape t;
    Rng prng(777);  // same seed: candidate sets are nested prefixes
    const double loss = t.val(path_independence_loss_node(t, f, pb, lambda, 6, quad, prng)).value();
    EXPECT_GT(loss, 0.0);
    EXPECT_GE(loss, prev - 1e-15);
    prev = loss;
  }
}

TEST(PathIndependenceLoss, DominatesReconstructionOnSamePairs) {
  Rng rng(71);
  MlpSpec s;
  s.input_dim = 3;
  s.hidden = {6};
  s.output_dim = 3;
  s.seed = 4;
  MlpModel m = init_model(s);
  Tensor z = random_batch(5, 3, rng);
  std::vector<double> ys(5);
  for (auto& v : ys) v = rng.uniform(-1, 1);
  PairBatch pb = make_pair_batch(z, ys);
  QuadratureSpec quad;
  quad.steps = 64;
  Tape t1, t2;
  auto a1 = attach_model(t1, m);
  auto a2 = attach_model(t2, m);
  Rng prng(5);
  const double le = t1.val(path_independence_loss_node(t1, a1, pb, 3, 5, quad, prng)).value();
  const double lr = t2.val(reconstruction_loss_node(t2, a2, pb, quad)).value();
  EXPECT_GE(le, lr - 1e-15);
}

TEST(PathIndependenceLoss, ZeroPathsIsAnError) {
  auto f = test_fields::rotational_field();
  PairBatch pb;
  pb.zetas = Tensor::matrix(2, 2, {0, 0, 1, 1});
  pb.ys = {0, 1};
  pb.pairs = {{0, 1}};
  QuadratureSpec quad;
  Tape t;
  Rng rng(1);
  EXPECT_THROW(path_independence_loss_node(t, f, pb, 0, 5, quad, rng), config_error);
}

// ---------------------------------------------------------------------------
// Combined objective
// ---------------------------------------------------------------------------

TEST(DgiTotalLoss, NaiveVariantEqualsReconstruction) {
  Rng rng(81);
  AffineTapeField f = random_symmetric_grad_field(3, rng);
  Tensor z = random_batch(4, 3, rng);
  std::vector<double> ys{0.5, 0.1, -0.4, 0.2};
  PairBatch pb = make_pair_batch(z, ys);
  LossConfig cfg;
  cfg.balance_weight = 0.0;
  cfg.num_paths = 0;
  cfg.quad.steps = 64;
  Tape t1, t2;
  Rng r1(1);
  const double total = t1.val(dgi_total_loss_node(t1, f, pb, cfg, r1)).value();
  const double recon = t2.val(reconstruction_loss_node(t2, f, pb, cfg.quad)).value();
  EXPECT_DOUBLE_EQ(total, recon);
}

TEST(DgiTotalLoss, PerfectFieldNoiselessIsTiny) {
  Rng rng(91);
  const std::size_t d = 3;
  AffineTapeField f = random_symmetric_grad_field(d, rng);
  Tensor z = random_batch(5, d, rng);
  std::vector<double> ys;
  for (std::size_t k = 0; k < 5; ++k) {
    std::vector<double> row(z.data.begin() + k * d, z.data.begin() + (k + 1) * d);
    ys.push_back(quadratic_potential(f, row));
  }
  PairBatch pb = make_pair_batch(z, ys);
  LossConfig cfg;
  cfg.balance_weight = 123.0;  // arbitrary; a true gradient field has zero curl
  cfg.num_paths = 8;
  cfg.path_degree = 6;
  cfg.quad.steps = 256;
  Tape t;
  Rng r(3);
  EXPECT_LE(t.val(dgi_total_loss_node(t, f, pb, cfg, r)).value(), 1e-6);
}

TEST(DgiTotalLoss, AllLossesNonNegativeOnRandomModels) {
  Rng rng(101);
  MlpSpec s;
  s.input_dim = 3;
  s.hidden = {5};
  s.output_dim = 3;
  for (int trial = 0; trial < 5; ++trial) {
    s.seed = 1000 + static_cast<std::uint64_t>(trial);
    MlpModel m = init_model(s);
    Tensor z = random_batch(4, 3, rng);
    std::vector<double> ys(4);
    for (auto& v : ys) v = rng.uniform(-1, 1);
    PairBatch pb = make_pair_batch(z, ys);
    LossConfig cfg;
    cfg.balance_weight = 2.0;
    cfg.num_paths = 2;
    cfg.quad.steps = 32;
    Tape t;
    auto a = attach_model(t, m);
    Rng r(trial);
    EXPECT_GE(t.val(dgi_total_loss_node(t, a, pb, cfg, r)).value(), 0.0);
  }
}

TEST(DgiTotalLoss, DecreasesUnderSmallGradientStepsOnFrozenBatch) {
  // Smoke check: 10 plain gradient-descent steps with lr 1e-5 on a frozen
  // batch and frozen path sample must not increase the objective.
  Rng rng(111);
  MlpSpec s;
  s.input_dim = 3;
  s.hidden = {6};
  s.output_dim = 3;
  s.seed = 7;
  MlpModel m = init_model(s);
  Tensor z = random_batch(4, 3, rng);
  std::vector<double> ys(4);
  for (auto& v : ys) v = rng.uniform(-1, 1);
  PairBatch pb = make_pair_batch(z, ys);
  LossConfig cfg;
  cfg.balance_weight = 1.0;
  cfg.num_paths = 2;
  cfg.quad.steps = 32;

  double prev = 1e100;
  for (int step = 0; step < 10; ++step) {
    Tape t;
    auto a = attach_model(t, m);
    Rng r(222);  // frozen paths and balance pairs
    NodeId loss = dgi_total_loss_node(t, a, pb, cfg, r);
    const double lv = t.val(loss).value();
    EXPECT_LE(lv, prev + 1e-12);
    prev = lv;
    GradRequest req;
    req.output = loss;
    req.wrt = a.param_nodes();
    auto g = backward(t, req);
    const double lr = 1e-5;
    for (std::size_t l = 0; l < m.layer_count(); ++l) {
      const Tensor& gw = g.at(a.weight_nodes[l]);
      const Tensor& gb = g.at(a.bias_nodes[l]);
      for (std::size_t i = 0; i < m.weights[l].numel(); ++i) m.weights[l].data[i] -= lr * gw.data[i];
      for (std::size_t i = 0; i < m.biases[l].numel(); ++i) m.biases[l].data[i] -= lr * gb.data[i];
    }
  }
}
