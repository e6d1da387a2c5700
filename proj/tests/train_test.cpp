#include "sobbo/train.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "test_fields.hpp"

using namespace sobbo;

namespace {

// Linear target g(zeta) = w . zeta + c over the unit square, noiseless.
OfflineDataset linear_dataset(std::size_t n, std::uint64_t seed) {
  OfflineDataset ds;
  ds.d_theta = 1;
  ds.d_x = 1;
  Rng rng(seed);
  const double w0 = 0.8, w1 = -1.3, c = 0.4;
  for (std::size_t k = 0; k < n; ++k) {
    const double th = rng.uniform(), x = rng.uniform();
    ds.thetas.push_back(th);
    ds.xs.push_back(x);
    ds.ys.push_back(w0 * th + w1 * x + c);
  }
  return ds;
}

// Quadratic potential target with analytic gradient field for DGI.
struct QuadTarget {
  Tensor a = Tensor::matrix(2, 2, {1.0, 0.3, 0.3, 0.6});
  Tensor b = Tensor::vector({-0.2, 0.5});
  double potential(std::span<const double> z) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < 2; ++i) {
      acc += b(i) * z[i];
      for (std::size_t j = 0; j < 2; ++j) acc += 0.5 * z[i] * a(i, j) * z[j];
    }
    return acc;
  }
};

OfflineDataset quadratic_dataset(std::size_t n, std::uint64_t seed) {
  OfflineDataset ds;
  ds.d_theta = 1;
  ds.d_x = 1;
  QuadTarget tgt;
  Rng rng(seed);
  for (std::size_t k = 0; k < n; ++k) {
    const double th = rng.uniform(), x = rng.uniform();
    ds.thetas.push_back(th);
    ds.xs.push_back(x);
    const std::vector<double> z{th, x};
    ds.ys.push_back(tgt.potential(z));
  }
  return ds;
}

double dataset_mse(const MlpModel& m, const OfflineDataset& ds) {
  Tensor z = Tensor::zeros({ds.size(), ds.zeta_dim()});
  for (std::size_t k = 0; k < ds.size(); ++k) {
    auto row = ds.zeta_row(k);
    std::copy(row.begin(), row.end(), z.data.begin() + k * ds.zeta_dim());
  }
  Tensor out = forward_plain(m, z);
  double acc = 0.0;
  for (std::size_t k = 0; k < ds.size(); ++k)
    acc += (out(k, 0) - ds.ys[k]) * (out(k, 0) - ds.ys[k]);
  return acc / static_cast<double>(ds.size());
}

}  // namespace

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Tensor p = Tensor::vector({1.5, -2.5});
  Tensor g = Tensor::zeros({2});
  AdamState st = AdamState::zeros_like({&p});
  for (int i = 0; i < 5; ++i) adam_step({&p}, {&g}, st, 0.1);
  EXPECT_DOUBLE_EQ(p(0), 1.5);
  EXPECT_DOUBLE_EQ(p(1), -2.5);
}

TEST(Adam, ConstantGradientUpdateApproachesLearningRate) {
  Tensor p = Tensor::vector({0.0});
  Tensor g = Tensor::vector({0.37});
  AdamState st = AdamState::zeros_like({&p});
  const double lr = 0.01;
  double prev = p(0);
  double last_mag = 0.0;
  for (int i = 0; i < 300; ++i) {
    adam_step({&p}, {&g}, st, lr);
    last_mag = std::abs(p(0) - prev);
    prev = p(0);
  }
  EXPECT_NEAR(last_mag, lr, lr * 0.01);
}

TEST(Adam, MatchesHandComputedThreeStepTable) {
  // Oracle table computed independently before implementation:
  // lr = 0.1, p0 = (1, -1), gradients (1,-2), (0.5,0.5), (-1,1).
  Tensor p = Tensor::vector({1.0, -1.0});
  AdamState st = AdamState::zeros_like({&p});
  const std::vector<std::vector<double>> grads{{1.0, -2.0}, {0.5, 0.5}, {-1.0, 1.0}};
  const std::vector<std::vector<double>> expect{
      {0.90000000099999999, -0.90000000049999995},
      {0.80678203829816109, -0.85305318370133476},
      {0.79570373129387173, -0.8483098382649118},
  };
  for (std::size_t s = 0; s < 3; ++s) {
    Tensor g = Tensor::vector(grads[s]);
    adam_step({&p}, {&g}, st, 0.1);
    EXPECT_NEAR(p(0), expect[s][0], 1e-15) << "step " << s;
    EXPECT_NEAR(p(1), expect[s][1], 1e-15) << "step " << s;
  }
}

TEST(Adam, NonFiniteGradientIsAnError) {
  Tensor p = Tensor::vector({1.0});
  Tensor g = Tensor::vector({std::numeric_limits<double>::infinity()});
  AdamState st = AdamState::zeros_like({&p});
  EXPECT_THROW(adam_step({&p}, {&g}, st, 0.1), numeric_error);
}

// ---------------------------------------------------------------------------
// Variant mapping
// ---------------------------------------------------------------------------

TEST(Variants, ConfigMappingMatchesDocumentedTable) {
  auto make = [](Method m) {
    TrainConfig c;
    c.method = m;
    apply_variant(c);
    return c.loss;
  };
  EXPECT_EQ(make(Method::dgi_naive).num_paths, 0u);
  EXPECT_EQ(make(Method::dgi_naive).balance_weight, 0.0);
  EXPECT_EQ(make(Method::dgi_path1).num_paths, 1u);
  EXPECT_EQ(make(Method::dgi_path1).balance_weight, 0.0);
  EXPECT_EQ(make(Method::dgi_path64).num_paths, 64u);
  EXPECT_EQ(make(Method::dgi_path64).balance_weight, 0.0);
  EXPECT_EQ(make(Method::dgi_path1_bal).num_paths, 1u);
  EXPECT_GT(make(Method::dgi_path1_bal).balance_weight, 0.0);
  EXPECT_EQ(make(Method::dgi_full).num_paths, 64u);
  EXPECT_GT(make(Method::dgi_full).balance_weight, 0.0);

  // Each variant differs from "full" only in the documented fields.
  const LossConfig full = make(Method::dgi_full);
  for (Method m : {Method::dgi_naive, Method::dgi_path1, Method::dgi_path64, Method::dgi_path1_bal}) {
    const LossConfig v = make(m);
    EXPECT_EQ(v.path_degree, full.path_degree);
    EXPECT_EQ(v.quad.steps, full.quad.steps);
    EXPECT_EQ(v.balance_pairs, full.balance_pairs);
  }
}

// ---------------------------------------------------------------------------
// ETD training
// ---------------------------------------------------------------------------

TEST(TrainEtd, FitsNoiselessLinearTarget) {
  // The target is realizable: a linear least-squares fit (normal equations,
  // oracle below) reaches numerically zero residual, so the MLP should reach
  // MSE <= 1e-4 within 2,000 steps.
  OfflineDataset ds = linear_dataset(512, 5);

  // Oracle: solve the 3x3 normal equations for y ~ w0 t + w1 x + c.
  {
    double m[3][3] = {{0}}, r[3] = {0};
    for (std::size_t k = 0; k < ds.size(); ++k) {
      const double f[3] = {ds.thetas[k], ds.xs[k], 1.0};
      for (int i = 0; i < 3; ++i) {
        r[i] += f[i] * ds.ys[k];
        for (int j = 0; j < 3; ++j) m[i][j] += f[i] * f[j];
      }
    }
    // Gaussian elimination.
    for (int col = 0; col < 3; ++col) {
      const double piv = m[col][col];
      for (int j = col; j < 3; ++j) m[col][j] /= piv;
      r[col] /= piv;
      for (int i = 0; i < 3; ++i) {
        if (i == col) continue;
        const double f = m[i][col];
        for (int j = col; j < 3; ++j) m[i][j] -= f * m[col][j];
        r[i] -= f * r[col];
      }
    }
    double resid = 0.0;
    for (std::size_t k = 0; k < ds.size(); ++k) {
      const double pred = r[0] * ds.thetas[k] + r[1] * ds.xs[k] + r[2];
      resid += (pred - ds.ys[k]) * (pred - ds.ys[k]);
    }
    ASSERT_LE(resid / static_cast<double>(ds.size()), 1e-20);
  }

  TrainConfig cfg;
  cfg.method = Method::etd;
  cfg.learning_rate = 5e-3;
  cfg.batch_size = 32;
  cfg.steps = 2000;
  cfg.hidden = {16, 16};
  cfg.seed = 3;
  TrainResult res = train_etd(ds, cfg);
  EXPECT_LE(dataset_mse(res.model, ds), 1e-4);
}

TEST(TrainEtd, DeterministicUnderFixedSeed) {
  OfflineDataset ds = linear_dataset(64, 9);
  TrainConfig cfg;
  cfg.method = Method::etd;
  cfg.steps = 50;
  cfg.eval_every = 10;
  cfg.hidden = {8};
  cfg.seed = 11;
  TrainResult a = train_etd(ds, cfg);
  TrainResult b = train_etd(ds, cfg);
  ASSERT_EQ(a.trace.size(), b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    EXPECT_EQ(a.trace[i].step, b.trace[i].step);
    EXPECT_EQ(a.trace[i].loss, b.trace[i].loss);
  }
  for (std::size_t l = 0; l < a.model.layer_count(); ++l)
    EXPECT_EQ(a.model.weights[l].data, b.model.weights[l].data);
}

TEST(TrainEtd, ZeroStepsReturnsInitializedModel) {
  OfflineDataset ds = linear_dataset(32, 2);
  TrainConfig cfg;
  cfg.method = Method::etd;
  cfg.steps = 0;
  cfg.hidden = {8};
  cfg.seed = 21;
  TrainResult res = train_etd(ds, cfg);

  MlpSpec spec;
  spec.input_dim = 2;
  spec.hidden = {8};
  spec.output_dim = 1;
  spec.seed = 21;
  MlpModel fresh = init_model(spec);
  for (std::size_t l = 0; l < fresh.layer_count(); ++l)
    EXPECT_EQ(res.model.weights[l].data, fresh.weights[l].data);
  ASSERT_EQ(res.trace.size(), 1u);
  EXPECT_EQ(res.trace[0].step, 0u);
}

TEST(TrainEtd, DivergenceGuardTriggers) {
  OfflineDataset ds = linear_dataset(64, 4);
  TrainConfig cfg;
  cfg.method = Method::etd;
  cfg.learning_rate = 1e6;
  cfg.steps = 200;
  cfg.hidden = {8};
  try {
    train_etd(ds, cfg);
    FAIL() << "expected numeric_error";
  } catch (const numeric_error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("step"), std::string::npos);
    EXPECT_NE(msg.find("batch"), std::string::npos);
  }
}

TEST(TrainEtd, DoesNotMutateDataset) {
  OfflineDataset ds = linear_dataset(32, 6);
  const auto thetas = ds.thetas;
  const auto xs = ds.xs;
  const auto ys = ds.ys;
  TrainConfig cfg;
  cfg.method = Method::etd;
  cfg.steps = 20;
  cfg.hidden = {4};
  train_etd(ds, cfg);
  EXPECT_EQ(ds.thetas, thetas);
  EXPECT_EQ(ds.xs, xs);
  EXPECT_EQ(ds.ys, ys);
}

// ---------------------------------------------------------------------------
// DGI training
// ---------------------------------------------------------------------------

TEST(TrainDgi, NaiveFitsNoiselessQuadraticGradient) {
  OfflineDataset ds = quadratic_dataset(512, 7);

  // Oracle: the analytic gradient field reaches quadrature-level
  // reconstruction loss on a fixed pair set.
  QuadTarget tgt;
  test_fields::AffineTapeField truth{tgt.a, tgt.b};
  PairBatch eval_pairs;
  {
    std::vector<std::size_t> idx;
    for (std::size_t k = 0; k < 64; ++k) idx.push_back(k);
    eval_pairs.zetas = ds.zeta_batch(idx);
    eval_pairs.ys = ds.y_batch(idx);
    Rng prng(1);
    eval_pairs.pairs = make_batch_pairs(64, prng);
  }
  QuadratureSpec quad;
  quad.steps = 64;
  {
    Tape t;
    const double oracle_loss = t.val(reconstruction_loss_node(t, truth, eval_pairs, quad)).value();
    ASSERT_LE(oracle_loss, 1e-9);
  }

  TrainConfig cfg;
  cfg.method = Method::dgi_naive;
  cfg.learning_rate = 5e-3;
  cfg.batch_size = 32;
  cfg.steps = 1500;
  cfg.hidden = {16, 16};
  cfg.seed = 13;
  cfg.loss.quad.steps = 32;
  TrainResult res = train_dgi(ds, cfg);

  Tape t;
  auto attached = attach_model(t, res.model);
  const double final_loss = t.val(reconstruction_loss_node(t, attached, eval_pairs, quad)).value();
  EXPECT_LE(final_loss, 1e-3);
}

TEST(TrainDgi, DeterministicUnderFixedSeed) {
  OfflineDataset ds = quadratic_dataset(64, 8);
  TrainConfig cfg;
  cfg.method = Method::dgi_path1_bal;
  cfg.steps = 20;
  cfg.eval_every = 5;
  cfg.hidden = {6};
  cfg.seed = 31;
  cfg.loss.quad.steps = 16;
  TrainResult a = train_dgi(ds, cfg);
  TrainResult b = train_dgi(ds, cfg);
  ASSERT_EQ(a.trace.size(), b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) EXPECT_EQ(a.trace[i].loss, b.trace[i].loss);
  for (std::size_t l = 0; l < a.model.layer_count(); ++l)
    EXPECT_EQ(a.model.weights[l].data, b.model.weights[l].data);
}

TEST(TrainDgi, CheckpointResumeReproducesTraceBitExactly) {
  OfflineDataset ds = quadratic_dataset(64, 12);
  TrainConfig cfg;
  cfg.method = Method::dgi_path1_bal;
  cfg.steps = 30;
  cfg.eval_every = 10;
  cfg.hidden = {6};
  cfg.seed = 41;
  cfg.loss.quad.steps = 8;
  apply_variant(cfg);

  const std::string ckpt =
      (std::filesystem::temp_directory_path() / "sobbo_resume_test.bin").string();

  std::vector<TraceRow> full_trace;
  {
    TrainHooks hooks;
    hooks.on_checkpoint = [&](const MlpModel& m, const AdamState& opt, std::size_t step) {
      if (step == 10) save_train_state(ckpt, m, opt, step, cfg.method);
    };
    TrainResult full = train_dgi(ds, cfg, hooks);
    full_trace = full.trace;
  }

  TrainState st = load_train_state(ckpt);
  EXPECT_EQ(st.step, 10u);
  EXPECT_EQ(st.method, method_name(Method::dgi_path1_bal));
  TrainResult resumed = train_dgi_from(ds, cfg, std::move(st.model), std::move(st.opt), st.step);

  std::vector<TraceRow> tail;
  for (const auto& r : full_trace)
    if (r.step >= 10) tail.push_back(r);
  ASSERT_EQ(resumed.trace.size(), tail.size());
  for (std::size_t i = 0; i < tail.size(); ++i) {
    EXPECT_EQ(resumed.trace[i].step, tail[i].step);
    EXPECT_EQ(resumed.trace[i].loss, tail[i].loss);
  }
  std::filesystem::remove(ckpt);
}

TEST(TrainDgi, RejectsEtdMethod) {
  OfflineDataset ds = quadratic_dataset(16, 1);
  TrainConfig cfg;
  cfg.method = Method::etd;
  EXPECT_THROW(train_dgi(ds, cfg), config_error);
}
