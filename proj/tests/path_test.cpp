#include "sobbo/path.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "sobbo/rng.hpp"

using namespace sobbo;

namespace {

std::vector<double> rand_point(std::size_t d, Rng& rng) {
  std::vector<double> p(d);
  for (auto& v : p) v = rng.uniform(0, 1);
  return p;
}

// field(z) = z, the gradient of |z|^2 / 2
void identity_field(std::span<const double> z, std::span<double> out) {
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i];
}

}  // namespace

TEST(LinearPath, MidpointAndPinning) {
  std::vector<double> a{0, 0}, b{1, 2};
  PolynomialPath p = linear_path(a, b);
  std::vector<double> r(2);
  p.eval(0.5, r);
  EXPECT_DOUBLE_EQ(r[0], 0.5);
  EXPECT_DOUBLE_EQ(r[1], 1.0);
  p.eval(0.0, r);
  EXPECT_DOUBLE_EQ(r[0], 0.0);
  EXPECT_DOUBLE_EQ(r[1], 0.0);
  p.eval(1.0, r);
  EXPECT_DOUBLE_EQ(r[0], 1.0);
  EXPECT_DOUBLE_EQ(r[1], 2.0);
}

TEST(LinearPath, DegenerateConstantPath) {
  std::vector<double> a{0.3, -0.7, 0.1};
  PolynomialPath p = linear_path(a, a);
  std::vector<double> r(3);
  for (double t : {0.0, 0.25, 0.8, 1.0}) {
    p.eval(t, r);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(r[i], a[i]);
  }
}

TEST(LinearPath, DimensionMismatchIsAnError) {
  std::vector<double> a{1, 2}, b{1, 2, 3};
  EXPECT_THROW(linear_path(a, b), shape_error);
}

TEST(SamplePath, ClosureArithmeticAtDegreeTwo) {
  // d=1, start 0, end 1, tau 2: a2 = 1 - a1, so r(t) = a1 t + (1-a1) t^2.
  Rng rng(4);
  std::vector<double> a{0.0}, b{1.0};
  PolynomialPath p = sample_path(a, b, 2, rng);
  const double a1 = p.coeff(0, 1);
  EXPECT_DOUBLE_EQ(p.coeff(0, 2), 1.0 - a1);
  std::vector<double> r(1);
  p.eval(1.0, r);
  EXPECT_NEAR(r[0], 1.0, 1e-15);
}

TEST(SamplePath, DegreeOneIsLinearRegardlessOfRng) {
  Rng r1(1), r2(999);
  std::vector<double> a{0.2, 0.8}, b{0.9, 0.1};
  PolynomialPath p1 = sample_path(a, b, 1, r1);
  PolynomialPath p2 = sample_path(a, b, 1, r2);
  PolynomialPath lin = linear_path(a, b);
  EXPECT_EQ(p1.coeffs, lin.coeffs);
  EXPECT_EQ(p2.coeffs, lin.coeffs);
}

TEST(SamplePath, DegreeZeroRejected) {
  Rng rng(1);
  std::vector<double> a{0}, b{1};
  EXPECT_THROW(sample_path(a, b, 0, rng), config_error);
}

TEST(SamplePath, PinningHoldsForThousandDegreeTenPaths) {
  Rng rng(20240901);
  const std::size_t d = 6;
  for (int trial = 0; trial < 1000; ++trial) {
    auto a = rand_point(d, rng);
    auto b = rand_point(d, rng);
    PolynomialPath p = sample_path(a, b, 10, rng);
    std::vector<double> r(d);
    p.eval(0.0, r);
    for (std::size_t i = 0; i < d; ++i) ASSERT_LE(std::abs(r[i] - a[i]), 1e-12);
    p.eval(1.0, r);
    for (std::size_t i = 0; i < d; ++i) ASSERT_LE(std::abs(r[i] - b[i]), 1e-12);
  }
}

TEST(PathIntegral, IdentityFieldGivesHalfD) {
  // integral of z . dz from 0 to the all-ones vector = d/2 for any path.
  Rng rng(9);
  const std::size_t d = 5;
  std::vector<double> a(d, 0.0), b(d, 1.0);
  QuadratureSpec quad;
  quad.steps = 512;
  PolynomialPath p = sample_path(a, b, 10, rng);
  const double val = path_integral(identity_field, p, quad);
  EXPECT_NEAR(val, d / 2.0, 1e-3);
}

TEST(PathIntegral, AnalyticGradientAlongLinearPath) {
  // field = grad of g(z) = sum z_i^2, linear path 0 -> (1,1,1): integral 3.
  auto field = [](std::span<const double> z, std::span<double> out) {
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = 2.0 * z[i];
  };
  std::vector<double> a{0, 0, 0}, b{1, 1, 1};
  QuadratureSpec quad;
  const double val = path_integral(field, linear_path(a, b), quad);
  EXPECT_NEAR(val, 3.0, 1e-9);
}

TEST(PathIntegral, RotationalFieldIsPathDependent) {
  // field (-z2, z1): linear path (1,0)->(0,1) vs a degree-3 sampled path
  // differ by more than 1e-2; both checked against a fine-quadrature oracle.
  auto field = [](std::span<const double> z, std::span<double> out) {
    out[0] = -z[1];
    out[1] = z[0];
  };
  std::vector<double> a{1, 0}, b{0, 1};
  Rng rng(31);
  PolynomialPath lin = linear_path(a, b);
  PolynomialPath curved = sample_path(a, b, 3, rng);
  QuadratureSpec quad;

  auto oracle = [&](const PolynomialPath& p) {
    return oracles::fine_line_integral(
        [&](const std::vector<double>& z) {
          return std::vector<double>{-z[1], z[0]};
        },
        [&](double t) {
          std::vector<double> r(2);
          p.eval(t, r);
          return r;
        },
        [&](double t) {
          std::vector<double> v(2);
          p.derivative(t, v);
          return v;
        },
        100000);
  };

  const double il = path_integral(field, lin, quad);
  const double ic = path_integral(field, curved, quad);
  EXPECT_NEAR(il, oracle(lin), 1e-6);
  EXPECT_NEAR(ic, oracle(curved), 1e-4);
  EXPECT_GT(std::abs(il - ic), 1e-2);
}

TEST(PathIntegral, ConservativeIdentityOnRandomQuadratics) {
  // For analytic grad g of unit-cube quadratics and any sampled path,
  // |integral - (g(end) - g(start))| stays within 1e-3 at K = 512.
  Rng rng(77);
  const std::size_t d = 6;
  QuadratureSpec quad;
  quad.steps = 512;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> A(d * d), bvec(d);
    for (auto& v : A) v = rng.uniform(-1, 1);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < i; ++j) {
        const double s = 0.5 * (A[i * d + j] + A[j * d + i]);
        A[i * d + j] = A[j * d + i] = s;
      }
    for (auto& v : bvec) v = rng.uniform(-1, 1);
    auto g = [&](const std::vector<double>& z) {
      double acc = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        acc += bvec[i] * z[i];
        for (std::size_t j = 0; j < d; ++j) acc += 0.5 * z[i] * A[i * d + j] * z[j];
      }
      return acc;
    };
    auto field = [&](std::span<const double> z, std::span<double> out) {
      for (std::size_t i = 0; i < d; ++i) {
        double acc = bvec[i];
        for (std::size_t j = 0; j < d; ++j) acc += A[i * d + j] * z[j];
        out[i] = acc;
      }
    };
    auto s = rand_point(d, rng);
    auto e = rand_point(d, rng);
    PolynomialPath p = sample_path(s, e, 10, rng);
    const double val = path_integral(field, p, quad);
    EXPECT_LE(std::abs(val - (g(e) - g(s))), 1e-3);
  }
}

TEST(PathIntegral, ReversalAntisymmetry) {
  Rng rng(55);
  const std::size_t d = 4;
  auto field = [](std::span<const double> z, std::span<double> out) {
    for (std::size_t i = 0; i < z.size(); ++i)
      out[i] = std::tanh(z[i]) + 0.3 * z[(i + 1) % z.size()];
  };
  for (int trial = 0; trial < 10; ++trial) {
    auto a = rand_point(d, rng);
    auto b = rand_point(d, rng);
    PolynomialPath p = sample_path(a, b, 7, rng);
    QuadratureSpec quad;
    quad.steps = 128;
    const double fwd = path_integral(field, p, quad);
    const double bwd = path_integral(field, p.reversed(), quad);
    EXPECT_NEAR(fwd, -bwd, 1e-10);
  }
}

TEST(PathIntegral, RefinementErrorNonIncreasing) {
  Rng rng(66);
  const std::size_t d = 3;
  auto g = [](const std::vector<double>& z) {
    double acc = 0.0;
    for (double v : z) acc += std::sin(v) + v * v;
    return acc;
  };
  auto field = [](std::span<const double> z, std::span<double> out) {
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = std::cos(z[i]) + 2.0 * z[i];
  };
  for (int trial = 0; trial < 10; ++trial) {
    auto a = rand_point(d, rng);
    auto b = rand_point(d, rng);
    PolynomialPath p = sample_path(a, b, 6, rng);
    const double exact = g(b) - g(a);
    double prev = 1e100;
    for (std::size_t k : {8u, 64u, 512u}) {
      QuadratureSpec quad;
      quad.steps = k;
      const double err = std::abs(path_integral(field, p, quad) - exact);
      EXPECT_LE(err, prev + 1e-14);
      prev = err;
    }
  }
}

TEST(PathIntegral, BatchedTapeVersionMatchesPlain) {
  // The tape path-integral (used inside losses) must agree with the plain
  // evaluation for a linear tape field.
  Rng rng(88);
  const std::size_t d = 3;
  Tensor w = Tensor::zeros({d, d});
  for (auto& v : w.data) v = rng.uniform(-1, 1);

  std::vector<PolynomialPath> paths;
  for (int i = 0; i < 4; ++i) {
    auto a = rand_point(d, rng);
    auto b = rand_point(d, rng);
    paths.push_back(sample_path(a, b, 5, rng));
  }
  QuadratureSpec quad;
  quad.steps = 64;
  PathQuadBatch batch = build_quad_batch(paths, quad);

  Tape t;
  NodeId pts = t.constant(batch.points);
  NodeId out = t.matmul(pts, t.constant(w));
  NodeId integrals = path_integrals_from_field(t, batch, out);

  auto plain_field = [&](std::span<const double> z, std::span<double> o) {
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < d; ++i) acc += z[i] * w(i, j);
      o[j] = acc;
    }
  };
  for (std::size_t p = 0; p < paths.size(); ++p)
    EXPECT_NEAR(t.val(integrals)(p), path_integral(plain_field, paths[p], quad), 1e-12);
}

TEST(PathIntegral, InvalidStepCountRejected) {
  QuadratureSpec quad;
  quad.steps = 0;
  std::vector<double> a{0}, b{1};
  EXPECT_THROW(path_integral(identity_field, linear_path(a, b), quad), config_error);
}

TEST(PathIntegral, NonFiniteFieldIsAnError) {
  auto field = [](std::span<const double>, std::span<double> out) {
    out[0] = std::numeric_limits<double>::infinity();
  };
  QuadratureSpec quad;
  std::vector<double> a{0}, b{1};
  EXPECT_THROW(path_integral(field, linear_path(a, b), quad), numeric_error);
}
