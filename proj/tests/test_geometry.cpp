#include <gtest/gtest.h>

#include <cmath>

#include "dcl/geometry.hpp"
#include "dcl/losses.hpp"
#include "oracles.hpp"

using namespace dcl;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

}  // namespace

TEST(Normalize, ThreeFourFive) {
  const auto u = normalize(vec({3, 4}));
  EXPECT_NEAR(u.coords()(0), 0.6, 1e-15);
  EXPECT_NEAR(u.coords()(1), 0.8, 1e-15);
}

TEST(Normalize, UnitInputUnchanged) {
  const auto u = normalize(vec({1, 0, 0}));
  EXPECT_EQ(u.coords(), vec({1, 0, 0}));
}

TEST(Normalize, Diagonal) {
  const auto u = normalize(vec({1, 1}));
  EXPECT_NEAR(u.coords()(0), 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(u.coords()(1), 1.0 / std::sqrt(2.0), 1e-15);
}

TEST(Normalize, Errors) {
  try {
    normalize(vec({0, 0, 0}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ZeroVector);
  }
  try {
    normalize(vec({2}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::DimensionTooSmall);
  }
}

TEST(Normalize, ScaleInvariantAndUnitNorm) {
  Rng rng(11);
  for (int k = 0; k < 200; ++k) {
    const Vector v = oracle::gaussian(2 + static_cast<Eigen::Index>(rng.index(30)), 1, rng).col(0);
    const double c = std::exp(rng.uniform(-5.0, 5.0));
    const auto a = normalize(v), b = normalize(c * v);
    EXPECT_LE((a.coords() - b.coords()).lpNorm<Eigen::Infinity>(), 1e-15);
    EXPECT_NEAR(a.coords().norm(), 1.0, 1e-12);
  }
}

TEST(NormalizeJacobian, RadialDirectionVanishes) {
  const Matrix j = normalize_jacobian(vec({1, 0}));
  EXPECT_LE((j * vec({1, 0})).norm(), 1e-15);
}

TEST(NormalizeJacobian, ClosedFormAtTwoZero) {
  const Matrix j = normalize_jacobian(vec({2, 0}));
  EXPECT_DOUBLE_EQ(j(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(j(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(j(1, 0), 0.0);
  EXPECT_DOUBLE_EQ(j(1, 1), 0.5);
}

TEST(NormalizeJacobian, MatchesCentralDifferences) {
  Rng rng(12);
  const double h = 1e-6;
  for (Eigen::Index d : {2, 8, 64}) {
    for (int k = 0; k < 100; ++k) {
      const Vector v = oracle::gaussian(d, 1, rng).col(0);
      const Matrix j = normalize_jacobian(v);
      Matrix fd(d, d);
      for (Eigen::Index i = 0; i < d; ++i) {
        Vector p = v, m = v;
        p(i) += h;
        m(i) -= h;
        fd.col(i) = (normalize(p).coords() - normalize(m).coords()) / (2 * h);
      }
      const double rel = (j - fd).lpNorm<Eigen::Infinity>() / fd.lpNorm<Eigen::Infinity>();
      EXPECT_LE(rel, 1e-6) << "d=" << d;
      const Vector up = oracle::gaussian(d, 1, rng).col(0);
      EXPECT_LE((normalize_jacobian_apply(v, up) - j * up).norm(), 1e-12);
    }
  }
}

TEST(Similarity, Examples) {
  const auto a = normalize(vec({1, 0})), b = normalize(vec({0, 1})), c = normalize(vec({-1, 0}));
  EXPECT_DOUBLE_EQ(similarity(a, a, 1.0).value, 1.0);
  EXPECT_DOUBLE_EQ(similarity(a, c, 0.5).value, -2.0);
  EXPECT_DOUBLE_EQ(similarity(a, b, 1.0).value, 0.0);
  EXPECT_THROW(similarity(a, b, 0.0), Error);
}

TEST(Similarity, RotationInvariance) {
  Rng rng(13);
  for (int k = 0; k < 100; ++k) {
    const Eigen::Index d = 2 + static_cast<Eigen::Index>(rng.index(10));
    const Matrix r = oracle::random_orthogonal(d, rng);
    const auto a = normalize(oracle::gaussian(d, 1, rng).col(0));
    const auto b = normalize(oracle::gaussian(d, 1, rng).col(0));
    const double t = rng.uniform(0.1, 2.0);
    const double s = similarity(a, b, t).value;
    const double sr = similarity(normalize(r * a.coords()), normalize(r * b.coords()), t).value;
    EXPECT_NEAR(s, sr, 1e-12);
  }
}

TEST(Similarity, JointRotationLeavesBatchLossesUnchanged) {
  Rng rng(14);
  for (int k = 0; k < 50; ++k) {
    const Eigen::Index d = 2 + static_cast<Eigen::Index>(rng.index(8));
    const std::size_t B = 2 + rng.index(5);
    const Matrix r = oracle::random_orthogonal(d, rng);
    const Matrix views = oracle::unit_columns(oracle::gaussian(d, static_cast<Eigen::Index>(2 * B), rng));
    const Matrix extras = oracle::unit_columns(oracle::gaussian(d, static_cast<Eigen::Index>(B), rng));
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < B; ++i) labels.push_back(rng.index(3));
    for (auto kind : {BatchLossKind::Biased, BatchLossKind::Debiased, BatchLossKind::Unbiased}) {
      BatchLossSpec spec{kind, 0.1, 0.5, kind == BatchLossKind::Debiased ? 2u : 1u};
      ViewBatch a{views, kind == BatchLossKind::Debiased ? extras : Matrix(d, 0), labels};
      ViewBatch b{oracle::unit_columns(r * a.views), kind == BatchLossKind::Debiased ? oracle::unit_columns(r * extras) : Matrix(d, 0), labels};
      EXPECT_NEAR(batch_loss(a, spec).value, batch_loss(b, spec).value, 1e-12);
    }
  }
}
