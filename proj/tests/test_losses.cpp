#include <gtest/gtest.h>

#include <cmath>

#include "dcl/losses.hpp"
#include "oracles.hpp"

using namespace dcl;

namespace {

const double e = std::exp(1.0);

EmbeddingTable random_table(Eigen::Index d, std::size_t S, Rng& rng) {
  return EmbeddingTable(oracle::gaussian(d, static_cast<Eigen::Index>(S), rng));
}

DiscreteClassMixture small_random_mixture(Rng& rng, std::size_t max_points = 8) {
  RandomMixtureOptions opt;
  opt.classes = 2 + rng.index(3);
  opt.points_per_class = 1 + rng.index(std::max<std::size_t>(1, max_points / opt.classes));
  opt.uniform_prior = rng.index(2) == 0;
  return random_mixture(opt, rng);
}

}  // namespace

// --- point losses ----------------------------------------------------------

TEST(BiasedPoint, AllEqualSimilarities) {
  for (std::size_t n : {1u, 2u, 7u}) {
    const std::vector<double> neg(n, 0.3);
    EXPECT_NEAR(biased_loss_point(0.3, neg).value, std::log(1.0 + n), 1e-15);
  }
  EXPECT_NEAR(biased_loss_point(0.0, std::vector<double>{0.0}).value, std::log(2.0), 1e-15);
}

TEST(BiasedPoint, WorkedExample) {
  const std::vector<double> neg = {0.0, 0.5};
  const double expected = -std::log(e / (e + 1.0 + std::exp(0.5)));
  EXPECT_NEAR(biased_loss_point(1.0, neg).value, expected, 1e-15);
  EXPECT_NEAR(biased_loss_point(1.0, neg).value, oracle::biased(1.0, neg, 2.0), 1e-15);
}

TEST(BiasedPoint, VanishingWeight) {
  const std::vector<double> neg = {0.0, 0.5};
  EXPECT_LT(biased_loss_point(1.0, neg, 1e-12).value, 1e-11);
  EXPECT_EQ(biased_loss_point(1.0, neg, 0.0).value, 0.0);
}

TEST(BiasedPoint, NoOverflowAtSmallTemperature) {
  const std::vector<double> neg = {900.0, 1000.0};
  const double v = biased_loss_point(1000.0, neg).value;
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(v, std::log(1.0 + std::exp(-100.0) + 1.0), 1e-12);
}

TEST(GEstimator, Examples) {
  const auto a = g_estimator(std::vector<double>{0, 0}, std::vector<double>{0}, 0.0, 1.0);
  EXPECT_NEAR(a.value, 1.0, 1e-15);
  EXPECT_FALSE(a.floored);

  const auto b = g_estimator(std::vector<double>{1.0}, std::vector<double>{1.0}, 0.1, 1.0);
  EXPECT_NEAR(b.value, (e - 0.1 * e) / 0.9, 1e-14);
  EXPECT_NEAR(b.value, e, 1e-14);
  EXPECT_FALSE(b.floored);

  const auto c = g_estimator(std::vector<double>{-1.0}, std::vector<double>{1.0}, 0.5, 1.0);
  EXPECT_LT(2.0 * (std::exp(-1.0) - 0.5 * e), std::exp(-1.0));
  EXPECT_NEAR(c.value, std::exp(-1.0), 1e-15);
  EXPECT_TRUE(c.floored);
}

TEST(GEstimator, ZeroFloor) {
  const auto g = g_estimator(std::vector<double>{-1.0}, std::vector<double>{1.0}, 0.5, 1.0, FloorMode::ZeroFloor);
  EXPECT_TRUE(g.floored);
  EXPECT_EQ(g.value, 0.0);
}

TEST(DebiasedPoint, AllEqualSimilarities) {
  for (double tau : {0.0, 0.1, 0.3}) {
    const std::vector<double> u(5, 0.2), v(3, 0.2);
    EXPECT_NEAR(debiased_loss_point(0.2, u, v, tau, 1.0).value, std::log(6.0), 1e-14);
  }
}

TEST(DebiasedPoint, ReducesToBiasedExample) {
  const std::vector<double> u = {0.0, 0.5}, v = {1.0};
  EXPECT_EQ(debiased_loss_point(1.0, u, v, 0.0, 1.0).value, biased_loss_point(1.0, u).value);
  EXPECT_NEAR(debiased_loss_point(1.0, u, v, 0.0, 1.0).value, -std::log(e / (e + 1.0 + std::exp(0.5))), 1e-15);
}

TEST(DebiasedPoint, MatchesReferenceOnRandomInputs) {
  Rng rng(31);
  for (int k = 0; k < 2000; ++k) {
    const std::size_t n = 1 + rng.index(10), m = 1 + rng.index(5);
    const double t = rng.uniform(0.2, 2.0), tau = rng.uniform(0.0, 0.6);
    const auto u = oracle::gaussian_list(n, rng, 1.0 / t), v = oracle::gaussian_list(m, rng, 1.0 / t);
    const double sp = rng.normal() / t;
    EXPECT_NEAR(debiased_loss_point(sp, u, v, tau, t).value, oracle::debiased(sp, u, v, tau, t), 1e-12);
    EXPECT_NEAR(debiased_loss_point(sp, u, v, tau, t, FloorMode::ZeroFloor).value,
                oracle::debiased(sp, u, v, tau, t, true), 1e-12);
  }
}

TEST(DebiasedPoint, ReductionIdentityProperty) {
  Rng rng(32);
  int checked = 0;
  for (int k = 0; k < 1000; ++k) {
    const std::size_t n = 1 + rng.index(20), m = 1 + rng.index(5);
    const auto u = oracle::gaussian_list(n, rng), v = oracle::gaussian_list(m, rng);
    const double sp = rng.normal();
    if (g_estimator(u, v, 0.0, 1.0).floored) continue;
    ++checked;
    EXPECT_NEAR(debiased_loss_point(sp, u, v, 0.0, 1.0).value, biased_loss_point(sp, u).value, 1e-12);
  }
  EXPECT_GT(checked, 500);
}

TEST(DebiasedPoint, MonotoneClamp) {
  Rng rng(33);
  for (int k = 0; k < 1000; ++k) {
    const std::size_t n = 1 + rng.index(6), m = 1 + rng.index(4);
    const double t = rng.uniform(0.1, 1.0), tau = rng.uniform(0.0, 0.95);
    const auto u = oracle::gaussian_list(n, rng, 1.0 / t), v = oracle::gaussian_list(m, rng, 1.0 / t);
    const double sp = rng.normal() / t;
    const auto ge = g_estimator(u, v, tau, t, FloorMode::ExpFloor);
    const auto gz = g_estimator(u, v, tau, t, FloorMode::ZeroFloor);
    EXPECT_GE(ge.value, gz.value);
    EXPECT_GE(debiased_loss_point(sp, u, v, tau, t).value,
              debiased_loss_point(sp, u, v, tau, t, FloorMode::ZeroFloor).value);
  }
}

TEST(DebiasedPoint, MomentsFormAgrees) {
  Rng rng(34);
  for (int k = 0; k < 500; ++k) {
    const std::size_t n = 1 + rng.index(8), m = 1 + rng.index(4);
    const double tau = rng.uniform(0.0, 0.5);
    const auto u = oracle::gaussian_list(n, rng), v = oracle::gaussian_list(m, rng);
    double su = 0, sv = 0;
    for (double s : u) su += std::exp(s);
    for (double s : v) sv += std::exp(s);
    EXPECT_NEAR(debiased_loss_moments(0.3, su, n, sv, m, tau, 1.0).value,
                debiased_loss_point(0.3, u, v, tau, 1.0).value, 1e-12);
    EXPECT_NEAR(biased_loss_moments(0.3, su, n).value, biased_loss_point(0.3, u).value, 1e-12);
  }
}

// --- batch losses ----------------------------------------------------------

TEST(BatchLoss, IdenticalEmbeddings) {
  const Matrix views = Matrix::Constant(3, 4, 1.0 / std::sqrt(3.0));
  EXPECT_NEAR(debiased_loss_batch(views, 0.1, 0.5).value, std::log(3.0), 1e-14);
}

TEST(BatchLoss, ReducesToBiasedAtZeroTau) {
  Rng rng(35);
  for (int k = 0; k < 1000; ++k) {
    const std::size_t B = 2 + rng.index(6);
    const Matrix views = oracle::unit_columns(oracle::gaussian(2 + rng.index(6), 2 * B, rng));
    ViewBatch vb{views, Matrix(views.rows(), 0), {}};
    const double t = rng.uniform(0.2, 1.0);
    EXPECT_NEAR(batch_loss(vb, {BatchLossKind::Debiased, 0.0, t}).value,
                batch_loss(vb, {BatchLossKind::Biased, 0.0, t}).value, 1e-12);
  }
}

TEST(BatchLoss, AssembledFromPointCalls) {
  Rng rng(36);
  const std::size_t B = 3;
  const double tau = 0.1, t = 0.5;
  const Matrix views = oracle::unit_columns(oracle::gaussian(4, 2 * B, rng));
  double total = 0.0;
  for (std::size_t r = 0; r < 2 * B; ++r) {
    const std::size_t p = (r + B) % (2 * B);
    std::vector<double> u;
    for (std::size_t k = 0; k < 2 * B; ++k)
      if (k != r && k != p) u.push_back(views.col(r).dot(views.col(k)) / t);
    const double sp = views.col(r).dot(views.col(p)) / t;
    total += debiased_loss_point(sp, u, std::vector<double>{sp}, tau, t).value;
  }
  EXPECT_NEAR(debiased_loss_batch(views, tau, t).value, total / 6.0, 1e-14);
}

TEST(BatchLoss, MatchesPseudocodePort) {
  Rng rng(37);
  for (int k = 0; k < 200; ++k) {
    const std::size_t B = 2 + rng.index(8);
    const double t = rng.uniform(0.1, 1.0);
    const Matrix views = oracle::unit_columns(oracle::gaussian(2 + rng.index(10), 2 * B, rng));
    EXPECT_NEAR(debiased_loss_batch(views, 0.1, t).value, oracle::figure3_batch(views, 0.1, t), 1e-12);
  }
}

TEST(BatchLoss, UnbiasedSkipsSameClassViews) {
  Rng rng(38);
  const std::size_t B = 4;
  const Matrix views = oracle::unit_columns(oracle::gaussian(3, 2 * B, rng));
  const std::vector<std::size_t> labels = {0, 0, 1, 1};
  ViewBatch vb{views, Matrix(3, 0), labels};
  const auto roles = batch_role_losses(vb, {BatchLossKind::Unbiased, 0.0, 1.0});
  // role 0: partner 4; same-class views 1 and 5 drop out
  const double sp = views.col(0).dot(views.col(4));
  std::vector<double> neg;
  for (int k : {2, 3, 6, 7}) neg.push_back(views.col(0).dot(views.col(k)));
  EXPECT_NEAR(roles[0], oracle::biased(sp, neg, 4.0), 1e-14);

  ViewBatch same{views, Matrix(3, 0), {2, 2, 2, 2}};
  EXPECT_EQ(batch_loss(same, {BatchLossKind::Unbiased, 0.0, 1.0}).value, 0.0);
}

TEST(BatchLoss, RejectsTinyBatches) {
  const Matrix views = Matrix::Identity(2, 2);
  try {
    debiased_loss_batch(views, 0.1, 1.0);
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), Errc::BatchTooSmall);
  }
}

// --- population losses -----------------------------------------------------

TEST(UnbiasedExact, TwoPointExample) {
  const auto mix = preset_mixture("two-point");
  const EmbeddingTable f(Matrix::Identity(2, 2));
  EXPECT_NEAR(unbiased_loss_exact(f, mix, 1, 1.0).value, -std::log(e / (e + 1.0)), 1e-15);
}

TEST(UnbiasedExact, MatchesRecursiveEnumeration) {
  Rng rng(39);
  for (int k = 0; k < 30; ++k) {
    const auto mix = small_random_mixture(rng);
    const auto f = random_table(3, mix.num_points(), rng);
    const std::size_t n = 1 + rng.index(3);
    const double q = rng.uniform(0.5, 5.0);
    EXPECT_NEAR(unbiased_loss_exact(f, mix, n, q).value, oracle::unbiased_enumeration(f.matrix(), mix, n, q, 1.0),
                1e-12);
  }
}

TEST(UnbiasedExact, MatchesMonteCarlo) {
  Rng rng(40);
  const auto mix = small_random_mixture(rng);
  const auto f = random_table(3, mix.num_points(), rng);
  const std::size_t n = 3;
  const Matrix sims = f.similarities(1.0);
  RunningStats st;
  for (int k = 0; k < 1000000; ++k) {
    const std::size_t x = mix.sample_marginal(rng), xp = mix.sample_positive(x, rng);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += std::exp(sims(x, mix.sample_negative(x, rng)));
    st.add(std::log1p(sum / std::exp(sims(x, xp))));
  }
  EXPECT_LE(std::abs(st.mean() - unbiased_loss_exact(f, mix, n).value), 3 * st.stderr_of_mean());
}

TEST(ConstantEmbedding, ClosedForms) {
  Rng rng(41);
  for (int k = 0; k < 20; ++k) {
    const auto mix = small_random_mixture(rng);
    const auto f = EmbeddingTable::constant(3, static_cast<Eigen::Index>(mix.num_points()));
    const std::size_t n = 1 + rng.index(3);
    EXPECT_NEAR(unbiased_loss_exact(f, mix, n).value, std::log(1.0 + n), 1e-12);
    EXPECT_NEAR(binomial_oracle(f, mix, n).loss.value, std::log(1.0 + n), 1e-12);
    const double q = rng.uniform(1.0, 50.0);
    EXPECT_NEAR(asymptotic_debiased_exact(f, mix, q, mix.tau_plus()).value, std::log(1.0 + q), 1e-12);
    EXPECT_NEAR(mean_classifier_loss(f, mix).value, std::log(static_cast<double>(mix.num_classes())), 1e-12);
  }
}

TEST(AsymptoticDebiased, MatchesReference) {
  Rng rng(42);
  for (int k = 0; k < 50; ++k) {
    const auto mix = small_random_mixture(rng);
    const auto f = random_table(4, mix.num_points(), rng);
    const double q = rng.uniform(1.0, 20.0), tau = rng.uniform(0.0, 0.2);
    try {
      EXPECT_NEAR(asymptotic_debiased_exact(f, mix, q, tau).value, oracle::asymptotic(f.matrix(), mix, q, tau, 1.0),
                  1e-12);
    } catch (const Error& err) {
      EXPECT_EQ(err.code(), Errc::NegativeDenominator);
    }
  }
}

TEST(AsymptoticDebiased, ZeroTauIsBiasedPopulationLimit) {
  // At tau+ = 0 the inner term is E_p e^s: the biased loss with its negative
  // sum replaced by its mean. For N = 1 with a point-mass marginal that is exact.
  Rng rng(43);
  MixtureSpec spec;
  spec.points = Matrix::Identity(2, 2);
  spec.labels = {0, 1};
  spec.conditionals = Matrix::Identity(2, 2);
  spec.prior = Vector::Constant(2, 0.5);
  const auto mix = build_discrete(spec);
  const auto f = random_table(3, 2, rng);
  const double direct = oracle::asymptotic(f.matrix(), mix, 1.0, 0.0, 1.0);
  EXPECT_NEAR(asymptotic_debiased_exact(f, mix, 1.0, 0.0).value, direct, 1e-14);
  // and with N -> infinity the biased enumeration approaches it
  const double b6 = oracle::biased_enumeration(f.matrix(), mix, 6, 1.0, 1.0);
  const double b2 = oracle::biased_enumeration(f.matrix(), mix, 2, 1.0, 1.0);
  EXPECT_LT(std::abs(b6 - direct), std::abs(b2 - direct) + 1e-15);
}

TEST(AsymptoticDebiased, MonteCarloConvergence) {
  Rng rng(44);
  const auto mix = preset_mixture("small-uniform");
  const auto f = random_table(4, mix.num_points(), rng);
  const std::size_t n = 10000, m = 10000;
  const double tau = mix.tau_plus();
  const Matrix sims = f.similarities(1.0);
  const Matrix es = sims.array().exp().matrix();
  RunningStats st;
  for (int k = 0; k < 2000; ++k) {
    const std::size_t x = mix.sample_marginal(rng), xp = mix.sample_positive(x, rng);
    double su = 0, sv = 0;
    for (std::size_t i = 0; i < n; ++i) su += es(x, mix.sample_marginal(rng));
    for (std::size_t j = 0; j < m; ++j) sv += es(x, mix.sample_positive(x, rng));
    st.add(debiased_loss_moments(sims(x, xp), su, n, sv, m, tau, 1.0).value);
  }
  const double exact = asymptotic_debiased_exact(f, mix, static_cast<double>(n), tau).value;
  EXPECT_LE(std::abs(st.mean() - exact), 3 * st.stderr_of_mean() + 1e-3);
}

TEST(AsymptoticDebiased, NegativeDenominatorSurfaces) {
  // One class with a far-away second point: tau+ close to 1 drives the inner term negative.
  const auto mix = preset_mixture("two-point");
  const EmbeddingTable f(Matrix::Identity(2, 2));
  try {
    asymptotic_debiased_exact(f, mix, 1.0, 0.9);
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), Errc::NegativeDenominator);
  }
}

TEST(BinomialOracle, SingleNegativeEqualsTrueNegativeExpectation) {
  Rng rng(45);
  for (int k = 0; k < 20; ++k) {
    const auto mix = small_random_mixture(rng);
    const auto f = random_table(3, mix.num_points(), rng);
    EXPECT_NEAR(binomial_oracle(f, mix, 1).loss.value, oracle::unbiased_enumeration(f.matrix(), mix, 1, 1.0, 1.0),
                1e-12);
  }
}

TEST(BinomialOracle, MatchesEnumeration) {
  Rng rng(46);
  for (int k = 0; k < 50; ++k) {
    RandomMixtureOptions opt;
    opt.classes = 2 + rng.index(4);
    opt.points_per_class = 1 + rng.index(10 / opt.classes);
    opt.uniform_prior = k % 2 == 0;
    const auto mix = random_mixture(opt, rng);
    const auto f = random_table(4, mix.num_points(), rng);
    for (std::size_t n = 1; n <= 6; ++n) {
      const auto o = binomial_oracle(f, mix, n);
      const double exact = unbiased_loss_exact(f, mix, n).value;
      EXPECT_LE(std::abs(o.loss.value - exact) / exact, 1e-9) << "N=" << n;
      EXPECT_GE(o.condition_number, 1.0);
    }
  }
}

TEST(BinomialOracle, PaperSizedExample) {
  Rng rng(47);
  const auto mix = random_mixture({.classes = 4, .points_per_class = 2, .feature_dim = 4}, rng);
  const auto f = random_table(5, 8, rng);
  EXPECT_NEAR(binomial_oracle(f, mix, 4).loss.value, oracle::unbiased_enumeration(f.matrix(), mix, 4, 4.0, 1.0),
              1e-9);
}

TEST(BinomialOracle, Preconditions) {
  const auto mix = preset_mixture("two-point");
  const EmbeddingTable f(Matrix::Identity(2, 2));
  EXPECT_THROW(binomial_oracle(f, mix, 0), Error);
  try {
    binomial_oracle(f, mix, kOracleMaxNegatives + 1);
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), Errc::OracleRangeExceeded);
  }
}

TEST(SoftmaxCE, Examples) {
  EXPECT_NEAR(softmax_ce(std::vector<double>{1.0, 0.0}, 0).value, -std::log(e / (e + 1.0)), 1e-15);
  EXPECT_NEAR(softmax_ce(std::vector<double>{2.0, 2.0, 2.0}, 1).value, std::log(3.0), 1e-15);
}

TEST(MeanClassifier, MatchesReference) {
  Rng rng(48);
  for (int k = 0; k < 30; ++k) {
    const auto mix = small_random_mixture(rng);
    const auto f = random_table(3, mix.num_points(), rng);
    const double t = rng.uniform(0.3, 2.0);
    EXPECT_NEAR(mean_classifier_loss(f, mix, t).value, oracle::mean_classifier(f.matrix(), mix, t), 1e-12);
  }
}

TEST(MeanClassifier, SeparatedOneHotMeans) {
  MixtureSpec spec;
  spec.points = Matrix::Identity(3, 3);
  spec.labels = {0, 1, 2};
  spec.conditionals = Matrix::Identity(3, 3);
  spec.prior = Vector::Constant(3, 1.0 / 3.0);
  const auto mix = build_discrete(spec);
  const EmbeddingTable f(Matrix::Identity(3, 3));
  EXPECT_LT(mean_classifier_loss(f, mix).value, std::log(3.0));
}

TEST(Budget, EnumerationRefusesHugeTables) {
  Rng rng(49);
  const auto mix = random_mixture({.classes = 10, .points_per_class = 3, .feature_dim = 4}, rng);
  const auto f = random_table(3, mix.num_points(), rng);
  try {
    unbiased_loss_exact(f, mix, 6);
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), Errc::BudgetExceeded);
  }
}
