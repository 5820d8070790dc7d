#include <gtest/gtest.h>

#include <cmath>

#include "dcl/evaluation.hpp"
#include "oracles.hpp"

using namespace dcl;

namespace {

struct Labelled {
  Matrix reps;
  std::vector<std::size_t> labels;
};

Labelled around_axes(std::size_t n, std::size_t K, double noise, Rng& rng) {
  Labelled out{Matrix(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(n)), {}};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % K;
    out.labels.push_back(c);
    out.reps.col(static_cast<Eigen::Index>(i)) =
        Vector::Unit(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(c)) +
        oracle::gaussian(static_cast<Eigen::Index>(K), 1, rng, noise).col(0);
  }
  return out;
}

Labelled random_labels(std::size_t n, std::size_t K, Rng& rng) {
  Labelled out{oracle::gaussian(4, static_cast<Eigen::Index>(n), rng), {}};
  for (std::size_t i = 0; i < n; ++i) out.labels.push_back(rng.index(K));
  return out;
}

}  // namespace

TEST(Probe, SeparableDataIsSolved) {
  Rng rng(81);
  const auto train = around_axes(300, 3, 0.1, rng), eval = around_axes(300, 3, 0.1, rng);
  const auto res = linear_probe(train.reps, train.labels, eval.reps, eval.labels);
  EXPECT_DOUBLE_EQ(res.accuracy, 1.0);
  EXPECT_LT(res.softmax_loss, res.initial_loss);
}

TEST(Probe, RandomLabelsGiveChance) {
  Rng rng(82);
  const std::size_t K = 4, n_eval = 2000;
  const auto train = random_labels(400, K, rng), eval = random_labels(n_eval, K, rng);
  const auto res = linear_probe(train.reps, train.labels, eval.reps, eval.labels);
  const double p = 1.0 / K, sigma = std::sqrt(p * (1 - p) / n_eval);
  EXPECT_LE(std::abs(res.accuracy - p), 3 * sigma);
}

TEST(Probe, ConstantRepsCostLogK) {
  const std::size_t K = 5;
  Matrix reps = Matrix::Zero(3, 50);
  reps.row(0).setOnes();
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < 50; ++i) labels.push_back(i % K);
  const auto res = linear_probe(reps, labels, reps, labels);
  EXPECT_NEAR(res.softmax_loss, std::log(5.0), 1e-12);
  EXPECT_NEAR(res.initial_loss, std::log(5.0), 1e-12);
}

TEST(Probe, NeverWorseThanTheMeanClassifier) {
  Rng rng(83);
  for (int k = 0; k < 20; ++k) {
    const std::size_t K = 2 + rng.index(4);
    const auto data = random_labels(60, K, rng);
    ProbeConfig cfg;
    cfg.t = rng.uniform(0.2, 2.0);
    const auto res = linear_probe(data.reps, data.labels, data.reps, data.labels, cfg);
    EXPECT_LE(res.softmax_loss, res.initial_loss);
    EXPECT_NEAR(res.initial_loss, mean_classifier_loss(data.reps, data.labels, cfg.t).value, 1e-12);
  }
}

TEST(Probe, NeedsTwoClasses) {
  Matrix reps = Matrix::Ones(2, 4);
  const std::vector<std::size_t> labels(4, 1);
  EXPECT_THROW(linear_probe(reps, labels, reps, labels), Error);
}

TEST(Lemma4, ConstantEmbeddingIsTight) {
  for (const char* name : {"paper-uniform", "small-uniform"}) {
    const auto mix = preset_mixture(name);
    const auto K = mix.num_classes();
    const auto f = EmbeddingTable::constant(3, static_cast<Eigen::Index>(mix.num_points()));
    Lemma4Options opt;
    opt.run_probe = false;
    const auto cert = lemma4_chain_check(f, mix, K - 1, opt);
    EXPECT_NEAR(cert.lhs, std::log(static_cast<double>(K)), 1e-12) << name;
    EXPECT_NEAR(cert.rhs, std::log(static_cast<double>(K)), 1e-12) << name;
    EXPECT_TRUE(cert.passed);
  }
}

TEST(Lemma4, HoldsOnRandomEmbeddings) {
  Rng rng(84);
  std::size_t certificates = 0;
  for (std::size_t K : {2, 3, 5}) {
    RandomMixtureOptions mo;
    mo.classes = K;
    mo.points_per_class = 2;
    const auto mix = random_mixture(mo, rng);
    for (int e = 0; e < 100; ++e) {
      const EmbeddingTable f(oracle::gaussian(4, static_cast<Eigen::Index>(mix.num_points()), rng));
      Lemma4Options opt;
      opt.run_probe = false;
      for (std::size_t n = K - 1; n <= 4 * K; ++n) {
        const auto cert = lemma4_chain_check(f, mix, n, opt);
        EXPECT_TRUE(cert.passed) << "K=" << K << " N=" << n << " lhs=" << cert.lhs << " rhs=" << cert.rhs;
        ++certificates;
      }
    }
  }
  EXPECT_GT(certificates, 2000u);
}

TEST(Lemma4, LeftSideIsTheMeanClassifierLoss) {
  Rng rng(85);
  const auto mix = preset_mixture("skewed-prior");
  const EmbeddingTable f(oracle::gaussian(3, static_cast<Eigen::Index>(mix.num_points()), rng));
  Lemma4Options opt;
  opt.t = 0.7;
  opt.tau_plus = mix.tau_plus();
  const auto cert = lemma4_chain_check(f, mix, mix.num_classes(), opt);
  EXPECT_EQ(cert.lhs, mean_classifier_loss(f, mix, 0.7).value);
  EXPECT_NEAR(cert.lhs, oracle::mean_classifier(f.matrix(), mix, 0.7), 1e-12);
  EXPECT_NEAR(cert.rhs, oracle::asymptotic(f.matrix(), mix, static_cast<double>(mix.num_classes()), mix.tau_plus(), 0.7),
              1e-12);
  EXPECT_TRUE(cert.meta.contains("probe_loss_approx"));
}

TEST(Lemma4, TooFewNegatives) {
  const auto mix = preset_mixture("paper-uniform");
  const auto f = EmbeddingTable::constant(3, static_cast<Eigen::Index>(mix.num_points()));
  try {
    lemma4_chain_check(f, mix, mix.num_classes() - 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::BoundPreconditionViolated);
  }
}

TEST(Lemma4, SubtasksRecordedForLargeK) {
  const auto mix = preset_mixture("paper-uniform");
  Rng rng(86);
  const EmbeddingTable f(oracle::gaussian(4, static_cast<Eigen::Index>(mix.num_points()), rng));
  Lemma4Options opt;
  opt.run_probe = false;
  const auto cert = lemma4_chain_check(f, mix, 20, opt);
  ASSERT_TRUE(cert.meta.contains("subtasks"));
  EXPECT_EQ(cert.meta["subtasks"].size(), 3u);
  for (const auto& task : cert.meta["subtasks"]) EXPECT_EQ(task["classes"].size(), 3u);
}
