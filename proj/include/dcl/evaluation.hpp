// Downstream supervised evaluation: softmax-regression probe on frozen
// representations, the mean classifier, and the supervised bound chain
//   L_Sup(f) <= L^mu_Sup(f) <= asymptotic debiased loss with Q = N.
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "dcl/certificate.hpp"
#include "dcl/error.hpp"
#include "dcl/geometry.hpp"
#include "dcl/losses.hpp"
#include "dcl/numeric.hpp"
#include "dcl/rng.hpp"
#include "dcl/worldmodel.hpp"

namespace dcl {

struct ProbeConfig {
  double t = 1.0;               // only scales the mean-classifier starting point
  double grad_tolerance = 1e-8;
  std::size_t max_iterations = 2000;
};

struct ProbeResult {
  double accuracy = 0.0;
  double softmax_loss = 0.0;      // training objective at the returned weights
  double initial_loss = 0.0;      // mean-classifier loss it started from
  double grad_norm = 0.0;
  std::size_t iterations = 0;
  std::vector<std::size_t> classes;  // label of each weight row
  Matrix weights;                    // K x d
};

namespace detail {

struct ProbeObjective {
  const Matrix& reps;
  const std::vector<Eigen::Index>& rows;  // class row per sample
  const std::vector<double>& weights;     // normalized to sum 1

  /// Weighted mean cross entropy of logits W f; fills the gradient when asked.
  double operator()(const Matrix& W, Matrix* grad) const {
    const Matrix logits = W * reps;
    if (grad) grad->setZero(W.rows(), W.cols());
    CompensatedSum total;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      const double w = weights[static_cast<std::size_t>(j)];
      if (w == 0.0) continue;
      const double lse = log_sum_exp(std::span<const double>(logits.col(j).data(), logits.rows()));
      total += w * (lse - logits(rows[static_cast<std::size_t>(j)], j));
      if (grad) {
        Vector p = (logits.col(j).array() - lse).exp().matrix();
        p(rows[static_cast<std::size_t>(j)]) -= 1.0;
        *grad += w * p * reps.col(j).transpose();
      }
    }
    return total.value();
  }
};

}  // namespace detail

/// Full-batch gradient descent with Armijo backtracking, started from the
/// mean classifier (rows mu_c / t). The objective never increases, so the
/// result is at most the mean-classifier loss on the same data.
inline ProbeResult linear_probe(const Matrix& train_reps, std::span<const std::size_t> train_labels,
                                const Matrix& eval_reps, std::span<const std::size_t> eval_labels,
                                const ProbeConfig& cfg = {}, std::span<const double> train_weights = {}) {
  require(static_cast<std::size_t>(train_reps.cols()) == train_labels.size(), Errc::InvalidArgument,
          "train reps and labels disagree in length");
  require(static_cast<std::size_t>(eval_reps.cols()) == eval_labels.size(), Errc::InvalidArgument,
          "eval reps and labels disagree in length");
  require(train_weights.empty() || train_weights.size() == train_labels.size(), Errc::InvalidArgument,
          "weights must match the training set");

  ProbeResult res;
  std::vector<double> w(train_labels.size(), 1.0);
  if (!train_weights.empty()) w.assign(train_weights.begin(), train_weights.end());
  for (std::size_t j = 0; j < w.size(); ++j)
    if (w[j] > 0.0 && std::find(res.classes.begin(), res.classes.end(), train_labels[j]) == res.classes.end())
      res.classes.push_back(train_labels[j]);
  std::sort(res.classes.begin(), res.classes.end());
  require(res.classes.size() >= 2, Errc::SingleClassData, "probe needs at least two classes present");
  const double wsum = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& x : w) x /= wsum;

  const auto K = static_cast<Eigen::Index>(res.classes.size());
  auto row_of = [&](std::size_t label) -> Eigen::Index {
    const auto it = std::lower_bound(res.classes.begin(), res.classes.end(), label);
    return it != res.classes.end() && *it == label ? static_cast<Eigen::Index>(it - res.classes.begin()) : -1;
  };
  std::vector<Eigen::Index> rows(train_labels.size());
  for (std::size_t j = 0; j < rows.size(); ++j) rows[j] = std::max<Eigen::Index>(row_of(train_labels[j]), 0);

  Matrix W = Matrix::Zero(K, train_reps.rows());
  Vector mass = Vector::Zero(K);
  for (std::size_t j = 0; j < rows.size(); ++j) {
    W.row(rows[j]) += w[j] * train_reps.col(static_cast<Eigen::Index>(j)).transpose();
    mass(rows[j]) += w[j];
  }
  for (Eigen::Index c = 0; c < K; ++c) W.row(c) /= mass(c) * cfg.t;

  const detail::ProbeObjective objective{train_reps, rows, w};
  Matrix grad;
  double f = objective(W, &grad);
  res.initial_loss = f;
  double step = 1.0;
  for (; res.iterations < cfg.max_iterations; ++res.iterations) {
    const double g2 = grad.squaredNorm();
    if (std::sqrt(g2) < cfg.grad_tolerance) break;
    bool accepted = false;
    while (step > 1e-12) {
      const Matrix trial = W - step * grad;
      const double ft = objective(trial, nullptr);
      if (ft <= f - 0.5 * step * g2) {
        W = trial;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    f = objective(W, &grad);
    step *= 2.0;
  }
  res.softmax_loss = f;
  res.grad_norm = grad.norm();
  res.weights = W;

  std::size_t correct = 0;
  if (!eval_labels.empty()) {
    const Matrix logits = W * eval_reps;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      Eigen::Index best = 0;
      logits.col(j).maxCoeff(&best);
      if (row_of(eval_labels[static_cast<std::size_t>(j)]) == best) ++correct;
    }
    res.accuracy = static_cast<double>(correct) / static_cast<double>(eval_labels.size());
  }
  return res;
}

// ---------------------------------------------------------------------------

struct Lemma4Options {
  double t = 1.0;
  std::optional<double> tau_plus;     // defaults to the mixture's
  std::size_t subtasks = 3;           // sampled sub-tasks when K > 3
  std::size_t subtask_size = 3;
  std::uint64_t seed = 0;
  bool run_probe = true;
};

/// Exact L^mu_Sup against the asymptotic debiased loss with Q = N; the probe
/// value of L_Sup is attached as an approximation.
inline BoundCertificate lemma4_chain_check(const EmbeddingTable& f, const DiscreteClassMixture& mix, std::size_t n,
                                           const Lemma4Options& opt = {}) {
  const std::size_t K = mix.num_classes();
  require(K >= 2, Errc::DegenerateClass, "lemma 4 needs K >= 2");
  require(n + 1 >= K, Errc::BoundPreconditionViolated, "lemma 4 needs N >= K - 1");
  BoundCertificate cert;
  cert.check = "lemma4";
  cert.lhs = mean_classifier_loss(f, mix, opt.t).value;
  cert.rhs = asymptotic_debiased_exact(f, mix, static_cast<double>(n), opt.tau_plus, opt.t).value;
  cert.slack = 1e-9;
  cert.decide();

  Json& meta = cert.meta;
  meta["N"] = n;
  meta["K"] = K;
  meta["t"] = opt.t;
  meta["tau_plus"] = opt.tau_plus.value_or(mix.tau_plus());
  meta["mixture"] = mix.spec().id;
  meta["uniform_prior"] = mix.uniform_prior();
  meta["task"] = "all-classes";

  if (opt.run_probe) {
    std::vector<double> weights(mix.num_points());
    for (std::size_t j = 0; j < weights.size(); ++j)
      weights[j] = mix.marginal()(static_cast<Eigen::Index>(j));
    ProbeConfig pc;
    pc.t = opt.t;
    const auto probe = linear_probe(f.matrix(), mix.labels(), f.matrix(), mix.labels(), pc, weights);
    meta["probe_loss_approx"] = probe.softmax_loss;
    meta["probe_grad_norm"] = probe.grad_norm;
  }

  if (K > 3 && opt.subtasks > 0) {
    Rng rng = Rng::substream(opt.seed, {4, n});
    Json tasks = Json::array();
    for (std::size_t s = 0; s < opt.subtasks; ++s) {
      std::vector<std::size_t> classes(K);
      for (std::size_t c = 0; c < K; ++c) classes[c] = c;
      for (std::size_t i = 0; i < opt.subtask_size; ++i) std::swap(classes[i], classes[i + rng.index(K - i)]);
      classes.resize(std::min(opt.subtask_size, K));
      std::sort(classes.begin(), classes.end());
      Json entry;
      entry["classes"] = classes;
      entry["mean_classifier_loss"] = mean_classifier_loss(f, mix, opt.t, classes).value;
      tasks.push_back(entry);
    }
    meta["subtasks"] = tasks;
  }
  return cert;
}

}  // namespace dcl
