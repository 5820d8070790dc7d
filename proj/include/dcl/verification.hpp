// Monte Carlo and enumeration certificates for the finite-sample bounds.
//
// Trials run in fixed-size blocks, each with its own substream keyed by
// (seed, check, block). Block statistics are merged in block order, so the
// numbers do not depend on how many threads ran the blocks.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "dcl/certificate.hpp"
#include "dcl/error.hpp"
#include "dcl/geometry.hpp"
#include "dcl/losses.hpp"
#include "dcl/numeric.hpp"
#include "dcl/rng.hpp"
#include "dcl/worldmodel.hpp"

namespace dcl {

inline constexpr std::uint64_t kTrialBlock = 4096;

/// e^{3/2} sqrt(pi / (2 n)), the constant shared by both bounds.
inline double concentration_term(double n) { return std::exp(1.5) * std::sqrt(std::numbers::pi / (2.0 * n)); }

struct McOptions {
  std::uint64_t trials = 100000;
  std::uint64_t seed = 1;
  double t = 1.0;
  unsigned threads = 1;    // 0: hardware concurrency
  double rhs_scale = 1.0;  // test hook; anything but 1 corrupts the bound on purpose
};

namespace detail {

/// Runs fn(block_rng, count, stats) over blocks and merges in block order.
template <class Fn>
std::vector<RunningStats> run_blocks(std::uint64_t trials, std::uint64_t seed, std::uint64_t tag, std::size_t lanes,
                                     unsigned threads, Fn fn) {
  const std::uint64_t blocks = (trials + kTrialBlock - 1) / kTrialBlock;
  std::vector<std::vector<RunningStats>> per_block(blocks, std::vector<RunningStats>(lanes));
  auto work = [&](std::uint64_t b) {
    Rng rng = Rng::substream(seed, {tag, b});
    const std::uint64_t count = std::min(kTrialBlock, trials - b * kTrialBlock);
    fn(rng, count, per_block[b]);
  };
  unsigned n_threads = threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : threads;
  n_threads = static_cast<unsigned>(std::min<std::uint64_t>(n_threads, blocks));
  if (n_threads <= 1) {
    for (std::uint64_t b = 0; b < blocks; ++b) work(b);
  } else {
    std::vector<std::thread> pool;
    for (unsigned k = 0; k < n_threads; ++k)
      pool.emplace_back([&, k] {
        for (std::uint64_t b = k; b < blocks; b += n_threads) work(b);
      });
    for (auto& th : pool) th.join();
  }
  std::vector<RunningStats> out(lanes);
  for (const auto& block : per_block)
    for (std::size_t l = 0; l < lanes; ++l) out[l].merge(block[l]);
  return out;
}

inline void fill_meta(Json& meta, const DiscreteClassMixture& mix, const McOptions& opt) {
  meta["t"] = opt.t;
  meta["seed"] = opt.seed;
  meta["mixture"] = mix.id();
  meta["K"] = mix.num_classes();
  meta["S"] = mix.num_points();
  meta["uniform_prior"] = mix.uniform_prior();
  std::vector<double> rho(mix.prior().data(), mix.prior().data() + mix.prior().size());
  meta["prior"] = rho;
  meta["rng"] = kRngName;
  if (opt.rhs_scale != 1.0) meta["rhs_scale"] = opt.rhs_scale;
}

}  // namespace detail

// ---------------------------------------------------------------------------

/// E_x[0 ^ log(E_{p+_x} e^s / E_{p-_x} e^s)], exact.
inline double lemma1_gap_term(const EmbeddingTable& f, const DiscreteClassMixture& mix, double t = 1.0) {
  require(mix.num_classes() >= 2, Errc::DegenerateClass, "lemma 1 needs K >= 2");
  const Matrix exp_sims = f.similarities(t).array().exp().matrix();
  CompensatedSum total;
  for (std::size_t x = 0; x < mix.num_points(); ++x) {
    const double px = mix.marginal()(static_cast<Eigen::Index>(x));
    if (px == 0.0) continue;
    const auto xi = static_cast<Eigen::Index>(x);
    const double pos = exp_sims.row(xi).dot(mix.positive_dist(x));
    const double neg = exp_sims.row(xi).dot(mix.negative_dist(x));
    total += px * std::min(0.0, std::log(pos / neg));
  }
  return total.value();
}

/// Lemma 1 as a certificate oriented lhs <= rhs:
///   lhs = L_Unbiased (MC) + E_x[0 ^ log(...)] - e^{3/2} sqrt(pi/2N)
///   rhs = L_Biased (MC)
/// Both losses use Q = N and share draws: the unbiased negatives are the
/// biased ones with same-class draws replaced by fresh draws from p-_x.
/// mc_stderr is the standard error of the paired difference.
inline BoundCertificate lemma1_certificate(const EmbeddingTable& f, const DiscreteClassMixture& mix, std::size_t n,
                                           const McOptions& opt = {}) {
  require(n >= 1, Errc::EmptyNegatives, "lemma 1 needs N >= 1");
  require(mix.num_classes() >= 2, Errc::DegenerateClass, "lemma 1 needs K >= 2");
  require(opt.trials >= 1000, Errc::InvalidArgument, "certificates need at least 1000 trials");
  const Matrix sims = f.similarities(opt.t);
  const Matrix exp_sims = sims.array().exp().matrix();

  auto stats = detail::run_blocks(opt.trials, opt.seed, 0x1E331, 3, opt.threads,
                                  [&](Rng& rng, std::uint64_t count, std::vector<RunningStats>& st) {
    for (std::uint64_t k = 0; k < count; ++k) {
      const std::size_t x = mix.sample_marginal(rng);
      const std::size_t xp = mix.sample_positive(x, rng);
      const auto xi = static_cast<Eigen::Index>(x);
      double sum_b = 0.0, sum_u = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t u = mix.sample_marginal(rng);
        const double e = exp_sims(xi, static_cast<Eigen::Index>(u));
        sum_b += e;
        sum_u += mix.label(u) == mix.label(x) ? exp_sims(xi, static_cast<Eigen::Index>(mix.sample_negative(x, rng))) : e;
      }
      const double s_pos = sims(xi, static_cast<Eigen::Index>(xp));
      const double lb = biased_loss_moments(s_pos, sum_b, n).value;
      const double lu = biased_loss_moments(s_pos, sum_u, n).value;
      st[0].add(lb);
      st[1].add(lu);
      st[2].add(lb - lu);
    }
  });

  const double gap = lemma1_gap_term(f, mix, opt.t);
  const double c = concentration_term(static_cast<double>(n));
  BoundCertificate cert;
  cert.check = "lemma1";
  cert.lhs = stats[1].mean() + gap - c;
  cert.rhs = opt.rhs_scale * stats[0].mean();
  cert.mc_stderr = stats[2].stderr_of_mean();
  cert.trials = opt.trials;
  cert.decide();
  Json& meta = cert.meta;
  meta["N"] = n;
  meta["Q"] = n;
  detail::fill_meta(meta, mix, opt);
  meta["biased_mc"] = stats[0].mean();
  meta["biased_stderr"] = stats[0].stderr_of_mean();
  meta["unbiased_mc"] = stats[1].mean();
  meta["unbiased_stderr"] = stats[1].stderr_of_mean();
  meta["gap_term"] = gap;
  meta["concentration_term"] = c;
  try {
    meta["asymptotic_debiased"] = asymptotic_debiased_exact(f, mix, static_cast<double>(n), {}, opt.t).value;
  } catch (const Error& e) {
    if (e.code() != Errc::NegativeDenominator) throw;
    meta["asymptotic_debiased"] = nullptr;
  }
  return cert;
}

// ---------------------------------------------------------------------------

/// (e^{3/2}/tau-) sqrt(pi/2N) + (e^{3/2} tau+/tau-) sqrt(pi/2M).
inline double theorem3_rhs(std::size_t n, std::size_t m, double tau_plus) {
  require(n >= 1 && m >= 1, Errc::InvalidArgument, "N and M must be >= 1");
  require(tau_plus >= 0.0 && tau_plus < 1.0, Errc::InvalidArgument, "tau_plus must lie in [0, 1)");
  const double tm = 1.0 - tau_plus;
  return concentration_term(static_cast<double>(n)) / tm +
         tau_plus / tm * concentration_term(static_cast<double>(m));
}

namespace detail {

/// Per-trial statistics of l_{N,M} - l~(x, x+), where l~ is the asymptotic
/// debiased loss with Q = N at the same (x, x+). Lanes: 0 signed difference,
/// 1 absolute difference, 2 the finite loss itself.
inline std::vector<RunningStats> debiased_gap_stats(const EmbeddingTable& f, const DiscreteClassMixture& mix,
                                                    std::size_t n, std::size_t m, double tau_plus,
                                                    const McOptions& opt, std::uint64_t tag) {
  const Matrix sims = f.similarities(opt.t);
  const Matrix exp_sims = sims.array().exp().matrix();
  const auto den = asymptotic_denominators(f, mix, tau_plus, opt.t);
  const double nn = static_cast<double>(n);
  return run_blocks(opt.trials, opt.seed, tag, 3, opt.threads,
                    [&](Rng& rng, std::uint64_t count, std::vector<RunningStats>& st) {
    // Separate streams for (x, x+), the u draws and the v draws, so runs that
    // differ only in N or M see the same anchors and the same sample prefixes.
    const std::uint64_t key = rng.next_u64();
    Rng rx = Rng::substream(key, {0}), ru = Rng::substream(key, {1}), rv = Rng::substream(key, {2});
    for (std::uint64_t k = 0; k < count; ++k) {
      const std::size_t x = mix.sample_marginal(rx);
      const std::size_t xp = mix.sample_positive(x, rx);
      const auto xi = static_cast<Eigen::Index>(x);
      double sum_u = 0.0, sum_v = 0.0;
      for (std::size_t i = 0; i < n; ++i) sum_u += exp_sims(xi, static_cast<Eigen::Index>(mix.sample_marginal(ru)));
      for (std::size_t j = 0; j < m; ++j)
        sum_v += exp_sims(xi, static_cast<Eigen::Index>(mix.sample_positive(x, rv)));
      const double s_pos = sims(xi, static_cast<Eigen::Index>(xp));
      const double finite = debiased_loss_moments(s_pos, sum_u, n, sum_v, m, tau_plus, opt.t).value;
      const double limit = softplus(std::log(nn * den.value(xi)) - s_pos);
      st[0].add(finite - limit);
      st[1].add(std::abs(finite - limit));
      st[2].add(finite);
    }
  });
}

}  // namespace detail

/// Theorem 3: |L~_N (exact) - L_{N,M} (MC)| against the bound. The MC side
/// is paired with the exact per-(x, x+) term, so lhs = |mean(l - l~)|.
/// Throws NegativeDenominator when the exact side is undefined.
inline BoundCertificate theorem3_certificate(const EmbeddingTable& f, const DiscreteClassMixture& mix, std::size_t n,
                                             std::size_t m, double tau_plus, const McOptions& opt = {}) {
  require(opt.trials >= 1000, Errc::InvalidArgument, "certificates need at least 1000 trials");
  const double rhs = theorem3_rhs(n, m, tau_plus);
  const double exact = asymptotic_debiased_exact(f, mix, static_cast<double>(n), tau_plus, opt.t).value;
  const auto stats = detail::debiased_gap_stats(f, mix, n, m, tau_plus, opt, 0x7E03);
  BoundCertificate cert;
  cert.check = "thm3";
  cert.lhs = std::abs(stats[0].mean());
  cert.rhs = opt.rhs_scale * rhs;
  cert.mc_stderr = stats[0].stderr_of_mean();
  cert.trials = opt.trials;
  cert.decide();
  Json& meta = cert.meta;
  meta["N"] = n;
  meta["M"] = m;
  meta["tau_plus"] = tau_plus;
  detail::fill_meta(meta, mix, opt);
  meta["asymptotic_exact"] = exact;
  meta["finite_mc"] = stats[2].mean();
  meta["finite_stderr"] = stats[2].stderr_of_mean();
  meta["mean_abs_gap"] = stats[1].mean();
  return cert;
}

// ---------------------------------------------------------------------------

enum class SweepVariable { N, M };

struct RateSweep {
  SweepVariable variable = SweepVariable::N;
  std::vector<std::size_t> grid;
  std::size_t fixed = 0;  // the other sample size
  double tau_plus = 0.1;
};

enum class RateStatus { Fitted, Degenerate, NotIdentifiable };

inline const char* rate_status_name(RateStatus s) {
  switch (s) {
    case RateStatus::Fitted: return "fitted";
    case RateStatus::Degenerate: return "degenerate";
    case RateStatus::NotIdentifiable: return "not-identifiable";
  }
  return "?";
}

struct RatePoint {
  std::size_t size = 0;
  double mean_gap = 0.0;
  double mc_stderr = 0.0;
};

struct RateFit {
  std::vector<RatePoint> grid;
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  RateStatus status = RateStatus::Fitted;
};

/// Least squares of log(mean gap) on log(size). The gap at each size is the
/// mean per-trial |l_{N,M} - l~(x, x+)|, estimated on shared trial streams.
inline RateFit rate_fit(const EmbeddingTable& f, const DiscreteClassMixture& mix, const RateSweep& sweep,
                        const McOptions& opt = {}) {
  const auto& g = sweep.grid;
  require(g.size() >= 4, Errc::InsufficientGrid, "rate fit needs at least 4 grid points");
  for (std::size_t i = 1; i < g.size(); ++i)
    require(g[i] > g[i - 1], Errc::InsufficientGrid, "grid must be strictly increasing");
  require(g.front() >= 1 && static_cast<double>(g.back()) >= 100.0 * static_cast<double>(g.front()),
          Errc::InsufficientGrid, "grid must span at least two decades");
  require(sweep.fixed >= 10 * g.back(), Errc::InsufficientGrid,
          "the fixed sample size must be at least 10x the largest swept size");

  RateFit fit;
  for (std::size_t size : g) {
    const std::size_t n = sweep.variable == SweepVariable::N ? size : sweep.fixed;
    const std::size_t m = sweep.variable == SweepVariable::N ? sweep.fixed : size;
    const auto st = detail::debiased_gap_stats(f, mix, n, m, sweep.tau_plus, opt, 0x4A7E);
    fit.grid.push_back({size, st[1].mean(), st[1].stderr_of_mean()});
  }
  const auto [lo, hi] = std::minmax_element(fit.grid.begin(), fit.grid.end(),
                                            [](const auto& a, const auto& b) { return a.mean_gap < b.mean_gap; });
  double max_err = 0.0;
  for (const auto& p : fit.grid) max_err = std::max(max_err, p.mc_stderr);
  if (hi->mean_gap < 1e-12) {
    fit.status = RateStatus::Degenerate;
    return fit;
  }

  const double k = static_cast<double>(g.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  for (const auto& p : fit.grid) {
    const double x = std::log(static_cast<double>(p.size)), y = std::log(p.mean_gap);
    sx += x, sy += y, sxx += x * x, sxy += x * y, syy += y * y;
  }
  const double vx = sxx - sx * sx / k, vy = syy - sy * sy / k, cxy = sxy - sx * sy / k;
  fit.slope = cxy / vx;
  fit.intercept = (sy - fit.slope * sx) / k;
  fit.r2 = vy > 0.0 ? cxy * cxy / (vx * vy) : 0.0;
  // No trend the noise could not explain: the swept size does not drive the gap.
  if (hi->mean_gap - lo->mean_gap <= 3.0 * max_err) fit.status = RateStatus::NotIdentifiable;
  return fit;
}

// ---------------------------------------------------------------------------

struct Theorem5Constants {
  double lambda = 0.0;
  double b = 0.0;
};

/// lambda = sqrt((1/tau-^2)(M/N + 1) + tau+^2 (N/M + 1)), B = log N (1/tau- + tau+).
inline Theorem5Constants theorem5_constants(std::size_t n, std::size_t m, double tau_plus) {
  require(n >= 1 && m >= 1, Errc::InvalidArgument, "N and M must be >= 1");
  require(tau_plus >= 0.0 && tau_plus < 1.0, Errc::InvalidArgument, "tau_plus must lie in [0, 1)");
  const double tm = 1.0 - tau_plus;
  const double nn = static_cast<double>(n), mm = static_cast<double>(m);
  return {std::sqrt((mm / nn + 1.0) / (tm * tm) + tau_plus * tau_plus * (nn / mm + 1.0)),
          std::log(nn) * (1.0 / tm + tau_plus)};
}

}  // namespace dcl
