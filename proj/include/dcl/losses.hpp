// Contrastive objectives: biased, unbiased, debiased (finite and asymptotic),
// the inclusion-exclusion oracle, and the supervised softmax / mean-classifier
// losses.
//
// All exponents are scaled similarities s = f(x).f(x') / t. Per-sample losses
// are evaluated as softplus(log(weight) + logsumexp(negatives) - s+) so that
// small temperatures do not overflow.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "dcl/error.hpp"
#include "dcl/geometry.hpp"
#include "dcl/numeric.hpp"
#include "dcl/worldmodel.hpp"

namespace dcl {

enum class FloorMode { ExpFloor, ZeroFloor };

enum class LossKind { Biased, Unbiased, DebiasedFinite, DebiasedAsymptotic, Oracle, SupervisedMean, SoftmaxCE };

constexpr std::string_view loss_kind_name(LossKind k) noexcept {
  switch (k) {
    case LossKind::Biased: return "biased";
    case LossKind::Unbiased: return "unbiased";
    case LossKind::DebiasedFinite: return "debiased_fin";
    case LossKind::DebiasedAsymptotic: return "debiased_asym";
    case LossKind::Oracle: return "oracle";
    case LossKind::SupervisedMean: return "supervised_mu";
    case LossKind::SoftmaxCE: return "softmax_ce";
  }
  return "unknown";
}

struct LossValue {
  double value = 0.0;
  LossKind kind = LossKind::Biased;
};

/// Clamped estimate of the negative-distribution mean e^{s}.
struct GEstimate {
  double value = 0.0;
  bool floored = false;
  double floor_used = 0.0;
  double log_value = 0.0;  // log(value); -inf when a zero floor binds
};

inline double floor_value(FloorMode mode, double t) {
  return mode == FloorMode::ExpFloor ? std::exp(-1.0 / t) : 0.0;
}

// ---------------------------------------------------------------------------
// Per-sample losses

/// -log[e^{s+} / (e^{s+} + (Q/N) sum_i e^{s_i})]. Q defaults to N.
inline LossValue biased_loss_point(double s_pos, std::span<const double> s_neg, std::optional<double> q = {}) {
  require(!s_neg.empty(), Errc::EmptyNegatives, "biased loss needs at least one negative");
  const double n = static_cast<double>(s_neg.size());
  const double weight = q.value_or(n);
  require(weight >= 0.0, Errc::InvalidArgument, "Q must be non-negative");
  const double z = std::log(weight / n) + log_sum_exp(s_neg) - s_pos;
  return {softplus(z), LossKind::Biased};
}

namespace detail {

/// Log-domain pieces of the clamped estimator. With r the ratio of the
/// positive mean to the unlabeled mean,
///   log(N g_raw) = lse_u + log1p(-tau+ r) - log1p(-tau+),
/// which reduces to lse_u exactly when tau+ = 0.
struct DebiasedParts {
  double lse_u = 0.0;
  double lse_v = 0.0;
  double ratio = 0.0;      // r = mean_v e^{s} / mean_u e^{s}
  double inner = 1.0;      // 1 - tau+ r
  double log_ng = 0.0;     // log(N g) after clamping; -inf if a zero floor binds
  bool floored = false;
};

inline DebiasedParts debiased_parts(std::span<const double> s_u, std::span<const double> s_v, double tau_plus,
                                    double t, FloorMode mode) {
  require(!s_u.empty() && !s_v.empty(), Errc::InvalidArgument, "g needs N >= 1 and M >= 1");
  require(tau_plus >= 0.0 && tau_plus < 1.0, Errc::InvalidArgument, "tau_plus must lie in [0, 1)");
  require(t > 0.0, Errc::InvalidArgument, "temperature must be positive");
  const double log_n = std::log(static_cast<double>(s_u.size()));
  const double log_m = std::log(static_cast<double>(s_v.size()));
  DebiasedParts p;
  p.lse_u = log_sum_exp(s_u);
  p.lse_v = log_sum_exp(s_v);
  p.ratio = std::exp((p.lse_v - log_m) - (p.lse_u - log_n));
  p.inner = 1.0 - tau_plus * p.ratio;
  const double log_floor_n = mode == FloorMode::ExpFloor ? log_n - 1.0 / t : -std::numeric_limits<double>::infinity();
  if (p.inner > 0.0) {
    p.log_ng = p.lse_u + (std::log1p(-tau_plus * p.ratio) - std::log1p(-tau_plus));
    p.floored = p.log_ng <= log_floor_n;
  } else {
    p.floored = true;
  }
  if (p.floored) p.log_ng = log_floor_n;
  return p;
}

}  // namespace detail

/// g = max{(1/tau-)(mean_u e^{s} - tau+ mean_v e^{s}), floor}; floored iff the
/// raw estimate is at or below the floor.
inline GEstimate g_estimator(std::span<const double> s_u, std::span<const double> s_v, double tau_plus, double t,
                             FloorMode mode = FloorMode::ExpFloor) {
  const auto p = detail::debiased_parts(s_u, s_v, tau_plus, t, mode);
  GEstimate g;
  g.floor_used = floor_value(mode, t);
  g.floored = p.floored;
  g.log_value = p.log_ng - std::log(static_cast<double>(s_u.size()));
  g.value = g.floored ? g.floor_used : std::exp(g.log_value);
  return g;
}

/// -log[e^{s+} / (e^{s+} + N g)].
inline LossValue debiased_loss_point(double s_pos, std::span<const double> s_u, std::span<const double> s_v,
                                     double tau_plus, double t, FloorMode mode = FloorMode::ExpFloor) {
  const auto p = detail::debiased_parts(s_u, s_v, tau_plus, t, mode);
  return {softplus(p.log_ng - s_pos), LossKind::DebiasedFinite};
}

/// Same loss from precomputed moments: sum_u = sum_i e^{s_ui} over N
/// negatives, sum_v = sum_j e^{s_vj} over M positives. Used by the Monte Carlo
/// certifiers, which work from a cached table of e^{s}.
inline LossValue debiased_loss_moments(double s_pos, double sum_u, std::size_t n, double sum_v, std::size_t m,
                                       double tau_plus, double t, FloorMode mode = FloorMode::ExpFloor) {
  require(n >= 1 && m >= 1, Errc::InvalidArgument, "g needs N >= 1 and M >= 1");
  const double nn = static_cast<double>(n);
  const double raw = (sum_u / nn - tau_plus * sum_v / static_cast<double>(m)) / (1.0 - tau_plus);
  const double g = std::max(raw, floor_value(mode, t));
  return {softplus(std::log(nn * g) - s_pos), LossKind::DebiasedFinite};
}

/// Biased loss from sum_i e^{s_i} with weight Q (Q/N times the sum).
inline LossValue biased_loss_moments(double s_pos, double sum_neg, std::size_t n, std::optional<double> q = {}) {
  require(n >= 1, Errc::EmptyNegatives, "biased loss needs N >= 1");
  const double w = q.value_or(static_cast<double>(n)) / static_cast<double>(n);
  return {softplus(std::log(w * sum_neg) - s_pos), LossKind::Biased};
}

/// Standard multiclass cross entropy of a logit vector.
inline LossValue softmax_ce(std::span<const double> logits, std::size_t label) {
  require(logits.size() >= 2, Errc::InvalidArgument, "softmax needs K >= 2");
  require(label < logits.size(), Errc::InvalidArgument, "label out of range");
  return {log_sum_exp(logits) - logits[label], LossKind::SoftmaxCE};
}

// ---------------------------------------------------------------------------
// Batch losses (SimCLR layout)
//
// `views` is d x 2B with unit columns: column i is the first view of anchor i
// and column B + i its second view. For each of the 2B roles the partner view
// is x+, the other 2(B-1) views are the u_i, and the v set is x+ followed by
// the M-1 extra views of the same anchor (columns i*(M-1) .. of `extras`).

enum class BatchLossKind { Biased, Debiased, Unbiased };

constexpr std::string_view batch_kind_name(BatchLossKind k) noexcept {
  switch (k) {
    case BatchLossKind::Biased: return "biased";
    case BatchLossKind::Debiased: return "debiased";
    case BatchLossKind::Unbiased: return "unbiased";
  }
  return "unknown";
}

struct BatchLossSpec {
  BatchLossKind kind = BatchLossKind::Debiased;
  double tau_plus = 0.1;
  double t = 0.5;
  std::size_t positives = 1;  // M
  FloorMode floor = FloorMode::ExpFloor;
};

struct ViewBatch {
  Matrix views;                     // d x 2B, unit columns
  Matrix extras;                    // d x B(M-1), unit columns
  std::vector<std::size_t> labels;  // per anchor; required by the unbiased kind
  std::size_t anchors() const noexcept { return static_cast<std::size_t>(views.cols() / 2); }
};

namespace detail {

inline void check_batch(const ViewBatch& batch, const BatchLossSpec& spec) {
  const std::size_t B = batch.anchors();
  require(batch.views.cols() % 2 == 0 && B >= 2, Errc::BatchTooSmall, "batch needs B >= 2 anchors with two views");
  require(spec.positives >= 1, Errc::InvalidArgument, "M must be >= 1");
  require(spec.t > 0.0, Errc::InvalidArgument, "temperature must be positive");
  require(static_cast<std::size_t>(batch.extras.cols()) == B * (spec.positives - 1), Errc::InvalidArgument,
          "batch must carry M-1 extra views per anchor");
  if (spec.kind == BatchLossKind::Unbiased)
    require(batch.labels.size() == B, Errc::InvalidArgument, "unbiased batch loss needs anchor labels");
  if (spec.kind == BatchLossKind::Debiased)
    require(spec.tau_plus >= 0.0 && spec.tau_plus < 1.0, Errc::InvalidArgument, "tau_plus must lie in [0, 1)");
}

}  // namespace detail

/// Role r's similarity lists, gathered from a precomputed similarity matrix.
struct RoleSims {
  std::size_t anchor = 0;
  std::size_t partner = 0;
  double s_pos = 0.0;
  std::vector<std::size_t> negative_cols;  // view columns used as u_i
  std::vector<double> s_neg;
  std::vector<double> s_v;                 // s+ first, then extras
};

inline RoleSims gather_role(const ViewBatch& batch, const BatchLossSpec& spec, const Matrix& view_sims,
                            const Matrix& extra_sims, std::size_t role) {
  const std::size_t B = batch.anchors();
  RoleSims r;
  r.anchor = role % B;
  r.partner = (role + B) % (2 * B);
  r.s_pos = view_sims(static_cast<Eigen::Index>(role), static_cast<Eigen::Index>(r.partner));
  for (std::size_t k = 0; k < 2 * B; ++k) {
    if (k == role || k == r.partner) continue;
    if (spec.kind == BatchLossKind::Unbiased && batch.labels[k % B] == batch.labels[r.anchor]) continue;
    r.negative_cols.push_back(k);
    r.s_neg.push_back(view_sims(static_cast<Eigen::Index>(role), static_cast<Eigen::Index>(k)));
  }
  r.s_v.push_back(r.s_pos);
  for (std::size_t j = 0; j + 1 < spec.positives; ++j)
    r.s_v.push_back(extra_sims(static_cast<Eigen::Index>(role),
                               static_cast<Eigen::Index>(r.anchor * (spec.positives - 1) + j)));
  return r;
}

/// Per-role losses for all 2B roles, in role order.
inline std::vector<double> batch_role_losses(const ViewBatch& batch, const BatchLossSpec& spec) {
  detail::check_batch(batch, spec);
  const Matrix view_sims = batch.views.transpose() * batch.views / spec.t;
  const Matrix extra_sims = batch.views.transpose() * batch.extras / spec.t;
  std::vector<double> out;
  out.reserve(2 * batch.anchors());
  for (std::size_t role = 0; role < 2 * batch.anchors(); ++role) {
    const RoleSims r = gather_role(batch, spec, view_sims, extra_sims, role);
    switch (spec.kind) {
      case BatchLossKind::Biased: out.push_back(biased_loss_point(r.s_pos, r.s_neg).value); break;
      case BatchLossKind::Unbiased:
        // A role whose batch holds no true negative contributes log(1 + 0).
        out.push_back(r.s_neg.empty() ? 0.0 : biased_loss_point(r.s_pos, r.s_neg).value);
        break;
      case BatchLossKind::Debiased:
        out.push_back(debiased_loss_point(r.s_pos, r.s_neg, r.s_v, spec.tau_plus, spec.t, spec.floor).value);
        break;
    }
  }
  return out;
}

inline LossValue batch_loss(const ViewBatch& batch, const BatchLossSpec& spec) {
  const auto roles = batch_role_losses(batch, spec);
  double sum = 0.0;
  for (double v : roles) sum += v;
  const LossKind kind = spec.kind == BatchLossKind::Debiased ? LossKind::DebiasedFinite
                        : spec.kind == BatchLossKind::Unbiased ? LossKind::Unbiased
                                                                : LossKind::Biased;
  return {sum / static_cast<double>(roles.size()), kind};
}

/// Mean debiased loss over the 2B anchor roles of a two-view batch.
inline LossValue debiased_loss_batch(const Matrix& views, double tau_plus, double t, std::size_t positives = 1,
                                     FloorMode mode = FloorMode::ExpFloor, const Matrix& extras = Matrix()) {
  ViewBatch batch{views, extras.size() ? extras : Matrix(views.rows(), 0), {}};
  return batch_loss(batch, {BatchLossKind::Debiased, tau_plus, t, positives, mode});
}

// ---------------------------------------------------------------------------
// Exact expectations over discrete mixtures

inline constexpr double kDefaultEnumerationBudget = 1e7;

namespace detail {

inline void check_table(const EmbeddingTable& f, const DiscreteClassMixture& mix) {
  require(static_cast<std::size_t>(f.size()) == mix.num_points(), Errc::InvalidArgument,
          "embedding table must have one column per mixture point");
}

inline std::vector<std::size_t> support(const Vector& p) {
  std::vector<std::size_t> out;
  for (Eigen::Index j = 0; j < p.size(); ++j)
    if (p(j) > 0.0) out.push_back(static_cast<std::size_t>(j));
  return out;
}

}  // namespace detail

/// Unbiased loss with N i.i.d. true negatives, by enumeration of all ordered
/// negative tuples over the support of p-_x.
inline LossValue unbiased_loss_exact(const EmbeddingTable& f, const DiscreteClassMixture& mix, std::size_t n,
                                     std::optional<double> q = {}, double t = 1.0,
                                     double budget = kDefaultEnumerationBudget) {
  detail::check_table(f, mix);
  require(n >= 1, Errc::EmptyNegatives, "unbiased loss needs N >= 1");
  require(mix.num_classes() >= 2, Errc::DegenerateClass, "unbiased loss needs K >= 2");
  const double weight = q.value_or(static_cast<double>(n));
  const Matrix sims = f.similarities(t);
  const Vector& px = mix.marginal();

  double terms = 0.0;
  for (std::size_t x = 0; x < mix.num_points(); ++x) {
    if (px(static_cast<Eigen::Index>(x)) == 0.0) continue;
    terms += static_cast<double>(detail::support(mix.positive_dist(x)).size()) *
             std::pow(static_cast<double>(detail::support(mix.negative_dist(x)).size()), static_cast<double>(n));
  }
  require(terms <= budget, Errc::BudgetExceeded, "unbiased enumeration exceeds budget");

  CompensatedSum total;
  for (std::size_t x = 0; x < mix.num_points(); ++x) {
    const double wx = px(static_cast<Eigen::Index>(x));
    if (wx == 0.0) continue;
    const auto xi = static_cast<Eigen::Index>(x);
    const Vector pos = mix.positive_dist(x);
    const Vector neg = mix.negative_dist(x);
    const auto neg_support = detail::support(neg);
    const auto pos_support = detail::support(pos);

    // Odometer over ordered N-tuples of negatives.
    std::vector<std::size_t> digit(n, 0);
    while (true) {
      double w = 1.0, sum_exp = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t u = neg_support[digit[i]];
        w *= neg(static_cast<Eigen::Index>(u));
        sum_exp += std::exp(sims(xi, static_cast<Eigen::Index>(u)));
      }
      for (std::size_t xp : pos_support) {
        const double s_pos = sims(xi, static_cast<Eigen::Index>(xp));
        const double loss = softplus(std::log(weight / static_cast<double>(n) * sum_exp) - s_pos);
        total += wx * pos(static_cast<Eigen::Index>(xp)) * w * loss;
      }
      std::size_t pos_i = 0;
      while (pos_i < n && ++digit[pos_i] == neg_support.size()) digit[pos_i++] = 0;
      if (pos_i == n) break;
    }
  }
  return {total.value(), LossKind::Unbiased};
}

/// Inner denominators of the asymptotic debiased loss for every anchor:
/// D_x = (E_{p} e^{s} - tau+ E_{p+_x} e^{s}) / tau-. Entries for anchors with
/// p(x) = 0 are left at zero.
struct AsymptoticDenominators {
  Vector value;
  double tau_plus_used = 0.0;  // NaN when per-anchor class priors were used
};

inline AsymptoticDenominators asymptotic_denominators(const EmbeddingTable& f, const DiscreteClassMixture& mix,
                                                      std::optional<double> tau_plus = {}, double t = 1.0) {
  detail::check_table(f, mix);
  const Matrix exp_sims = f.similarities(t).array().exp().matrix();
  const Vector& px = mix.marginal();
  AsymptoticDenominators out;
  out.value = Vector::Zero(static_cast<Eigen::Index>(mix.num_points()));
  out.tau_plus_used = tau_plus.value_or(std::numeric_limits<double>::quiet_NaN());
  for (std::size_t x = 0; x < mix.num_points(); ++x) {
    const auto xi = static_cast<Eigen::Index>(x);
    if (px(xi) == 0.0) continue;
    const double tp = tau_plus.value_or(mix.class_tau_plus(x));
    require(tp >= 0.0 && tp < 1.0, tau_plus ? Errc::InvalidArgument : Errc::DegenerateClass,
            "asymptotic debiased loss needs tau_plus < 1");
    const double e_all = exp_sims.row(xi).dot(px);
    const double e_pos = exp_sims.row(xi).dot(mix.positive_dist(x));
    const double d = (e_all - tp * e_pos) / (1.0 - tp);
    require(d > 0.0, Errc::NegativeDenominator,
            "E_p e^s - tau+ E_p+ e^s <= 0 at anchor " + std::to_string(x));
    out.value(xi) = d;
  }
  return out;
}

/// Asymptotic debiased loss with weight Q, exact. Without a tau_plus
/// override each anchor uses its own class prior rho(h(x)).
inline LossValue asymptotic_debiased_exact(const EmbeddingTable& f, const DiscreteClassMixture& mix, double q,
                                           std::optional<double> tau_plus = {}, double t = 1.0) {
  require(q > 0.0, Errc::InvalidArgument, "Q must be positive");
  require(mix.num_classes() >= 2 || tau_plus, Errc::DegenerateClass, "asymptotic debiased loss needs K >= 2");
  const auto den = asymptotic_denominators(f, mix, tau_plus, t);
  const Matrix sims = f.similarities(t);
  const Vector& px = mix.marginal();
  CompensatedSum total;
  for (std::size_t x = 0; x < mix.num_points(); ++x) {
    const auto xi = static_cast<Eigen::Index>(x);
    if (px(xi) == 0.0) continue;
    const Vector pos = mix.positive_dist(x);
    for (Eigen::Index xp = 0; xp < pos.size(); ++xp) {
      if (pos(xp) == 0.0) continue;
      total += px(xi) * pos(xp) * softplus(std::log(q * den.value(xi)) - sims(xi, xp));
    }
  }
  return {total.value(), LossKind::DebiasedAsymptotic};
}

struct OracleResult {
  LossValue loss;
  double condition_number = 1.0;  // sum |term| / |sum term|
  std::size_t terms = 0;
};

inline constexpr std::size_t kOracleMaxNegatives = 8;

namespace detail {

struct WeightedSum {
  double weight;
  double sum_exp;
};

/// All multisets of `size` draws from `dist` restricted to `sup`, with their
/// multinomial probabilities and the sum of e^{s(x, .)} over the draw.
inline std::vector<WeightedSum> multiset_draws(const std::vector<std::size_t>& sup, const Vector& dist,
                                               const Vector& exp_row, std::size_t size) {
  std::vector<WeightedSum> out;
  if (size == 0) {
    out.push_back({1.0, 0.0});
    return out;
  }
  // Recursive composition over support positions.
  struct Frame {
    std::size_t idx;
    std::size_t remaining;
    double weight;
    double sum;
  };
  std::vector<Frame> stack{{0, size, 1.0, 0.0}};
  while (!stack.empty()) {
    Frame fr = stack.back();
    stack.pop_back();
    const std::size_t j = sup[fr.idx];
    const double p = dist(static_cast<Eigen::Index>(j));
    const double e = exp_row(static_cast<Eigen::Index>(j));
    if (fr.idx + 1 == sup.size()) {
      out.push_back({fr.weight * std::pow(p, static_cast<double>(fr.remaining)),
                     fr.sum + static_cast<double>(fr.remaining) * e});
      continue;
    }
    for (std::size_t c = 0; c <= fr.remaining; ++c) {
      const double w = fr.weight * binomial_coefficient(static_cast<unsigned>(fr.remaining), static_cast<unsigned>(c)) *
                       std::pow(p, static_cast<double>(c));
      stack.push_back({fr.idx + 1, fr.remaining - c, w, fr.sum + static_cast<double>(c) * e});
    }
  }
  return out;
}

}  // namespace detail

/// Inclusion-exclusion rewriting of the unbiased loss (Q = N) using only
/// draws from p and p+_x:
///   (1/tau-)^N sum_k C(N,k) (-tau+)^k E[l | k negatives from p+_x, N-k from p].
/// Terms are accumulated sorted by magnitude with compensated summation.
inline OracleResult binomial_oracle(const EmbeddingTable& f, const DiscreteClassMixture& mix, std::size_t n,
                                    double t = 1.0, double budget = kDefaultEnumerationBudget) {
  detail::check_table(f, mix);
  require(n >= 1, Errc::InvalidArgument, "oracle needs N >= 1");
  require(n <= kOracleMaxNegatives, Errc::OracleRangeExceeded, "alternating series is unstable beyond N = 8");
  require(mix.num_classes() >= 2, Errc::DegenerateClass, "oracle needs K >= 2");

  const Matrix sims = f.similarities(t);
  const Matrix exp_sims = sims.array().exp().matrix();
  const Vector& px = mix.marginal();
  const auto all_support = detail::support(px);

  // Work estimate: sum over anchors and k of |pairs| * |positives|.
  double work = 0.0;
  for (std::size_t x : all_support) {
    const auto ps = detail::support(mix.positive_dist(x)).size();
    for (std::size_t k = 0; k <= n; ++k)
      work += binomial_coefficient(static_cast<unsigned>(ps + k - 1), static_cast<unsigned>(k)) *
              binomial_coefficient(static_cast<unsigned>(all_support.size() + n - k - 1),
                                   static_cast<unsigned>(n - k)) *
              static_cast<double>(ps);
  }
  require(work <= budget, Errc::BudgetExceeded, "oracle enumeration exceeds budget");

  std::vector<double> terms;
  for (std::size_t x : all_support) {
    const auto xi = static_cast<Eigen::Index>(x);
    const double tp = mix.class_tau_plus(x);
    const double tm = 1.0 - tp;
    const Vector pos = mix.positive_dist(x);
    const auto pos_support = detail::support(pos);
    const Vector exp_row = exp_sims.row(xi).transpose();
    for (std::size_t k = 0; k <= n; ++k) {
      const auto from_pos = detail::multiset_draws(pos_support, pos, exp_row, k);
      const auto from_all = detail::multiset_draws(all_support, px, exp_row, n - k);
      CompensatedSum inner;
      for (std::size_t xp : pos_support) {
        const double s_pos = sims(xi, static_cast<Eigen::Index>(xp));
        const double wp = pos(static_cast<Eigen::Index>(xp));
        for (const auto& a : from_pos)
          for (const auto& b : from_all)
            inner += wp * a.weight * b.weight * softplus(std::log(a.sum_exp + b.sum_exp) - s_pos);
      }
      const double coef = binomial_coefficient(static_cast<unsigned>(n), static_cast<unsigned>(k)) *
                          std::pow(-tp, static_cast<double>(k)) / std::pow(tm, static_cast<double>(n));
      terms.push_back(px(xi) * coef * inner.value());
    }
  }

  double abs_sum = 0.0;
  for (double v : terms) abs_sum += std::abs(v);
  OracleResult out;
  out.terms = terms.size();
  out.loss = {sorted_compensated_sum(terms), LossKind::Oracle};
  out.condition_number = out.loss.value != 0.0 ? abs_sum / std::abs(out.loss.value)
                                               : std::numeric_limits<double>::infinity();
  return out;
}

// ---------------------------------------------------------------------------
// Supervised losses

/// Mean-classifier loss on weighted labelled representations: rows of W are
/// class means mu_c = E[f(x) | c], logits f(x).mu_c / t. Only classes listed
/// in `task` compete; points of other classes are ignored.
inline LossValue weighted_mean_classifier_loss(const Matrix& reps, std::span<const std::size_t> labels,
                                               std::span<const double> weights, std::span<const std::size_t> task,
                                               double t = 1.0) {
  require(task.size() >= 2, Errc::InvalidArgument, "mean classifier needs K >= 2");
  require(static_cast<std::size_t>(reps.cols()) == labels.size() && labels.size() == weights.size(),
          Errc::InvalidArgument, "reps, labels and weights disagree in length");
  const auto K = static_cast<Eigen::Index>(task.size());
  Matrix means = Matrix::Zero(reps.rows(), K);
  Vector mass = Vector::Zero(K);
  auto slot = [&](std::size_t label) -> Eigen::Index {
    for (Eigen::Index c = 0; c < K; ++c)
      if (task[static_cast<std::size_t>(c)] == label) return c;
    return -1;
  };
  for (std::size_t j = 0; j < labels.size(); ++j) {
    const Eigen::Index c = slot(labels[j]);
    if (c < 0) continue;
    means.col(c) += weights[j] * reps.col(static_cast<Eigen::Index>(j));
    mass(c) += weights[j];
  }
  for (Eigen::Index c = 0; c < K; ++c) {
    require(mass(c) > 0.0, Errc::SingleClassData, "every task class needs mass");
    means.col(c) /= mass(c);
  }
  CompensatedSum total;
  double total_w = 0.0;
  std::vector<double> logits(static_cast<std::size_t>(K));
  for (std::size_t j = 0; j < labels.size(); ++j) {
    const Eigen::Index c = slot(labels[j]);
    if (c < 0 || weights[j] == 0.0) continue;
    const Vector l = means.transpose() * reps.col(static_cast<Eigen::Index>(j)) / t;
    for (Eigen::Index k = 0; k < K; ++k) logits[static_cast<std::size_t>(k)] = l(k);
    total += weights[j] * softmax_ce(logits, static_cast<std::size_t>(c)).value;
    total_w += weights[j];
  }
  return {total.value() / total_w, LossKind::SupervisedMean};
}

/// Exact mean-classifier loss over a discrete mixture for the task made of
/// `task` classes (all classes when empty); c is drawn from rho restricted to
/// the task and renormalized, x ~ p(.|c).
inline LossValue mean_classifier_loss(const EmbeddingTable& f, const DiscreteClassMixture& mix, double t = 1.0,
                                      std::vector<std::size_t> task = {}) {
  detail::check_table(f, mix);
  if (task.empty())
    for (std::size_t c = 0; c < mix.num_classes(); ++c) task.push_back(c);
  require(task.size() >= 2, Errc::InvalidArgument, "mean classifier needs K >= 2");
  std::vector<double> weights(mix.num_points(), 0.0);
  for (std::size_t j = 0; j < mix.num_points(); ++j) {
    const std::size_t c = mix.label(j);
    if (std::find(task.begin(), task.end(), c) == task.end()) continue;
    weights[j] = mix.prior()(static_cast<Eigen::Index>(c)) *
                 mix.conditionals()(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(j));
  }
  return weighted_mean_classifier_loss(f.matrix(), mix.labels(), weights, task, t);
}

/// Empirical mean-classifier loss on a labelled dataset (uniform weights).
inline LossValue mean_classifier_loss(const Matrix& reps, std::span<const std::size_t> labels, double t = 1.0) {
  std::vector<std::size_t> task;
  for (std::size_t l : labels)
    if (std::find(task.begin(), task.end(), l) == task.end()) task.push_back(l);
  std::sort(task.begin(), task.end());
  require(task.size() >= 2, Errc::SingleClassData, "mean classifier needs at least two classes present");
  std::vector<double> weights(labels.size(), 1.0);
  return weighted_mean_classifier_loss(reps, labels, weights, task, t);
}

}  // namespace dcl
