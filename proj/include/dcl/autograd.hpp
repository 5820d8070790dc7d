// Closed-form gradients of the batch contrastive losses and a central
// finite-difference harness to check them.
//
// Chain: loss -> per-role similarities -> unit embeddings -> normalize()
// -> encoder parameters. On the floored branch of g the derivative with
// respect to the u and v similarities is zero; s+ keeps its direct term.
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "dcl/encoder.hpp"
#include "dcl/error.hpp"
#include "dcl/geometry.hpp"
#include "dcl/losses.hpp"
#include "dcl/numeric.hpp"

namespace dcl {

/// Raw inputs for one step: two views per anchor plus M-1 extra positive views.
struct InputBatch {
  Matrix view_a;                    // m x B
  Matrix view_b;                    // m x B
  Matrix extras;                    // m x B(M-1); anchor i owns columns i(M-1) ..
  std::vector<std::size_t> labels;  // per anchor

  std::size_t anchors() const noexcept { return static_cast<std::size_t>(view_a.cols()); }

  /// [view_a | view_b | extras], the encoder's input matrix.
  Matrix stacked() const {
    Matrix x(view_a.rows(), view_a.cols() + view_b.cols() + extras.cols());
    x << view_a, view_b, extras;
    return x;
  }
};

/// Loss and gradient with respect to pre-normalized representations.
struct RepresentationGrad {
  LossValue loss;
  Matrix grad_views;            // d x 2B
  Matrix grad_extras;           // d x B(M-1)
  std::vector<bool> floored;    // per role; always false for biased/unbiased
};

namespace detail {

/// Accumulates dL/d(similarity) for one role into dL/d(unit embedding).
inline void add_pair(Matrix& grad_a, Eigen::Index a, const Matrix& emb_a, Matrix& grad_b, Eigen::Index b,
                     const Matrix& emb_b, double coeff, double t) {
  grad_a.col(a) += coeff / t * emb_b.col(b);
  grad_b.col(b) += coeff / t * emb_a.col(a);
}

}  // namespace detail

inline RepresentationGrad loss_and_grad_reps(const Matrix& pre_views, const Matrix& pre_extras,
                                             const std::vector<std::size_t>& labels, const BatchLossSpec& spec) {
  ViewBatch batch{normalize_columns(pre_views), normalize_columns(pre_extras), labels};
  detail::check_batch(batch, spec);
  const std::size_t B = batch.anchors();
  const double t = spec.t;
  const Matrix view_sims = batch.views.transpose() * batch.views / t;
  const Matrix extra_sims = batch.views.transpose() * batch.extras / t;

  Matrix d_views = Matrix::Zero(batch.views.rows(), batch.views.cols());
  Matrix d_extras = Matrix::Zero(batch.extras.rows(), batch.extras.cols());
  RepresentationGrad out;
  out.floored.assign(2 * B, false);
  const double scale = 1.0 / static_cast<double>(2 * B);
  CompensatedSum total;

  for (std::size_t role = 0; role < 2 * B; ++role) {
    const RoleSims r = gather_role(batch, spec, view_sims, extra_sims, role);
    const auto ri = static_cast<Eigen::Index>(role);
    const auto pi = static_cast<Eigen::Index>(r.partner);
    double d_pos = 0.0;

    if (spec.kind == BatchLossKind::Debiased) {
      const auto parts = detail::debiased_parts(r.s_neg, r.s_v, spec.tau_plus, t, spec.floor);
      const double z = parts.log_ng - r.s_pos;
      total += softplus(z);
      const double sig = sigmoid(z);
      d_pos = -sig;
      out.floored[role] = parts.floored;
      if (!parts.floored) {
        // d log(Ng)/d s_u = softmax_u / (1 - tau+ r); d/d s_v = -tau+ r softmax_v / (1 - tau+ r).
        const double amp = 1.0 / parts.inner;
        for (std::size_t k = 0; k < r.s_neg.size(); ++k) {
          const double coeff = scale * sig * std::exp(r.s_neg[k] - parts.lse_u) * amp;
          detail::add_pair(d_views, ri, batch.views, d_views, static_cast<Eigen::Index>(r.negative_cols[k]),
                           batch.views, coeff, t);
        }
        const double v_amp = -spec.tau_plus * parts.ratio * amp;
        for (std::size_t j = 0; j < r.s_v.size(); ++j) {
          const double dv = sig * v_amp * std::exp(r.s_v[j] - parts.lse_v);
          if (j == 0) {
            d_pos += dv;
          } else {
            const auto col = static_cast<Eigen::Index>(r.anchor * (spec.positives - 1) + j - 1);
            detail::add_pair(d_views, ri, batch.views, d_extras, col, batch.extras, scale * dv, t);
          }
        }
      }
    } else {
      if (r.s_neg.empty()) continue;  // unbiased role without true negatives: constant 0
      const double lse = log_sum_exp(r.s_neg);
      const double z = std::log(1.0) + lse - r.s_pos;
      total += softplus(z);
      const double sig = sigmoid(z);
      d_pos = -sig;
      for (std::size_t k = 0; k < r.s_neg.size(); ++k) {
        const double coeff = scale * sig * std::exp(r.s_neg[k] - lse);
        detail::add_pair(d_views, ri, batch.views, d_views, static_cast<Eigen::Index>(r.negative_cols[k]),
                         batch.views, coeff, t);
      }
    }
    detail::add_pair(d_views, ri, batch.views, d_views, pi, batch.views, scale * d_pos, t);
  }

  const LossKind kind = spec.kind == BatchLossKind::Debiased ? LossKind::DebiasedFinite
                        : spec.kind == BatchLossKind::Unbiased ? LossKind::Unbiased
                                                                : LossKind::Biased;
  out.loss = {total.value() * scale, kind};
  out.grad_views.resize(d_views.rows(), d_views.cols());
  for (Eigen::Index j = 0; j < d_views.cols(); ++j)
    out.grad_views.col(j) = normalize_jacobian_apply(pre_views.col(j), d_views.col(j));
  out.grad_extras.resize(d_extras.rows(), d_extras.cols());
  for (Eigen::Index j = 0; j < d_extras.cols(); ++j)
    out.grad_extras.col(j) = normalize_jacobian_apply(pre_extras.col(j), d_extras.col(j));
  return out;
}

struct LossAndGrad {
  LossValue loss;
  EncoderParams grad;
  std::vector<bool> floored;
};

inline LossAndGrad loss_and_grad(const EncoderParams& params, const InputBatch& batch, const BatchLossSpec& spec) {
  require(batch.anchors() >= 2, Errc::BatchTooSmall, "batch needs B >= 2 anchors");
  const Matrix inputs = batch.stacked();
  const Matrix pre = params.forward(inputs);
  const auto B2 = static_cast<Eigen::Index>(2 * batch.anchors());
  const Matrix pre_views = pre.leftCols(B2);
  const Matrix pre_extras = pre.rightCols(pre.cols() - B2);
  auto rg = loss_and_grad_reps(pre_views, pre_extras, batch.labels, spec);
  Matrix grad_pre(pre.rows(), pre.cols());
  grad_pre << rg.grad_views, rg.grad_extras;
  return {rg.loss, params.backward(inputs, grad_pre), std::move(rg.floored)};
}

/// Forward-only evaluation through the losses module; also reports clamp state.
struct ForwardEval {
  double loss = 0.0;
  std::vector<bool> floored;
};

inline ForwardEval evaluate_batch(const EncoderParams& params, const InputBatch& batch, const BatchLossSpec& spec) {
  const Matrix pre = params.forward(batch.stacked());
  const auto B2 = static_cast<Eigen::Index>(2 * batch.anchors());
  ViewBatch vb{normalize_columns(pre.leftCols(B2)), normalize_columns(pre.rightCols(pre.cols() - B2)), batch.labels};
  ForwardEval out;
  out.loss = batch_loss(vb, spec).value;
  if (spec.kind == BatchLossKind::Debiased) {
    const Matrix view_sims = vb.views.transpose() * vb.views / spec.t;
    const Matrix extra_sims = vb.views.transpose() * vb.extras / spec.t;
    for (std::size_t role = 0; role < 2 * vb.anchors(); ++role) {
      const RoleSims r = gather_role(vb, spec, view_sims, extra_sims, role);
      out.floored.push_back(detail::debiased_parts(r.s_neg, r.s_v, spec.tau_plus, spec.t, spec.floor).floored);
    }
  } else {
    out.floored.assign(2 * vb.anchors(), false);
  }
  return out;
}

struct GradientReport {
  Vector analytic;
  Vector numeric;
  double max_rel_err = 0.0;
  double step = 0.0;
  std::size_t excluded = 0;  // coordinates whose +-step straddles the clamp boundary
  std::vector<bool> excluded_mask;
};

/// Central differences on every parameter coordinate against loss_and_grad.
/// max_rel_err = |a - n|_inf / (|n|_inf + 1e-12) over non-excluded coordinates.
inline GradientReport finite_diff_check(const EncoderParams& params, const InputBatch& batch,
                                        const BatchLossSpec& spec, double step = 1e-6) {
  require(step >= 1e-8 && step <= 1e-3, Errc::InvalidArgument, "finite-difference step must lie in [1e-8, 1e-3]");
  GradientReport rep;
  rep.step = step;
  const auto lg = loss_and_grad(params, batch, spec);
  rep.analytic = lg.grad.flatten();
  const Vector theta = params.flatten();
  rep.numeric = Vector::Zero(theta.size());
  rep.excluded_mask.assign(static_cast<std::size_t>(theta.size()), false);

  EncoderParams probe = params;
  double err = 0.0, scale = 0.0;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    Vector th = theta;
    th(i) = theta(i) + step;
    probe.assign(th);
    const auto plus = evaluate_batch(probe, batch, spec);
    th(i) = theta(i) - step;
    probe.assign(th);
    const auto minus = evaluate_batch(probe, batch, spec);
    rep.numeric(i) = (plus.loss - minus.loss) / (2.0 * step);
    if (plus.floored != minus.floored || plus.floored != lg.floored) {
      rep.excluded_mask[static_cast<std::size_t>(i)] = true;
      ++rep.excluded;
      continue;
    }
    err = std::max(err, std::abs(rep.analytic(i) - rep.numeric(i)));
    scale = std::max(scale, std::abs(rep.numeric(i)));
  }
  rep.max_rel_err = err / (scale + 1e-12);
  return rep;
}

}  // namespace dcl
