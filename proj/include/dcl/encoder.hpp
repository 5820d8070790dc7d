// Trainable encoder: x -> W x, or x -> W tanh(W1 x + b1) with a hidden layer.
// The embedding is normalize() of the encoder output.
#pragma once

#include <cmath>
#include <optional>

#include "dcl/error.hpp"
#include "dcl/geometry.hpp"
#include "dcl/rng.hpp"

namespace dcl {

struct HiddenLayer {
  Matrix weight;  // h x m
  Vector bias;    // h
};

class EncoderParams {
 public:
  EncoderParams() = default;

  /// Linear encoder with a given output matrix (d x m).
  explicit EncoderParams(Matrix w) : w_(std::move(w)) { validate(); }

  EncoderParams(Matrix w, HiddenLayer hidden) : w_(std::move(w)), hidden_(std::move(hidden)) { validate(); }

  /// Gaussian init scaled by 1/sqrt(fan_in); `hidden_dim` = 0 gives a linear map.
  static EncoderParams random(Eigen::Index output_dim, Eigen::Index input_dim, Eigen::Index hidden_dim, Rng& rng) {
    require(output_dim >= 2, Errc::DimensionTooSmall, "encoder output dimension must be >= 2");
    require(input_dim >= 1 && hidden_dim >= 0, Errc::InvalidArgument, "invalid encoder shape");
    auto gaussian = [&rng](Eigen::Index r, Eigen::Index c) {
      Matrix m(r, c);
      const double scale = 1.0 / std::sqrt(static_cast<double>(c));
      for (Eigen::Index j = 0; j < c; ++j)
        for (Eigen::Index i = 0; i < r; ++i) m(i, j) = scale * rng.normal();
      return m;
    };
    if (hidden_dim == 0) return EncoderParams(gaussian(output_dim, input_dim));
    HiddenLayer h{gaussian(hidden_dim, input_dim), Vector::Zero(hidden_dim)};
    return EncoderParams(gaussian(output_dim, hidden_dim), std::move(h));
  }

  const Matrix& output_weight() const noexcept { return w_; }
  const std::optional<HiddenLayer>& hidden() const noexcept { return hidden_; }
  Eigen::Index output_dim() const noexcept { return w_.rows(); }
  Eigen::Index input_dim() const noexcept { return hidden_ ? hidden_->weight.cols() : w_.cols(); }

  Eigen::Index size() const noexcept {
    Eigen::Index n = w_.size();
    if (hidden_) n += hidden_->weight.size() + hidden_->bias.size();
    return n;
  }

  /// Flat view: W (column-major), then W1, then b1.
  Vector flatten() const {
    Vector out(size());
    Eigen::Index at = 0;
    auto put = [&](const auto& m) {
      out.segment(at, m.size()) = Eigen::Map<const Vector>(m.data(), m.size());
      at += m.size();
    };
    put(w_);
    if (hidden_) {
      put(hidden_->weight);
      put(hidden_->bias);
    }
    return out;
  }

  void assign(const Vector& flat) {
    require(flat.size() == size(), Errc::InvalidArgument, "flat parameter vector has the wrong length");
    Eigen::Index at = 0;
    auto take = [&](auto& m) {
      Eigen::Map<Vector>(m.data(), m.size()) = flat.segment(at, m.size());
      at += m.size();
    };
    take(w_);
    if (hidden_) {
      take(hidden_->weight);
      take(hidden_->bias);
    }
  }

  EncoderParams zeros_like() const {
    EncoderParams z = *this;
    z.assign(Vector::Zero(size()));
    return z;
  }

  bool all_finite() const { return flatten().allFinite(); }

  /// Hidden activations for a batch of inputs (m x n); empty for linear encoders.
  Matrix hidden_activations(const Matrix& inputs) const {
    if (!hidden_) return Matrix();
    Matrix a = hidden_->weight * inputs;
    a.colwise() += hidden_->bias;
    return a.array().tanh().matrix();
  }

  /// Pre-normalized representations, d x n.
  Matrix forward(const Matrix& inputs) const {
    require(inputs.rows() == input_dim(), Errc::InvalidArgument, "input feature dimension mismatch");
    return hidden_ ? Matrix(w_ * hidden_activations(inputs)) : Matrix(w_ * inputs);
  }

  /// Unit embeddings, d x n.
  Matrix embed(const Matrix& inputs) const { return normalize_columns(forward(inputs)); }

  /// Parameter gradient given dL/d(forward output) for the same inputs.
  EncoderParams backward(const Matrix& inputs, const Matrix& grad_out) const {
    EncoderParams g = zeros_like();
    if (!hidden_) {
      g.w_ = grad_out * inputs.transpose();
      return g;
    }
    const Matrix h = hidden_activations(inputs);
    g.w_ = grad_out * h.transpose();
    const Matrix dh = (w_.transpose() * grad_out).array() * (1.0 - h.array().square());
    g.hidden_->weight = dh * inputs.transpose();
    g.hidden_->bias = dh.rowwise().sum();
    return g;
  }

 private:
  void validate() const {
    require(w_.rows() >= 2, Errc::DimensionTooSmall, "encoder output dimension must be >= 2");
    if (hidden_) {
      require(hidden_->weight.rows() == w_.cols() && hidden_->bias.size() == w_.cols(), Errc::InvalidArgument,
              "hidden layer shape does not match output layer");
    }
  }

  Matrix w_;
  std::optional<HiddenLayer> hidden_;
};

}  // namespace dcl
