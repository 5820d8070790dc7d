// Hypersphere embeddings, similarity scores and the normalization Jacobian.
//
// Embeddings are stored with unit norm; temperature is applied inside the
// similarity, s(a, b) = a.b / t, so every exponent in the losses is s.
#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "dcl/error.hpp"

namespace dcl {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kMinNorm = 1e-300;
inline constexpr double kUnitTolerance = 1e-12;

/// A point on the unit hypersphere of dimension >= 2.
class UnitEmbedding {
 public:
  /// Wraps coordinates that are already unit-norm; throws otherwise.
  static UnitEmbedding from_unit(Vector coords) {
    require(coords.size() >= 2, Errc::DimensionTooSmall, "embedding dimension must be >= 2");
    require(std::abs(coords.norm() - 1.0) <= kUnitTolerance, Errc::InvalidArgument,
            "coordinates are not unit-norm");
    return UnitEmbedding(std::move(coords));
  }

  const Vector& coords() const noexcept { return coords_; }
  Eigen::Index dim() const noexcept { return coords_.size(); }

 private:
  explicit UnitEmbedding(Vector coords) : coords_(std::move(coords)) {}
  friend UnitEmbedding normalize(const Vector& v);

  Vector coords_;
};

/// Scaled cosine similarity a.b / t.
struct Similarity {
  double value = 0.0;
};

inline UnitEmbedding normalize(const Vector& v) {
  require(v.size() >= 2, Errc::DimensionTooSmall, "embedding dimension must be >= 2");
  const double n = v.norm();
  require(n >= kMinNorm && std::isfinite(n), Errc::ZeroVector, "cannot normalize a zero vector");
  return UnitEmbedding(v / n);
}

/// d normalize(v) / dv = (I - v_hat v_hat^T) / |v|. Symmetric, v in its null space.
inline Matrix normalize_jacobian(const Vector& v) {
  const double n = v.norm();
  require(n >= kMinNorm && std::isfinite(n), Errc::ZeroVector, "cannot differentiate normalize at zero");
  const Vector u = v / n;
  Matrix j = -u * u.transpose();
  j.diagonal().array() += 1.0;
  return j / n;
}

/// Applies the normalization Jacobian at v to a vector without forming it.
inline Vector normalize_jacobian_apply(const Vector& v, const Vector& upstream) {
  const double n = v.norm();
  require(n >= kMinNorm && std::isfinite(n), Errc::ZeroVector, "cannot differentiate normalize at zero");
  const Vector u = v / n;
  return (upstream - u * u.dot(upstream)) / n;
}

inline Similarity similarity(const UnitEmbedding& a, const UnitEmbedding& b, double t) {
  require(t > 0.0, Errc::InvalidArgument, "temperature must be positive");
  require(a.dim() == b.dim(), Errc::InvalidArgument, "embedding dimensions differ");
  return {a.coords().dot(b.coords()) / t};
}

/// Columnwise normalization of a d x n matrix of representations.
inline Matrix normalize_columns(const Matrix& reps) {
  Matrix out(reps.rows(), reps.cols());
  for (Eigen::Index j = 0; j < reps.cols(); ++j) out.col(j) = normalize(reps.col(j)).coords();
  return out;
}

/// All pairwise similarities of a d x n matrix of unit columns.
inline Matrix similarity_matrix(const Matrix& unit_columns, double t) {
  require(t > 0.0, Errc::InvalidArgument, "temperature must be positive");
  return unit_columns.transpose() * unit_columns / t;
}

/// Table f(x_j) of unit embeddings for a finite point set, stored as columns.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;

  /// Normalizes every column of `raw`.
  explicit EmbeddingTable(const Matrix& raw) : table_(normalize_columns(raw)) {}

  static EmbeddingTable constant(Eigen::Index dim, Eigen::Index count) {
    Matrix raw = Matrix::Zero(dim, count);
    raw.row(0).setOnes();
    return EmbeddingTable(raw);
  }

  const Matrix& matrix() const noexcept { return table_; }
  Eigen::Index dim() const noexcept { return table_.rows(); }
  Eigen::Index size() const noexcept { return table_.cols(); }
  UnitEmbedding operator[](Eigen::Index j) const { return UnitEmbedding::from_unit(table_.col(j)); }

  Matrix similarities(double t) const { return similarity_matrix(table_, t); }

 private:
  Matrix table_;
};

}  // namespace dcl
