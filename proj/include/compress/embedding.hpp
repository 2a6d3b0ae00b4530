#pragma once

// Numerical primitives shared by the distillation objective and the
// evaluators: row normalization, cosine scores, temperature SoftMax and KL.
//
// Everything here is templated on the scalar type. The rest of the library
// instantiates with double; float is useful for checking file-precision data.

#include <Eigen/Core>

#include <cmath>
#include <string>
#include <utility>

#include "compress/error.hpp"

namespace compress {

using Index = Eigen::Index;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXr = RowMatrix<double>;
using VectorXr = Vector<double>;

inline constexpr double kDefaultTemperature = 0.04;
inline constexpr double kZeroNormThreshold = 1e-12;
inline constexpr double kUnitNormTolerance = 1e-6;

/// A batch of embeddings, one per row. When `normalized` is set every row is
/// unit length; the constructor enforces this together with finiteness.
template <typename Scalar = double>
class EmbeddingBatch {
 public:
  using Matrix = RowMatrix<Scalar>;

  EmbeddingBatch() = default;

  explicit EmbeddingBatch(Matrix data, bool normalized = false)
      : data_(std::move(data)), normalized_(normalized) {
    if (!data_.allFinite()) throw Error(Errc::NonFinite, "embedding batch has non-finite entries");
    if (normalized_) {
      for (Index i = 0; i < data_.rows(); ++i) {
        const double norm = static_cast<double>(data_.row(i).norm());
        if (std::abs(norm - 1.0) > kUnitNormTolerance)
          throw Error(Errc::UnnormalizedBatch, "row " + std::to_string(i) + " has norm " + std::to_string(norm));
      }
    }
  }

  EmbeddingBatch(Index rows, Index dim) : data_(Matrix::Zero(rows, dim)) {}

  const Matrix& data() const noexcept { return data_; }
  Index size() const noexcept { return data_.rows(); }
  Index dim() const noexcept { return data_.cols(); }
  bool normalized() const noexcept { return normalized_; }

  auto row(Index i) const { return data_.row(i); }

  /// Rows `indices` in the given order.
  template <typename IndexRange>
  EmbeddingBatch gather(const IndexRange& indices) const {
    EmbeddingBatch out;
    out.data_.resize(static_cast<Index>(std::size(indices)), dim());
    Index r = 0;
    for (auto i : indices) out.data_.row(r++) = data_.row(static_cast<Index>(i));
    out.normalized_ = normalized_;
    return out;
  }

 private:
  Matrix data_;
  bool normalized_ = false;
};

/// Probability vector over the current anchor set for one query.
template <typename Scalar = double>
struct SimilarityDistribution {
  Vector<Scalar> probs;

  Index size() const noexcept { return probs.size(); }
  Scalar operator[](Index j) const { return probs[j]; }
};

/// Divides every row by its Euclidean norm. Throws ZeroNormRow when a row has
/// (numerically) zero length.
template <typename Derived>
RowMatrix<typename Derived::Scalar> l2_normalize_rows(const Eigen::MatrixBase<Derived>& rows) {
  using Scalar = typename Derived::Scalar;
  RowMatrix<Scalar> out = rows;
  for (Index i = 0; i < out.rows(); ++i) {
    const Scalar norm = out.row(i).norm();
    if (!(static_cast<double>(norm) >= kZeroNormThreshold))
      throw Error(Errc::ZeroNormRow, "row " + std::to_string(i) + " has zero norm");
    out.row(i) /= norm;
  }
  return out;
}

template <typename Scalar>
EmbeddingBatch<Scalar> l2_normalize(const EmbeddingBatch<Scalar>& batch) {
  return EmbeddingBatch<Scalar>(l2_normalize_rows(batch.data()), true);
}

/// Entry j is <query, anchors.row(j)>. Both sides are expected to be unit
/// length so the result is a cosine similarity.
template <typename DerivedQ, typename DerivedA>
Vector<typename DerivedQ::Scalar> cosine_scores(const Eigen::MatrixBase<DerivedQ>& query,
                                                const Eigen::MatrixBase<DerivedA>& anchors) {
  if (query.size() != anchors.cols())
    throw Error(Errc::DimensionMismatch, "query dim " + std::to_string(query.size()) + " vs anchor dim " +
                                             std::to_string(anchors.cols()));
  using Scalar = typename DerivedQ::Scalar;
  Vector<Scalar> q = query.derived().reshaped();
  return anchors * q;
}

/// Pairwise scores for a whole batch of queries: row i holds cosine_scores(queries.row(i), anchors).
template <typename DerivedQ, typename DerivedA>
RowMatrix<typename DerivedQ::Scalar> cosine_score_matrix(const Eigen::MatrixBase<DerivedQ>& queries,
                                                         const Eigen::MatrixBase<DerivedA>& anchors) {
  if (queries.cols() != anchors.cols())
    throw Error(Errc::DimensionMismatch, "query dim " + std::to_string(queries.cols()) + " vs anchor dim " +
                                             std::to_string(anchors.cols()));
  return queries * anchors.transpose();
}

inline void check_temperature(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau))
    throw Error(Errc::NonPositiveTemperature, "temperature must be positive, got " + std::to_string(tau));
}

/// softmax(scores / tau) with the maximum subtracted before exponentiation.
template <typename Derived>
SimilarityDistribution<typename Derived::Scalar> softmax_temperature(const Eigen::MatrixBase<Derived>& scores,
                                                                     double tau) {
  using Scalar = typename Derived::Scalar;
  check_temperature(tau);
  if (!scores.allFinite()) throw Error(Errc::NonFinite, "scores must be finite");
  SimilarityDistribution<Scalar> out;
  if (scores.size() == 0) return out;
  const Scalar top = scores.maxCoeff();
  out.probs = ((scores.derived().reshaped().array() - top) / static_cast<Scalar>(tau)).exp().matrix();
  out.probs /= out.probs.sum();
  return out;
}

/// Row-wise softmax_temperature, in place. Used by the training loop where the
/// per-query wrapper would only add copies.
template <typename Scalar>
void softmax_rows_inplace(RowMatrix<Scalar>& scores, double tau) {
  check_temperature(tau);
  const Scalar inv_tau = static_cast<Scalar>(1.0 / tau);
  for (Index i = 0; i < scores.rows(); ++i) {
    auto row = scores.row(i);
    const Scalar top = row.maxCoeff();
    row = ((row.array() - top) * inv_tau).exp().matrix();
    row /= row.sum();
  }
}

/// KL(p || q) = sum_j p_j log(p_j / q_j), with 0 log(0 / q) taken as 0.
template <typename DerivedP, typename DerivedQ>
typename DerivedP::Scalar kl_divergence(const Eigen::MatrixBase<DerivedP>& p, const Eigen::MatrixBase<DerivedQ>& q) {
  using Scalar = typename DerivedP::Scalar;
  if (p.size() != q.size())
    throw Error(Errc::LengthMismatch,
                "distribution lengths " + std::to_string(p.size()) + " and " + std::to_string(q.size()));
  Scalar total = 0;
  for (Index j = 0; j < p.size(); ++j) {
    const Scalar pj = p.derived().coeff(j);
    if (pj > 0) total += pj * std::log(pj / q.derived().coeff(j));
  }
  return total;
}

template <typename Scalar>
Scalar kl_divergence(const SimilarityDistribution<Scalar>& p, const SimilarityDistribution<Scalar>& q) {
  return kl_divergence(p.probs, q.probs);
}

}  // namespace compress
