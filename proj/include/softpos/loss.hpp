#pragma once

#include <cmath>

#include "softpos/encoder.hpp"
#include "softpos/error.hpp"

namespace softpos {

template <typename Scalar>
struct InfoNceResult {
  Scalar loss = 0;
  Matrix<Scalar> similarity;  // S[i][j] = <a_i, v_j> / tau
};

// Per-anchor cross-entropy terms: rows give -log softmax_row(S)[i][i] (A -> V),
// columns give -log softmax_col(S)[i][i] (V -> A). Max-subtracted log-sum-exp.
template <typename Scalar>
Vector<Scalar> row_terms(const Matrix<Scalar>& s) {
  Vector<Scalar> out(s.rows());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const Scalar m = s.row(i).maxCoeff();
    out(i) = m + std::log((s.row(i).array() - m).exp().sum()) - s(i, i);
  }
  return out;
}

template <typename Scalar>
Vector<Scalar> column_terms(const Matrix<Scalar>& s) {
  Vector<Scalar> out(s.cols());
  for (Eigen::Index j = 0; j < s.cols(); ++j) {
    const Scalar m = s.col(j).maxCoeff();
    out(j) = m + std::log((s.col(j).array() - m).exp().sum()) - s(j, j);
  }
  return out;
}

template <typename Scalar>
Scalar infonce_from_similarity(const Matrix<Scalar>& s) {
  if (s.rows() != s.cols() || s.rows() < 1) throw InvalidArgument("similarity matrix must be square");
  return (row_terms(s).sum() + column_terms(s).sum()) / (Scalar(2) * static_cast<Scalar>(s.rows()));
}

/// Symmetric cross-modal InfoNCE over a batch whose positives sit on the
/// diagonal:
///   L = 1/(2B) * sum_i [ -log softmax_row(S)[i][i] - log softmax_col(S)[i][i] ],
/// with S = A V^T / tau.
template <typename Scalar>
InfoNceResult<Scalar> infonce_loss(const Matrix<Scalar>& a, const Matrix<Scalar>& v, Scalar tau) {
  if (!(tau > Scalar(0))) throw TemperatureNonPositive("temperature must be > 0");
  if (a.rows() != v.rows() || a.cols() != v.cols()) throw DimensionMismatch("A and V shapes differ");
  if (a.rows() < 1) throw InvalidArgument("empty batch");
  InfoNceResult<Scalar> r;
  r.similarity = (a * v.transpose()) / tau;
  r.loss = infonce_from_similarity(r.similarity);
  return r;
}

// dL/dS: (row-softmax - I + column-softmax - I) / (2B).
template <typename Scalar>
Matrix<Scalar> infonce_similarity_grad(const Matrix<Scalar>& s) {
  const Eigen::Index b = s.rows();
  Matrix<Scalar> g(b, b);
  for (Eigen::Index i = 0; i < b; ++i) {
    auto e = (s.row(i).array() - s.row(i).maxCoeff()).exp();
    g.row(i) = e / e.sum();
  }
  for (Eigen::Index j = 0; j < b; ++j) {
    auto e = (s.col(j).array() - s.col(j).maxCoeff()).exp();
    g.col(j) += (e / e.sum()).matrix();
  }
  g.diagonal().array() -= Scalar(2);
  return g / (Scalar(2) * static_cast<Scalar>(b));
}

template <typename Scalar>
struct InfoNceGrads {
  Matrix<Scalar> a;
  Matrix<Scalar> v;
};

// Gradients w.r.t. the (already normalised) embeddings.
template <typename Scalar>
InfoNceGrads<Scalar> infonce_grad(const Matrix<Scalar>& s, const Matrix<Scalar>& a,
                                  const Matrix<Scalar>& v, Scalar tau) {
  if (!(tau > Scalar(0))) throw TemperatureNonPositive("temperature must be > 0");
  const Matrix<Scalar> gs = infonce_similarity_grad(s);
  return {gs * v / tau, gs.transpose() * a / tau};
}

}  // namespace softpos
