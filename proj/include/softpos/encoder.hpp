#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "softpos/dataset.hpp"
#include "softpos/error.hpp"
#include "softpos/rng.hpp"

namespace softpos {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Flat list of parameter tensors; optimiser and checkpoint code only see this.
template <typename Scalar>
using ParamList = std::vector<Matrix<Scalar>>;

template <typename Scalar>
ParamList<Scalar> zeros_like(const ParamList<Scalar>& params) {
  ParamList<Scalar> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(Matrix<Scalar>::Zero(p.rows(), p.cols()));
  return out;
}

/// Fully connected encoder: affine + ReLU on hidden layers, affine output,
/// then L2 normalisation onto the unit sphere.
///
/// Parameters are stored as [W_0, b_0, W_1, b_1, ...] with W_l of shape
/// (dims[l+1] x dims[l]) and b_l a column vector. Inputs are row-major batches:
/// one sample per row.
template <typename Scalar = double>
class MlpEncoder {
 public:
  MlpEncoder() = default;

  MlpEncoder(std::vector<std::size_t> dims, ParamList<Scalar> params)
      : dims_(std::move(dims)), params_(std::move(params)) {
    check_shapes();
  }

  static MlpEncoder init(std::vector<std::size_t> dims, std::uint64_t seed) {
    if (dims.size() < 2) throw InvalidArgument("encoder needs at least input and output dims");
    for (std::size_t d : dims)
      if (d == 0) throw InvalidArgument("encoder dims must be positive");
    Rng rng(seed, {0x656e63ULL});
    ParamList<Scalar> params;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      const std::size_t fan_in = dims[l], fan_out = dims[l + 1];
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      Matrix<Scalar> w(fan_out, fan_in);
      for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = static_cast<Scalar>(rng.uniform(-limit, limit));
      params.push_back(std::move(w));
      params.push_back(Matrix<Scalar>::Zero(static_cast<Eigen::Index>(fan_out), 1));
    }
    return MlpEncoder(std::move(dims), std::move(params));
  }

  const std::vector<std::size_t>& dims() const noexcept { return dims_; }
  std::size_t input_dim() const noexcept { return dims_.front(); }
  std::size_t output_dim() const noexcept { return dims_.back(); }
  std::size_t num_layers() const noexcept { return dims_.size() - 1; }

  ParamList<Scalar>& params() noexcept { return params_; }
  const ParamList<Scalar>& params() const noexcept { return params_; }
  const Matrix<Scalar>& weight(std::size_t l) const { return params_.at(2 * l); }
  const Matrix<Scalar>& bias(std::size_t l) const { return params_.at(2 * l + 1); }

  friend bool operator==(const MlpEncoder& a, const MlpEncoder& b) {
    if (a.dims_ != b.dims_ || a.params_.size() != b.params_.size()) return false;
    for (std::size_t i = 0; i < a.params_.size(); ++i)
      if (a.params_[i] != b.params_[i]) return false;
    return true;
  }

  struct Tape {
    std::vector<Matrix<Scalar>> inputs;  // input of every layer
    std::vector<Matrix<Scalar>> pre;     // pre-activation of every layer
    Vector<Scalar> norms;                // ||y|| per row before normalisation
    Matrix<Scalar> output;               // unit-norm embeddings
  };

  Tape forward(const Matrix<Scalar>& x) const {
    if (static_cast<std::size_t>(x.cols()) != input_dim())
      throw DimensionMismatch("encoder expects " + std::to_string(input_dim()) + " inputs, got " +
                              std::to_string(x.cols()));
    Tape tape;
    Matrix<Scalar> h = x;
    for (std::size_t l = 0; l < num_layers(); ++l) {
      Matrix<Scalar> z = h * weight(l).transpose();
      z.rowwise() += bias(l).col(0).transpose();
      tape.inputs.push_back(std::move(h));
      tape.pre.push_back(z);
      h = l + 1 < num_layers() ? Matrix<Scalar>(z.cwiseMax(Scalar(0))) : std::move(z);
    }
    tape.norms = h.rowwise().norm();
    for (Eigen::Index r = 0; r < h.rows(); ++r) {
      if (!(tape.norms(r) > Scalar(0)))
        throw ZeroNormEmbedding("encoder output row " + std::to_string(r) + " has zero norm");
      h.row(r) /= tape.norms(r);
    }
    tape.output = std::move(h);
    return tape;
  }

  Matrix<Scalar> embed(const Matrix<Scalar>& x) const { return forward(x).output; }

  struct Grads {
    ParamList<Scalar> params;
    Matrix<Scalar> input;
  };

  // grad_out holds dL/d(embedding) per row; the normalisation Jacobian
  // (I - y^ y^T) / ||y|| is applied here.
  Grads backward(const Tape& tape, const Matrix<Scalar>& grad_out) const {
    const auto& yhat = tape.output;
    Matrix<Scalar> g = grad_out - yhat.cwiseProduct(grad_out).rowwise().sum().asDiagonal() * yhat;
    g = tape.norms.cwiseInverse().asDiagonal() * g;

    Grads grads;
    grads.params.resize(params_.size());
    for (std::size_t l = num_layers(); l-- > 0;) {
      if (l + 1 < num_layers()) g = g.cwiseProduct((tape.pre[l].array() > Scalar(0)).matrix().template cast<Scalar>());
      grads.params[2 * l] = g.transpose() * tape.inputs[l];
      grads.params[2 * l + 1] = g.colwise().sum().transpose();
      g = g * weight(l);
    }
    grads.input = std::move(g);
    return grads;
  }

 private:
  void check_shapes() const {
    if (dims_.size() < 2 || params_.size() != 2 * (dims_.size() - 1))
      throw InvalidArgument("encoder parameter list does not match dims");
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
      const auto& w = params_[2 * l];
      const auto& b = params_[2 * l + 1];
      if (static_cast<std::size_t>(w.rows()) != dims_[l + 1] ||
          static_cast<std::size_t>(w.cols()) != dims_[l] ||
          static_cast<std::size_t>(b.rows()) != dims_[l + 1] || b.cols() != 1)
        throw DimensionMismatch("encoder layer " + std::to_string(l) + " has wrong shape");
      if (!w.allFinite() || !b.allFinite()) throw InvalidArgument("non-finite encoder parameter");
    }
  }

  std::vector<std::size_t> dims_;
  ParamList<Scalar> params_;
};

enum class Modality { A, B };

// Stacks the requested samples' features of one modality into a batch.
template <typename Scalar>
Matrix<Scalar> gather(const Dataset& ds, std::span<const std::size_t> ids, Modality m) {
  const std::size_t dim = m == Modality::A ? ds.dim_a() : ds.dim_b();
  Matrix<Scalar> x(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const auto& f = m == Modality::A ? ds[ids[r]].feat_a : ds[ids[r]].feat_b;
    for (std::size_t c = 0; c < dim; ++c)
      x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = static_cast<Scalar>(f[c]);
  }
  return x;
}

}  // namespace softpos
