#pragma once

#include <cmath>
#include <cstdint>

#include "softpos/encoder.hpp"
#include "softpos/error.hpp"

namespace softpos {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

template <typename Scalar>
struct AdamState {
  ParamList<Scalar> m;
  ParamList<Scalar> v;
  std::uint64_t t = 0;  // completed steps

  static AdamState for_params(const ParamList<Scalar>& params) {
    return {zeros_like(params), zeros_like(params), 0};
  }
};

/// One bias-corrected Adam step with decoupled weight decay:
///   theta <- theta - lr * wd * theta, then theta <- theta - lr * m_hat / (sqrt(v_hat) + eps).
template <typename Scalar>
void adam_step(ParamList<Scalar>& params, const ParamList<Scalar>& grads, AdamState<Scalar>& state,
               const AdamHyper& h) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw DimensionMismatch("adam: parameter, gradient and moment lists differ");
  ++state.t;
  const auto t = static_cast<double>(state.t);
  const Scalar lr = static_cast<Scalar>(h.lr);
  const Scalar b1 = static_cast<Scalar>(h.beta1), b2 = static_cast<Scalar>(h.beta2);
  const Scalar c1 = static_cast<Scalar>(1.0 - std::pow(h.beta1, t));
  const Scalar c2 = static_cast<Scalar>(1.0 - std::pow(h.beta2, t));
  const Scalar eps = static_cast<Scalar>(h.eps);
  const Scalar decay = static_cast<Scalar>(h.lr * h.weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].array();
    const auto g = grads[i].array();
    if (params[i].rows() != grads[i].rows() || params[i].cols() != grads[i].cols())
      throw DimensionMismatch("adam: gradient shape mismatch");
    auto m = state.m[i].array();
    auto v = state.v[i].array();
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.square();
    if (decay != Scalar(0)) p -= decay * p;
    p -= lr * (m / c1) / ((v / c2).sqrt() + eps);
  }
}

}  // namespace softpos
