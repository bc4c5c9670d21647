#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "tinyclap/autodiff.hpp"

namespace tinyclap {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over a fixed, ordered parameter list. Moment i
/// belongs to parameter i of every step() call.
template <typename Scalar>
class Adam {
 public:
  explicit Adam(AdamOptions opts) : opts_(opts) {
    if (!(opts_.lr > 0.0)) throw ContractError("adam: learning rate must be > 0");
  }

  const AdamOptions& options() const noexcept { return opts_; }
  std::int64_t steps() const noexcept { return step_; }
  const std::vector<Tensor<Scalar>>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor<Scalar>>& second_moments() const noexcept { return v_; }

  /// One update from the gradients held by `params`. All gradients are
  /// checked before any parameter is touched.
  void step(std::span<Parameter<Scalar>* const> params) {
    if (!m_.empty() && m_.size() != params.size())
      throw ContractError("adam: parameter list changed size between steps");
    for (const Parameter<Scalar>* p : params) {
      require_same_shape(p->value.shape(), p->grad.shape(), "adam");
      if (!p->grad.all_finite()) throw NumericError("adam: non-finite gradient for parameter '" + p->name + "'");
    }
    if (m_.empty()) {
      for (const Parameter<Scalar>* p : params) {
        m_.emplace_back(p->value.shape());
        v_.emplace_back(p->value.shape());
      }
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
    const Scalar b1 = Scalar(opts_.beta1), b2 = Scalar(opts_.beta2);
    const Scalar step_size = Scalar(opts_.lr / bc1);
    const Scalar sqrt_bc2 = Scalar(std::sqrt(bc2));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter<Scalar>& p = *params[i];
      require_same_shape(p.value.shape(), m_[i].shape(), "adam");
      auto g = p.grad.data().array();
      auto m = m_[i].data().array();
      auto v = v_[i].data().array();
      m = b1 * m + (Scalar(1) - b1) * g;
      v = b2 * v + (Scalar(1) - b2) * g.square();
      p.value.data().array() -= step_size * m / (v.sqrt() / sqrt_bc2 + Scalar(opts_.eps));
    }
  }

 private:
  AdamOptions opts_;
  std::int64_t step_ = 0;
  std::vector<Tensor<Scalar>> m_, v_;
};

}  // namespace tinyclap
