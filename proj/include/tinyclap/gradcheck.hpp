#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tinyclap/autodiff.hpp"

namespace tinyclap {

/// Gradients smaller than this are compared in absolute terms; some are
/// exactly zero (a bias feeding a batch-statistics normalization).
inline constexpr double kGradCheckFloor = 1e-3;

struct GradCheckResult {
  std::string name;
  /// ||analytic - numeric|| / max(||analytic||, ||numeric||, kGradCheckFloor)
  double rel_error = 0.0;
  double max_abs_error = 0.0;
};

/// Compares reverse-mode gradients of a scalar loss with central finite
/// differences. `loss_fn` must rebuild the loss on the tape it is given.
inline std::vector<GradCheckResult> gradcheck(std::span<Parameter<double>* const> params,
                                              const std::function<Var<double>(Tape<double>&)>& loss_fn,
                                              double h = 1e-6) {
  for (Parameter<double>* p : params) p->zero_grad();
  {
    Tape<double> tape;
    tape.backward(loss_fn(tape));
  }
  auto eval = [&] {
    Tape<double> tape;
    return loss_fn(tape).value().item();
  };
  std::vector<GradCheckResult> out;
  for (Parameter<double>* p : params) {
    const Tensor<double> analytic = p->grad;
    Tensor<double> numeric(p->value.shape());
    for (Index i = 0; i < p->value.size(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + h;
      const double up = eval();
      p->value[i] = orig - h;
      const double down = eval();
      p->value[i] = orig;
      numeric[i] = (up - down) / (2.0 * h);
    }
    const double diff = (analytic.data() - numeric.data()).norm();
    const double scale = std::max({analytic.data().norm(), numeric.data().norm(), kGradCheckFloor});
    out.push_back({p->name, diff / scale, (analytic.data() - numeric.data()).cwiseAbs().maxCoeff()});
  }
  return out;
}

inline double max_rel_error(const std::vector<GradCheckResult>& results) {
  double worst = 0.0;
  for (const GradCheckResult& r : results) worst = std::max(worst, r.rel_error);
  return worst;
}

}  // namespace tinyclap
