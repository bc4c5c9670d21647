#pragma once

#include <functional>
#include <string>
#include <vector>

#include "test_support.hpp"
#include "tinyclap/distill.hpp"
#include "tinyclap/encoder.hpp"
#include "tinyclap/gradcheck.hpp"

namespace tinyclap::testing {

struct GradCase {
  std::string op;
  double rel_error;
};

namespace detail {

/// sum(op(params) * R) for a fixed random R, so every output element gets a
/// distinct upstream gradient.
inline double check_op(std::vector<Parameter<double>>& params,
                       const std::function<Var<double>(Tape<double>&, std::vector<Var<double>>&)>& op, Rng& rng) {
  std::vector<Parameter<double>*> ptrs;
  for (Parameter<double>& p : params) ptrs.push_back(&p);
  std::optional<Tensor<double>> weights;
  auto loss = [&](Tape<double>& tape) {
    std::vector<Var<double>> vars;
    for (Parameter<double>* p : ptrs) vars.push_back(tape.parameter(*p));
    Var<double> y = op(tape, vars);
    if (!weights) weights = random_tensor(y.shape(), rng);
    return sum(mul(y, tape.constant(*weights)));
  };
  return max_rel_error(gradcheck(ptrs, loss));
}

inline Parameter<double> param(const std::string& name, const Shape& shape, Rng& rng, double lo = -1.0,
                               double hi = 1.0) {
  return Parameter<double>(name, random_tensor(shape, rng, lo, hi));
}

}  // namespace detail

/// Relative error of every differentiable op against central differences.
inline std::vector<GradCase> op_gradient_cases(std::uint64_t seed) {
  using detail::check_op;
  using detail::param;
  Rng rng(seed);
  std::vector<GradCase> out;
  auto run = [&](const std::string& name, std::vector<Parameter<double>> params,
                 const std::function<Var<double>(Tape<double>&, std::vector<Var<double>>&)>& op) {
    out.push_back({name, check_op(params, op, rng)});
  };

  run("conv2d 3x3 stride 2", {param("x", {2, 3, 5, 6}, rng), param("w", {4, 3, 3, 3}, rng)},
      [](Tape<double>&, auto& v) { return conv2d(v[0], v[1], 2, 1); });
  run("conv2d 1x1", {param("x", {2, 3, 4, 3}, rng), param("w", {5, 3, 1, 1}, rng)},
      [](Tape<double>&, auto& v) { return conv2d(v[0], v[1], 1, 0); });
  run("depthwise_conv2d", {param("x", {2, 3, 6, 5}, rng), param("w", {3, 1, 3, 3}, rng)},
      [](Tape<double>&, auto& v) { return depthwise_conv2d(v[0], v[1], 2, 1); });
  run("linear", {param("x", {3, 5}, rng), param("w", {4, 5}, rng), param("b", {4}, rng)},
      [](Tape<double>&, auto& v) { return linear(v[0], v[1], v[2]); });
  run("linear no bias", {param("x", {3, 5}, rng), param("w", {4, 5}, rng)},
      [](Tape<double>&, auto& v) { return linear(v[0], v[1]); });

  Tensor<double> rm({2}), rv = Tensor<double>::constant({2}, 1.0);
  run("batchnorm2d train", {param("x", {3, 2, 3, 2}, rng), param("g", {2}, rng, 0.5, 1.5), param("b", {2}, rng)},
      [&](Tape<double>&, auto& v) { return batchnorm2d(v[0], v[1], v[2], rm, rv, BatchNormMode::kTrain); });
  Tensor<double> em = random_tensor({2}, rng), ev = random_tensor({2}, rng, 0.5, 2.0);
  run("batchnorm2d eval", {param("x", {3, 2, 3, 2}, rng), param("g", {2}, rng, 0.5, 1.5), param("b", {2}, rng)},
      [&](Tape<double>&, auto& v) { return batchnorm2d(v[0], v[1], v[2], em, ev, BatchNormMode::kEval); });

  run("relu", {param("x", {4, 5}, rng)}, [](Tape<double>&, auto& v) { return relu(v[0]); });
  run("hswish", {param("x", {6, 5}, rng, -5.0, 5.0)}, [](Tape<double>&, auto& v) { return hswish(v[0]); });
  run("sigmoid", {param("x", {4, 5}, rng, -4.0, 4.0)}, [](Tape<double>&, auto& v) { return sigmoid(v[0]); });
  run("global_avg_pool", {param("x", {2, 3, 4, 5}, rng)},
      [](Tape<double>&, auto& v) { return global_avg_pool(v[0]); });
  run("add", {param("x", {3, 4}, rng), param("y", {3, 4}, rng)},
      [](Tape<double>&, auto& v) { return add(v[0], v[1]); });
  run("mul", {param("x", {3, 4}, rng), param("y", {3, 4}, rng)},
      [](Tape<double>&, auto& v) { return mul(v[0], v[1]); });
  run("mul channel gate", {param("x", {2, 3, 4, 2}, rng), param("y", {2, 3}, rng)},
      [](Tape<double>&, auto& v) { return mul(v[0], v[1]); });
  run("l2_normalize rows", {param("x", {3, 6}, rng)}, [](Tape<double>&, auto& v) { return l2_normalize(v[0], 1); });
  run("l2_normalize columns", {param("x", {4, 3}, rng)},
      [](Tape<double>&, auto& v) { return l2_normalize(v[0], 0); });
  run("scale", {param("x", {3, 3}, rng)}, [](Tape<double>&, auto& v) { return scale(v[0], -0.37); });
  run("sum", {param("x", {2, 5}, rng)}, [](Tape<double>&, auto& v) { return sum(v[0]); });
  return out;
}

/// End-to-end: distill loss of the tiny encoder (train-mode normalization)
/// against a fixed random unit teacher, w.r.t. every trainable parameter.
inline GradCase encoder_gradient_case(std::uint64_t seed) {
  Rng rng(seed);
  auto encoder = BasicStudentEncoder<double>::build(preset("tiny"), seed);
  const Tensor<double> input = random_tensor({2, 1, 16, 12}, rng);
  const Tensor<double> teacher = kernels::l2_normalize(random_tensor({2, encoder.output_dim()}, rng), 1);
  auto params = encoder.parameters();
  auto loss = [&](Tape<double>& tape) {
    Var<double> s = l2_normalize(encoder.forward(tape, tape.constant(input), BatchNormMode::kTrain), 1);
    return distill_loss(s, tape.constant(teacher));
  };
  return {"tiny encoder distill loss", max_rel_error(gradcheck(params, loss))};
}

}  // namespace tinyclap::testing
