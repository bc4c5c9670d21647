#include <doctest.h>

#include "gradient_cases.hpp"
#include "test_support.hpp"
#include "tinyclap/autodiff.hpp"
#include "tinyclap/errors.hpp"

using namespace tinyclap;
using namespace tinyclap::testing;

TEST_CASE("every op matches central differences over ten seeds") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (const GradCase& c : op_gradient_cases(seed)) {
      INFO(c.op << " seed " << seed);
      CHECK(c.rel_error < 1e-4);
    }
  }
}

TEST_CASE("tiny encoder distill loss gradient matches central differences") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const GradCase c = encoder_gradient_case(seed);
    INFO("seed " << seed);
    CHECK(c.rel_error < 1e-4);
  }
}

TEST_CASE("backward requires a scalar loss") {
  Tape<double> tape;
  Var<double> x = tape.variable(Tensor<double>({2}, {1.0, 2.0}));
  CHECK_THROWS_AS(tape.backward(relu(x)), ContractError);
}

TEST_CASE("stop_gradient blocks flow") {
  Tape<double> tape;
  Var<double> x = tape.variable(Tensor<double>({3}, {1.0, -2.0, 0.5}));
  Var<double> loss = sum(mul(x, stop_gradient(x)));
  tape.backward(loss);
  const Tensor<double> g = tape.grad(x);
  CHECK(g[0] == doctest::Approx(1.0));
  CHECK(g[1] == doctest::Approx(-2.0));
  CHECK(g[2] == doctest::Approx(0.5));
}

TEST_CASE("parameters accumulate gradients and frozen ones do not") {
  Parameter<double> w("w", Tensor<double>({2}, {3.0, 4.0}));
  Parameter<double> frozen("f", Tensor<double>({2}, {1.0, 1.0}));
  frozen.trainable = false;
  for (int i = 0; i < 2; ++i) {
    Tape<double> tape;
    tape.backward(sum(mul(tape.parameter(w), tape.parameter(frozen))));
  }
  CHECK(w.grad[0] == 2.0);
  CHECK(w.grad[1] == 2.0);
  CHECK(frozen.grad[0] == 0.0);
}

TEST_CASE("normalized loss has zero gradient at alignment") {
  Rng rng(3);
  const Tensor<double> t = kernels::l2_normalize(random_tensor({4, 8}, rng), 1);
  Tape<double> tape;
  Var<double> x = tape.variable(t.reshaped({4, 8}));
  Var<double> loss = scale(sum(mul(l2_normalize(x, 1), stop_gradient(tape.constant(t)))), -0.25);
  tape.backward(loss);
  CHECK(loss.value().item() == doctest::Approx(-1.0));
  CHECK(tape.grad(x).data().cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("non-finite forward values raise a numeric error") {
  Tape<double> tape;
  Var<double> x = tape.variable(Tensor<double>({2}, {1e308, 1e308}));
  CHECK_THROWS_AS(scale(x, 10.0), NumericError);
}
