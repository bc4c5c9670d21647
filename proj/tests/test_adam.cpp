#include <doctest.h>

#include <cmath>

#include "tinyclap/adam.hpp"
#include "tinyclap/errors.hpp"

using namespace tinyclap;

TEST_CASE("first Adam step moves each weight by about lr against the gradient sign") {
  Parameter<double> p("p", Tensor<double>({2}, {1.0, -1.0}));
  p.grad = Tensor<double>({2}, {0.5, -2.0});
  Adam<double> adam(AdamOptions{.lr = 0.1});
  std::vector<Parameter<double>*> params{&p};
  adam.step(params);
  CHECK(p.value[0] == doctest::Approx(0.9).epsilon(1e-7));
  CHECK(p.value[1] == doctest::Approx(-0.9).epsilon(1e-7));
  CHECK(adam.steps() == 1);
  CHECK(adam.first_moments()[0][0] == doctest::Approx(0.05));
  CHECK(adam.second_moments()[0][1] == doctest::Approx(0.004));
}

TEST_CASE("Adam matches a hand-rolled reference over several steps") {
  Parameter<double> p("p", Tensor<double>({1}, {0.3}));
  Adam<double> adam(AdamOptions{.lr = 0.01, .beta1 = 0.9, .beta2 = 0.999, .eps = 1e-8});
  std::vector<Parameter<double>*> params{&p};
  double x = 0.3, m = 0.0, v = 0.0;
  for (int t = 1; t <= 5; ++t) {
    const double g = 2.0 * x - 1.0;
    p.grad[0] = 2.0 * p.value[0] - 1.0;
    adam.step(params);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1.0 - std::pow(0.9, t)), vh = v / (1.0 - std::pow(0.999, t));
    x -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    CHECK(p.value[0] == doctest::Approx(x).epsilon(1e-9));
  }
}

TEST_CASE("zero gradients leave weights bitwise unchanged") {
  Parameter<float> p("p", Tensor<float>({3}, {0.1f, 0.2f, 0.3f}));
  const Tensor<float> before = p.value;
  Adam<float> adam(AdamOptions{});
  std::vector<Parameter<float>*> params{&p};
  adam.step(params);
  CHECK(p.value == before);
}

TEST_CASE("invalid options and gradients are rejected before any update") {
  CHECK_THROWS_AS(Adam<double>(AdamOptions{.lr = 0.0}), ContractError);
  Parameter<double> a("a", Tensor<double>({1}, {1.0})), b("b", Tensor<double>({1}, {1.0}));
  a.grad[0] = 1.0;
  b.grad[0] = std::nan("");
  Adam<double> adam(AdamOptions{});
  std::vector<Parameter<double>*> params{&a, &b};
  CHECK_THROWS_AS(adam.step(params), NumericError);
  CHECK(a.value[0] == 1.0);
  CHECK(adam.steps() == 0);
}
