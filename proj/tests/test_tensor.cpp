#include <doctest.h>

#include "test_support.hpp"
#include "tinyclap/errors.hpp"
#include "tinyclap/kernels.hpp"

using namespace tinyclap;
using namespace tinyclap::testing;

TEST_CASE("tensor construction validates sizes") {
  CHECK_THROWS_AS(Tensor<float>({2, 2}, {1.f, 2.f, 3.f}), ContractError);
  const Tensor<float> t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.rank() == 2);
  CHECK(t.dim(-1) == 3);
  CHECK(t.matrix(2, 3)(1, 0) == 4.f);
  CHECK_THROWS_AS(t.reshaped({4}), ContractError);
  CHECK(t.reshaped({3, 2}).dim(0) == 3);
  CHECK(t.cast<double>()[5] == 6.0);
}

TEST_CASE("conv2d agrees with a direct loop") {
  Rng rng(1);
  const auto x = random_tensor({2, 3, 7, 6}, rng);
  const auto w = random_tensor({4, 3, 3, 3}, rng);
  const Index stride = 2, pad = 1;
  const auto y = kernels::conv2d(x, w, stride, pad);
  REQUIRE(y.shape() == Shape{2, 4, 4, 3});
  double worst = 0.0;
  for (Index n = 0; n < 2; ++n)
    for (Index o = 0; o < 4; ++o)
      for (Index oh = 0; oh < 4; ++oh)
        for (Index ow = 0; ow < 3; ++ow) {
          double acc = 0.0;
          for (Index c = 0; c < 3; ++c)
            for (Index kh = 0; kh < 3; ++kh)
              for (Index kw = 0; kw < 3; ++kw) {
                const Index ih = oh * stride - pad + kh, iw = ow * stride - pad + kw;
                if (ih < 0 || ih >= 7 || iw < 0 || iw >= 6) continue;
                acc += x[((n * 3 + c) * 7 + ih) * 6 + iw] * w[((o * 3 + c) * 3 + kh) * 3 + kw];
              }
          worst = std::max(worst, std::abs(acc - y[((n * 4 + o) * 4 + oh) * 3 + ow]));
        }
  CHECK(worst < 1e-12);
}

TEST_CASE("conv2d rejects mismatched channels naming both shapes") {
  const Tensor<float> x({1, 2, 4, 4});
  const Tensor<float> w({3, 5, 3, 3});
  try {
    kernels::conv2d(x, w, 1, 1);
    FAIL("expected ContractError");
  } catch (const ContractError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[1x2x4x4]") != std::string::npos);
    CHECK(msg.find("[3x5x3x3]") != std::string::npos);
  }
}

TEST_CASE("l2_normalize") {
  const auto y = kernels::l2_normalize(Tensor<double>({2}, {3.0, 4.0}), 0);
  CHECK(y[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(y[1] == doctest::Approx(0.8).epsilon(1e-12));
  const auto z = kernels::l2_normalize(Tensor<double>({3}, {0.0, 0.0, 0.0}), 0);
  CHECK(z.data().norm() == 0.0);
  const auto tiny = kernels::l2_normalize(Tensor<double>({2}, {1e-12, 0.0}), 0);
  CHECK(tiny.data().norm() == doctest::Approx(1.0).epsilon(1e-6));
  Rng rng(2);
  const auto rows = kernels::l2_normalize(random_tensor({5, 7}, rng), 1);
  for (Index i = 0; i < 5; ++i) CHECK(rows.matrix(5, 7).row(i).norm() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("activations") {
  const Tensor<double> x({5}, {-4.0, -1.0, 0.0, 1.0, 4.0});
  const auto h = kernels::hswish(x);
  CHECK(h[0] == 0.0);
  CHECK(h[1] == doctest::Approx(-1.0 * 2.0 / 6.0));
  CHECK(h[2] == 0.0);
  CHECK(h[3] == doctest::Approx(4.0 / 6.0));
  CHECK(h[4] == 4.0);
  const auto r = kernels::relu(x);
  CHECK(r[1] == 0.0);
  CHECK(r[4] == 4.0);
  const auto s = kernels::sigmoid(Tensor<double>({3}, {-800.0, 0.0, 800.0}));
  CHECK(s[0] == doctest::Approx(0.0));
  CHECK(s[1] == 0.5);
  CHECK(s[2] == doctest::Approx(1.0));
}

TEST_CASE("linear computes x W^T + b") {
  const Tensor<double> x({1, 2}, {1.0, 2.0});
  const Tensor<double> w({3, 2}, {1.0, 0.0, 0.0, 1.0, 1.0, 1.0});
  const Tensor<double> b({3}, {0.5, -0.5, 0.0});
  const auto y = kernels::linear(x, w, &b);
  CHECK(y.shape() == Shape{1, 3});
  CHECK(y[0] == 1.5);
  CHECK(y[1] == 1.5);
  CHECK(y[2] == 3.0);
}

TEST_CASE("batchnorm train mode normalizes and updates running statistics") {
  Rng rng(4);
  const auto x = random_tensor({4, 2, 3, 3}, rng, 2.0, 5.0);
  Tensor<double> gamma = Tensor<double>::constant({2}, 1.0), beta({2});
  Tensor<double> rm({2}), rv = Tensor<double>::constant({2}, 1.0);
  const auto y = kernels::batchnorm2d(x, gamma, beta, rm, rv, kernels::BatchNormMode::kTrain);
  for (Index c = 0; c < 2; ++c) {
    double mean = 0.0, sq = 0.0, xmean = 0.0, xsq = 0.0;
    const Index count = 4 * 9;
    for (Index n = 0; n < 4; ++n)
      for (Index k = 0; k < 9; ++k) {
        const Index i = (n * 2 + c) * 9 + k;
        mean += y[i];
        sq += y[i] * y[i];
        xmean += x[i];
        xsq += x[i] * x[i];
      }
    mean /= count;
    xmean /= count;
    const double unbiased = (xsq - count * xmean * xmean) / (count - 1);
    CHECK(std::abs(mean) < 1e-12);
    CHECK(sq / count == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(rm[c] == doctest::Approx(0.1 * xmean));
    CHECK(rv[c] == doctest::Approx(0.9 + 0.1 * unbiased));
  }
}

TEST_CASE("batchnorm train mode needs more than one value per channel") {
  Tensor<double> x({1, 1, 1, 1}), g = Tensor<double>::constant({1}, 1.0), b({1}), rm({1}),
      rv = Tensor<double>::constant({1}, 1.0);
  CHECK_THROWS_AS(kernels::batchnorm2d(x, g, b, rm, rv, kernels::BatchNormMode::kTrain), ContractError);
}

TEST_CASE("global average pool") {
  const Tensor<double> x({1, 2, 1, 2}, {1.0, 3.0, -2.0, 4.0});
  const auto y = kernels::global_avg_pool(x);
  CHECK(y.shape() == Shape{1, 2});
  CHECK(y[0] == 2.0);
  CHECK(y[1] == 1.0);
}
