#include <doctest.h>

#include <cmath>
#include <vector>

#include "otml/regularizers.hpp"
#include "otml/rng.hpp"

using namespace otml;
using namespace otml::reg;

TEST_SUITE_BEGIN("regularizers");

TEST_CASE("full collapse saturates the variance hinge at gamma") {
  Tensor q = Tensor::from_data({4, 3}, {1, 2, 3, 1, 2, 3, 1, 2, 3, 1, 2, 3});
  const double v = variance_term(q, 1.0, 1e-4).value();
  CHECK(v == doctest::Approx(1.0).epsilon(2e-2));  // eps keeps it just below

  const double v2 = variance_term(q, 2.5, 1e-4).value();
  CHECK(v2 == doctest::Approx(2.5).epsilon(1e-2));
}

TEST_CASE("spread columns clear the hinge") {
  // Unbiased variance of {0,2} is 2, std > 1.
  Tensor q = Tensor::from_data({2, 1}, {0, 2});
  CHECK(variance_term(q, 1.0, 1e-4).value() == doctest::Approx(0.0));

  Tensor wide = Tensor::from_data({3, 2}, {0, -3, 2, 0, 4, 3});
  CHECK(variance_term(wide, 1.0, 1e-4).value() == doctest::Approx(0.0));
}

TEST_CASE("variance term is bounded by [0, gamma]") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(4 * 3);
    for (double& x : v) x = rng.uniform(-2, 2);
    Tensor q = Tensor::from_data({4, 3}, std::move(v));
    const double term = variance_term(q, 1.0, 1e-4).value();
    CHECK(term >= 0.0);
    CHECK(term <= 1.0);
  }
}

TEST_CASE("covariance on the hand instance and the single-column case") {
  Tensor q = Tensor::from_data({2, 2}, {1, 1, -1, -1});
  CHECK(covariance_term(q).value() == doctest::Approx(4.0));

  Tensor single = Tensor::from_data({3, 1}, {1, 2, 3});
  CHECK(covariance_term(single).value() == doctest::Approx(0.0));
}

TEST_CASE("independent columns have near-zero covariance") {
  Rng rng(5);
  const std::size_t n = 10000, dim = 4;
  std::vector<double> v(n * dim);
  for (double& x : v) x = rng.normal();
  Tensor q = Tensor::from_data({n, dim}, std::move(v));
  CHECK(covariance_term(q).value() <= 0.01);
}

TEST_CASE("covariance is shift invariant in any column") {
  Rng rng(7);
  std::vector<double> v(5 * 3);
  for (double& x : v) x = rng.uniform(-2, 2);
  Tensor q = Tensor::from_data({5, 3}, v);
  const double base = covariance_term(q).value();

  for (std::size_t i = 0; i < 5; ++i) v[i * 3 + 1] += 17.5;
  Tensor shifted = Tensor::from_data({5, 3}, std::move(v));
  CHECK(std::abs(covariance_term(shifted).value() - base) <= 1e-10);
}

TEST_CASE("covariance is nonnegative") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(6 * 4);
    for (double& x : v) x = rng.uniform(-3, 3);
    CHECK(covariance_term(Tensor::from_data({6, 4}, std::move(v))).value() >=
          0.0);
  }
}

TEST_CASE("batch of one is rejected") {
  Tensor q = Tensor::from_data({1, 3}, {1, 2, 3});
  CHECK_THROWS_AS(variance_term(q, 1.0, 1e-4), BatchSizeError);
  CHECK_THROWS_AS(covariance_term(q), BatchSizeError);
}

TEST_SUITE_END();
