#include <doctest.h>

#include <cmath>
#include <vector>

#include "otml/rng.hpp"
#include "otml/tensor.hpp"

using namespace otml;

namespace {

// Central finite difference of a scalar-valued function w.r.t. one leaf.
// Step 1e-6 over 64-bit values, matching the engine-wide gradcheck suite.
template <typename Fn>
double max_rel_err(Tensor& leaf, Fn loss_fn) {
  leaf.zero_grad();
  Graph g;
  Tensor loss;
  {
    Graph::Scope scope(g);
    loss = loss_fn();
    g.backward(loss);
  }
  std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());

  const double h = 1e-6;
  double worst = 0.0;
  auto data = leaf.mutable_data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double saved = data[i];
    data[i] = saved + h;
    const double up = loss_fn().value();
    data[i] = saved - h;
    const double dn = loss_fn().value();
    data[i] = saved;
    const double fd = (up - dn) / (2.0 * h);
    const double err = std::abs(analytic[i] - fd) /
                       std::max({std::abs(analytic[i]), std::abs(fd), 1.0});
    worst = std::max(worst, err);
  }
  return worst;
}

Tensor random_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0,
                     bool requires_grad = true) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

}  // namespace

TEST_SUITE_BEGIN("tensor");

TEST_CASE("matmul identity and dot product") {
  Tensor i2 = Tensor::identity(2);
  Tensor m = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor r = matmul(i2, m);
  CHECK(r.at(0, 0) == 1);
  CHECK(r.at(0, 1) == 2);
  CHECK(r.at(1, 0) == 3);
  CHECK(r.at(1, 1) == 4);

  Tensor a = Tensor::from_data({1, 2}, {1, 2});
  Tensor b = Tensor::from_data({2, 1}, {3, 4});
  CHECK(matmul(a, b).value() == 11);
}

TEST_CASE("matmul rejects mismatched inner dims") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 3});
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
}

TEST_CASE("matmul gradient vs central differences") {
  Rng rng(11);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 2}, rng);
  Tensor w = random_tensor({3, 2}, rng, -1, 1, false);
  auto loss = [&] { return sum(mul(matmul(a, b), w)); };
  CHECK(max_rel_err(a, loss) <= 1e-4);
  CHECK(max_rel_err(b, loss) <= 1e-4);
}

TEST_CASE("softmax symmetry, stability and oracle") {
  Tensor z = Tensor::from_data({3}, {0, 0, 0});
  Tensor s = softmax(z, 0);
  for (std::size_t i = 0; i < 3; ++i) CHECK(s.at(i) == doctest::Approx(1.0 / 3));

  Tensor big = Tensor::from_data({2}, {1000, 0});
  Tensor sb = softmax(big, 0);
  CHECK(sb.at(0) == doctest::Approx(1.0));
  CHECK(sb.at(1) == doctest::Approx(0.0));

  // Direct exp/sum recomputation in long double.
  Tensor x = Tensor::from_data({3}, {1, 2, 3});
  Tensor sx = softmax(x, 0);
  long double z0 = expl(1.0L) + expl(2.0L) + expl(3.0L);
  CHECK(sx.at(0) == doctest::Approx(static_cast<double>(expl(1.0L) / z0)).epsilon(1e-12));
  CHECK(sx.at(1) == doctest::Approx(static_cast<double>(expl(2.0L) / z0)).epsilon(1e-12));
  CHECK(sx.at(2) == doctest::Approx(static_cast<double>(expl(3.0L) / z0)).epsilon(1e-12));

  double total = sx.at(0) + sx.at(1) + sx.at(2);
  CHECK(std::abs(total - 1.0) <= 1e-12);
}

TEST_CASE("elementwise basics") {
  Tensor x = Tensor::from_data({2}, {-1, 2});
  Tensor r = relu(x);
  CHECK(r.at(0) == 0);
  CHECK(r.at(1) == 2);

  Tensor c = Tensor::from_data({3, 1}, {5, 5, 5});
  CHECK(variance_along_axis(c, 0).at(0) == 0);

  CHECK_THROWS_AS(log(Tensor::from_data({1}, {-1})), DomainError);
  CHECK_THROWS_AS(sqrt(Tensor::from_data({1}, {-0.5})), DomainError);
  CHECK_THROWS_AS(div(Tensor::scalar(1), Tensor::scalar(0)), DomainError);
}

TEST_CASE("elementwise suite passes finite-difference checks") {
  Rng rng(23);
  auto check_unary = [&](auto op, double lo, double hi) {
    Tensor x = random_tensor({2, 3}, rng, lo, hi);
    Tensor w = random_tensor(op(x).shape(), rng, -1, 1, false);
    auto loss = [&, op] { return sum(mul(op(x), w)); };
    CHECK(max_rel_err(x, loss) <= 1e-4);
  };
  check_unary([](const Tensor& t) { return exp(t); }, -2, 2);
  check_unary([](const Tensor& t) { return log(t); }, 0.5, 2.5);
  check_unary([](const Tensor& t) { return sqrt(t); }, 0.3, 2.0);
  check_unary([](const Tensor& t) { return mul_scalar(t, -1.7); }, -2, 2);
  check_unary([](const Tensor& t) { return transpose(t); }, -2, 2);
  check_unary([](const Tensor& t) { return reshape(t, {6}); }, -2, 2);
  check_unary([](const Tensor& t) { return softmax(t, 1); }, -2, 2);

  Tensor a = random_tensor({2, 3}, rng);
  Tensor b = random_tensor({2, 3}, rng, 0.5, 2.0);
  Tensor w = random_tensor({2, 3}, rng, -1, 1, false);
  auto loss = [&] { return sum(mul(div(a, b), w)); };
  CHECK(max_rel_err(a, loss) <= 1e-4);
  CHECK(max_rel_err(b, loss) <= 1e-4);
}

TEST_CASE("backward fills leaf gradients") {
  Tensor x = Tensor::from_data({2, 2}, {1, 2, 3, 4}, true);
  Graph g;
  {
    Graph::Scope scope(g);
    Tensor loss = sum(x);
    g.backward(loss);
  }
  for (double v : x.grad()) CHECK(v == 1.0);

  x.zero_grad();
  Graph g2;
  {
    Graph::Scope scope(g2);
    Tensor y = Tensor::from_data({2}, {1, 2}, true);
    // grad of sum(y*y) is 2y; reuse x below for the two-consumer case.
    Tensor loss = sum(mul(y, y));
    g2.backward(loss);
    CHECK(y.grad()[0] == doctest::Approx(2));
    CHECK(y.grad()[1] == doctest::Approx(4));
  }
}

TEST_CASE("backward accumulates over multiple consumers") {
  Tensor x = Tensor::from_data({2}, {3, -1}, true);
  Graph g;
  {
    Graph::Scope scope(g);
    Tensor loss = add(sum(x), sum(mul(x, x)));
    g.backward(loss);
  }
  CHECK(x.grad()[0] == doctest::Approx(1 + 2 * 3));
  CHECK(x.grad()[1] == doctest::Approx(1 + 2 * -1));
}

TEST_CASE("backward rejects misuse") {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  Graph g;
  Tensor loss, vec;
  {
    Graph::Scope scope(g);
    vec = mul(x, x);
    loss = sum(vec);
  }
  CHECK_THROWS_AS(g.backward(vec), GraphError);   // non-scalar root
  g.backward(loss);
  CHECK_THROWS_AS(g.backward(loss), GraphError);  // consumed

  Graph other;
  CHECK_THROWS_AS(other.backward(loss), GraphError);  // stale root
}

TEST_CASE("non-finite op output aborts with op attribution") {
  Tensor big = Tensor::from_data({1}, {1000.0});
  CHECK_THROWS_WITH_AS(exp(big), doctest::Contains("exp"), NumericError);
  CHECK_THROWS_AS(Tensor::from_data({1}, {std::nan("")}), NumericError);
}

TEST_CASE("reshape and transpose round-trips are bit identical") {
  Rng rng(5);
  Tensor x = random_tensor({3, 4}, rng, -2, 2, false);
  Tensor rt = reshape(reshape(x, {12}), {3, 4});
  Tensor tt = transpose(transpose(x));
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(rt.data()[i] == x.data()[i]);
    CHECK(tt.data()[i] == x.data()[i]);
  }
}

TEST_CASE("concat and slice invert each other") {
  Rng rng(7);
  Tensor a = random_tensor({2, 3}, rng);
  Tensor b = random_tensor({2, 2}, rng);
  Tensor c = concat({a, b}, 1);
  CHECK(c.shape() == Shape{2, 5});
  Tensor back = slice(c, 1, 3, 2);
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back.data()[i] == b.data()[i]);
  }

  Tensor w = random_tensor({2, 5}, rng, -1, 1, false);
  auto loss = [&] { return sum(mul(concat({a, b}, 1), w)); };
  CHECK(max_rel_err(a, loss) <= 1e-4);
  CHECK(max_rel_err(b, loss) <= 1e-4);
}

TEST_CASE("conv2d box filter and identity kernel") {
  Tensor ones = Tensor::full({1, 3, 3}, 1.0);
  Tensor k = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor out = conv2d(ones, k, 1, 0);
  CHECK(out.shape() == Shape{1, 1, 1});
  CHECK(out.value() == doctest::Approx(9));

  Rng rng(3);
  Tensor img = random_tensor({1, 4, 4}, rng, 0, 1, false);
  Tensor id = Tensor::from_data({1, 1, 1, 1}, {1.0});
  Tensor same = conv2d(img, id, 1, 0);
  for (std::size_t i = 0; i < img.size(); ++i) {
    CHECK(same.data()[i] == img.data()[i]);
  }
}

TEST_CASE("conv2d gradcheck") {
  Rng rng(19);
  Tensor img = random_tensor({2, 5, 5}, rng);
  Tensor k = random_tensor({3, 2, 3, 3}, rng, -1, 1);
  Tensor w = random_tensor({3, 3, 3}, rng, -1, 1, false);
  auto loss = [&] { return sum(mul(conv2d(img, k, 1, 0), w)); };
  CHECK(max_rel_err(img, loss) <= 1e-4);
  CHECK(max_rel_err(k, loss) <= 1e-4);
}

TEST_CASE("conv2d rejects invalid geometry") {
  Tensor img = Tensor::zeros({1, 2, 2});
  Tensor k = Tensor::zeros({1, 1, 5, 5});
  CHECK_THROWS_AS(conv2d(img, k, 1, 0), ShapeError);
}

TEST_CASE("batchnorm1d collapses constants and keeps standardized data") {
  BatchNorm1d bn(1, 1e-5);
  Tensor c = Tensor::full({4, 1}, 3.25);
  Graph g;
  Graph::Scope scope(g);
  Tensor out = bn.forward(c, true);
  for (double v : out.data()) CHECK(v == doctest::Approx(0.0));

  // Column standardized with the unbiased convention passes through.
  BatchNorm1d bn2(1, 1e-9);
  std::vector<double> col = {-1.161895003862225, -0.3872983346207417,
                             0.3872983346207417, 1.161895003862225};
  Tensor x = Tensor::from_data({4, 1}, col);
  Tensor out2 = bn2.forward(x, true);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(out2.at(i, 0) == doctest::Approx(col[i]).epsilon(1e-6));
  }
}

TEST_CASE("batchnorm1d rejects single-row training batches") {
  BatchNorm1d bn(3);
  Tensor x = Tensor::zeros({1, 3});
  CHECK_THROWS_AS(bn.forward(x, true), BatchSizeError);
  // Eval mode is fine with one row.
  CHECK_NOTHROW(bn.forward(x, false));
}

TEST_CASE("batchnorm1d gradcheck") {
  Rng rng(31);
  Tensor x = random_tensor({4, 3}, rng);
  BatchNorm1d bn(3, 1e-4);
  Tensor w = random_tensor({4, 3}, rng, -1, 1, false);
  auto loss = [&] { return sum(mul(bn.forward(x, true), w)); };
  CHECK(max_rel_err(x, loss) <= 1e-4);
  CHECK(max_rel_err(bn.gamma(), loss) <= 1e-4);
  CHECK(max_rel_err(bn.beta(), loss) <= 1e-4);
}

TEST_CASE("batchnorm1d tracks running statistics for eval mode") {
  BatchNorm1d bn(1, 1e-9, 0.5);
  Tensor x = Tensor::from_data({2, 1}, {0.0, 2.0});
  {
    Graph g;
    Graph::Scope scope(g);
    bn.forward(x, true);
  }
  CHECK(bn.running_mean()[0] == doctest::Approx(0.5));      // 0.5*0 + 0.5*1
  CHECK(bn.running_var()[0] == doctest::Approx(1.5));       // 0.5*1 + 0.5*2

  Tensor probe = Tensor::from_data({1, 1}, {0.5});
  Tensor out = bn.forward(probe, false);
  CHECK(out.value() == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("mutating an op result is rejected") {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  Graph g;
  Graph::Scope scope(g);
  Tensor y = mul(x, x);
  CHECK_THROWS_AS(y.mutable_data(), GraphError);
}

TEST_SUITE_END();
