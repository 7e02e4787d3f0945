#include "doctest.h"
#include "support.hpp"

#include "iecl/ops.hpp"
#include "iecl/rng.hpp"

#include <cmath>
#include <numbers>

using namespace iecl;
using iecl::testing::autodiff;
using iecl::testing::central_diff;
using iecl::testing::max_rel_err;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0, bool rg = true) {
  std::vector<double> d(static_cast<std::size_t>(numel(shape)));
  for (double& v : d) v = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(d), rg);
}

// Values bounded away from zero so kinked ops are probed on smooth pieces.
Tensor away_from_zero(Shape shape, Rng& rng) {
  Tensor t = random_tensor(std::move(shape), rng, 0.1, 2.0);
  for (double& v : t.mutable_data())
    if (rng.bernoulli(0.5)) v = -v;
  return t;
}

// Contract an op's output to a scalar with fixed random weights.
Tensor contract(const Tensor& y, const Tensor& w) { return sum(mul(y, w)); }

// Runs the finite-difference property for op on 50 random inputs.
void check_op(const char* name, const std::function<Tensor(Rng&)>& make_input,
              const std::function<Tensor(const Tensor&)>& op, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = make_input(rng);
    Tensor probe;
    {
      NoGradGuard g;
      probe = op(x);
    }
    Tensor w = random_tensor(probe.shape(), rng, -1.0, 1.0, false);
    auto analytic = autodiff([&] { return contract(op(x), w); }, x);
    auto numeric = central_diff([&] { return contract(op(x), w).item(); }, x);
    worst = std::max(worst, max_rel_err(analytic, numeric));
  }
  INFO(name << " worst relative error " << worst);
  CHECK(worst <= 1e-6);
}

}  // namespace

TEST_CASE("matmul shapes and identity") {
  Rng rng(1);
  Tensor a = random_tensor({2, 3}, rng, -1, 1, false);
  Tensor b = random_tensor({3, 4}, rng, -1, 1, false);
  CHECK(matmul(a, b).shape() == Shape{2, 4});

  Tensor eye = Tensor::from_matrix(Eigen::MatrixXd::Identity(3, 3));
  Tensor c = random_tensor({3, 5}, rng, -1, 1, false);
  Tensor ic = matmul(eye, c);
  for (Index i = 0; i < c.numel(); ++i) CHECK(ic.at(i) == c.at(i));

  CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("softmax of equal logits is uniform") {
  Tensor s = softmax(Tensor::zeros({3}), 0);
  for (Index i = 0; i < 3; ++i) CHECK(s.at(i) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("conv2d matches a direct convolution") {
  std::vector<double> img(16);
  for (int i = 0; i < 16; ++i) img[static_cast<std::size_t>(i)] = i + 1;
  Tensor x({1, 4, 4, 1}, img);
  Tensor w = Tensor::full({1, 9}, 1.0);
  Tensor y = conv2d(x, w, Tensor(), 3);
  REQUIRE(y.shape() == Shape{1, 4, 4, 1});

  // Direct zero-padded sum over the 3x3 neighbourhood.
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) {
      double expect = 0.0;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const int rr = r + dr, cc = c + dc;
          if (rr >= 0 && rr < 4 && cc >= 0 && cc < 4) expect += img[static_cast<std::size_t>(rr * 4 + cc)];
        }
      CHECK(y.at(r * 4 + c) == expect);
    }
  CHECK(y.at(1 * 4 + 1) == 54.0);
}

TEST_CASE("conv2d rejects a channel mismatch") {
  Tensor x = Tensor::zeros({1, 4, 4, 2});
  CHECK_THROWS_AS(conv2d(x, Tensor::zeros({3, 9}), Tensor(), 3), ShapeError);
  CHECK_THROWS_AS(conv2d(x, Tensor::zeros({3, 4}), Tensor(), 1), ShapeError);
}

TEST_CASE("backward examples") {
  Tensor x({3}, {1, 2, 3}, true);
  {
    TapeScope scope;
    backward(sum(mul(x, x)));
  }
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == 4.0);
  CHECK(x.grad()[2] == 6.0);

  Tensor y({4}, {1, -2, 3, 5}, true);
  {
    TapeScope scope;
    backward(mean(y));
  }
  for (double g : y.grad()) CHECK(g == 0.25);
}

TEST_CASE("gradients accumulate until zeroed") {
  Tensor x({2}, {1, 3}, true);
  for (int i = 0; i < 2; ++i) {
    TapeScope scope;
    backward(sum(mul_scalar(x, 2.0)));
  }
  CHECK(x.grad()[0] == 4.0);
  x.zero_grad();
  CHECK(x.grad()[1] == 0.0);
}

TEST_CASE("backward errors") {
  TapeScope scope;
  Tensor x({2}, {1, 2}, true);
  Tensor y = mul_scalar(x, 3.0);
  CHECK_THROWS_AS(backward(y), TapeError);
  Tensor s = sum(y);
  backward(s);
  CHECK_THROWS_AS(backward(s), TapeError);
  CHECK_THROWS_AS(backward(Tensor::scalar(1.0)), TapeError);
}

TEST_CASE("tape visits nodes in topological order") {
  TapeScope scope;
  Tensor x({2}, {0.5, 1.5}, true);
  Tensor a = exp(x);
  Tensor b = mul(a, x);
  Tensor c = add(b, a);
  CHECK(scope.tape().size() == 3);
  CHECK(a.impl()->node < b.impl()->node);
  CHECK(b.impl()->node < c.impl()->node);
}

TEST_CASE("domain and shape errors name the op") {
  CHECK_THROWS_AS(log(Tensor({2}, {1.0, 0.0})), DomainError);
  CHECK_THROWS_AS(sqrt(Tensor({1}, {-1.0})), DomainError);
  try {
    add(Tensor::zeros({2, 3}), Tensor::zeros({2}));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[2]") != std::string::npos);
  }
}

TEST_CASE("no-grad mode records nothing") {
  TapeScope scope;
  Tensor x({2}, {1, 2}, true);
  NoGradGuard guard;
  Tensor y = sum(mul(x, x));
  CHECK(scope.tape().size() == 0);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("max returns argmax and routes gradient") {
  Tensor x({2, 3}, {1, 5, 2, 7, 0, 7}, true);
  MaxResult m;
  {
    TapeScope scope;
    m = max(x, 1);
    CHECK(m.values.at(0) == 5.0);
    CHECK(m.values.at(1) == 7.0);
    CHECK(m.argmax == std::vector<Index>{1, 0});
    backward(sum(m.values));
  }
  const std::vector<double> expect{0, 1, 0, 1, 0, 0};
  for (std::size_t i = 0; i < expect.size(); ++i) CHECK(x.grad()[i] == expect[i]);
}

TEST_CASE("leading-axis broadcasting commutes with reshape") {
  Rng rng(7);
  Tensor a = random_tensor({4, 3, 2}, rng, -1, 1, false);
  Tensor b = random_tensor({3, 2}, rng, -1, 1, false);
  Tensor direct = reshape(add(a, b), {4, 6});
  Tensor via = add(reshape(a, {4, 6}), reshape(b, {6}));
  for (Index i = 0; i < direct.numel(); ++i) CHECK(direct.at(i) == via.at(i));
}

TEST_CASE("finite-difference agreement for every differentiable op") {
  auto shape23 = [](Rng& r) { return random_tensor({2, 3}, r); };
  auto positive = [](Rng& r) { return random_tensor({2, 3}, r, 0.2, 3.0); };
  auto kinked = [](Rng& r) { return away_from_zero({2, 3}, r); };

  check_op("exp", shape23, [](const Tensor& x) { return exp(x); }, 1);
  check_op("log", positive, [](const Tensor& x) { return log(x); }, 2);
  check_op("sqrt", positive, [](const Tensor& x) { return sqrt(x); }, 3);
  check_op("square", shape23, [](const Tensor& x) { return square(x); }, 4);
  check_op("relu", kinked, [](const Tensor& x) { return relu(x); }, 5);
  check_op("sigmoid", shape23, [](const Tensor& x) { return sigmoid(x); }, 6);
  check_op("swish", shape23, [](const Tensor& x) { return swish(x); }, 7);
  check_op("clamp_min", kinked, [](const Tensor& x) { return clamp_min(x, 0.0); }, 8);
  check_op("scalar ops", shape23, [](const Tensor& x) { return 3.0 - (x * 2.5 + 1.0) / 4.0; }, 9);

  Rng fixed(99);
  Tensor other = random_tensor({2, 3}, fixed, 0.5, 2.0, false);
  Tensor row = random_tensor({3}, fixed, 0.5, 2.0, false);
  check_op("add", shape23, [&](const Tensor& x) { return add(x, other); }, 10);
  check_op("sub broadcast", shape23, [&](const Tensor& x) { return sub(row, x); }, 11);
  check_op("mul", shape23, [&](const Tensor& x) { return mul(x, x); }, 12);
  check_op("div", positive, [&](const Tensor& x) { return div(other, x); }, 13);
  check_op("div broadcast", shape23, [&](const Tensor& x) { return div(x, row); }, 14);
  check_op("broadcast reduce", [](Rng& r) { return random_tensor({3}, r); },
           [&](const Tensor& x) { return mul(other, x); }, 15);

  Tensor rhs = random_tensor({3, 4}, fixed, -1, 1, false);
  check_op("matmul", shape23, [&](const Tensor& x) { return matmul(x, rhs); }, 16);
  check_op("matmul rhs", [](Rng& r) { return random_tensor({3, 4}, r); },
           [&](const Tensor& x) { return matmul(other, x); }, 17);
  check_op("transpose", shape23, [](const Tensor& x) { return transpose(x); }, 18);
  check_op("reshape", shape23, [](const Tensor& x) { return reshape(x, {3, 2}); }, 19);
  check_op("permute", [](Rng& r) { return random_tensor({2, 3, 4}, r); },
           [](const Tensor& x) { return permute(x, {2, 0, 1}); }, 20);
  check_op("sum axis", [](Rng& r) { return random_tensor({2, 3, 4}, r); },
           [](const Tensor& x) { return sum(x, 1); }, 21);
  check_op("mean axis", [](Rng& r) { return random_tensor({2, 3, 4}, r); },
           [](const Tensor& x) { return mean(x, 2, true); }, 22);
  check_op("mean all", shape23, [](const Tensor& x) { return mean(x); }, 23);
  check_op("max", shape23, [](const Tensor& x) { return max(x, 1).values; }, 24);
  check_op("l2_norm", kinked, [](const Tensor& x) { return l2_norm(x, 1); }, 25);
  check_op("softmax", shape23, [](const Tensor& x) { return softmax(x, 0); }, 26);
  check_op("logsumexp", shape23, [](const Tensor& x) { return logsumexp(x, 1); }, 27);
  check_op("im2col", [](Rng& r) { return random_tensor({2, 3, 3, 2}, r); },
           [](const Tensor& x) { return im2col(x, 3); }, 28);

  Tensor kernel = random_tensor({4, 9 * 2}, fixed, -1, 1, false);
  Tensor bias = random_tensor({4}, fixed, -1, 1, false);
  check_op("conv2d input", [](Rng& r) { return random_tensor({2, 3, 3, 2}, r); },
           [&](const Tensor& x) { return conv2d(x, kernel, bias, 3); }, 29);
  Tensor image = random_tensor({2, 3, 3, 2}, fixed, -1, 1, false);
  check_op("conv2d weight", [](Rng& r) { return random_tensor({4, 18}, r); },
           [&](const Tensor& w) { return conv2d(image, w, bias, 3); }, 30);
  check_op("logdet_spd", [](Rng& r) { return random_tensor({3, 3}, r, -0.3, 0.3); },
           [](const Tensor& x) {
             Tensor eye = Tensor::from_matrix(Eigen::MatrixXd::Identity(3, 3));
             return logdet_spd(add(matmul(x, transpose(x)), eye));
           },
           31);
}

TEST_CASE("identical seeds give bit-identical op sequences") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Tensor x = random_tensor({4, 5}, rng, -1, 1, false);
    Tensor w = random_tensor({5, 3}, rng, -1, 1, false);
    return softmax(swish(matmul(x, w)), 1);
  };
  Tensor a = run(42), b = run(42);
  for (Index i = 0; i < a.numel(); ++i) CHECK(a.at(i) == b.at(i));
}

TEST_CASE("rng streams are reproducible and derived streams differ") {
  Rng a(42), b(42);
  for (int i = 0; i < 10; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c = Rng(42).derive("augment"), d = Rng(42).derive("augment"), e = Rng(42).derive("probe");
  CHECK(c.next_u64() == d.next_u64());
  CHECK(c.next_u64() != e.next_u64());
  // First output of mt19937_64 seeded with 5489 is fixed by the standard.
  CHECK(Rng(5489).next_u64() == 14514284786278117030ULL);
}
