#include "iecl/checkpoint.hpp"
#include "iecl/nn.hpp"
#include "support.hpp"

#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace iecl;
using namespace iecl::nn;
using iecl::testing::autodiff;
using iecl::testing::central_diff;
using iecl::testing::max_rel_err;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool grad = false) {
  std::vector<double> d(static_cast<std::size_t>(numel(shape)));
  for (double& v : d) v = rng.normal();
  return Tensor(std::move(shape), std::move(d), grad);
}

// Top singular value by power iteration on W^T W until the Rayleigh residual
// ||W^T W v - lambda v|| drops below tol.
double top_singular_oracle(const Eigen::MatrixXd& w, double tol = 1e-10) {
  const Eigen::MatrixXd g = w.transpose() * w;
  Eigen::VectorXd v = Eigen::VectorXd::Ones(g.cols()).normalized();
  double lambda = 0.0;
  for (int it = 0; it < 1000000; ++it) {
    Eigen::VectorXd gv = g * v;
    lambda = v.dot(gv);
    if ((gv - lambda * v).norm() < tol) break;
    v = gv.normalized();
  }
  return std::sqrt(lambda);
}

}  // namespace

TEST_CASE("linear: identity and scaled weight") {
  Rng rng(1);
  Linear lin(3, 3, rng);
  std::fill(lin.weight.mutable_data().begin(), lin.weight.mutable_data().end(), 0.0);
  for (Index i = 0; i < 3; ++i) lin.weight.mutable_data()[i * 3 + i] = 1.0;
  Tensor x({2, 3}, {1, -2, 3, 0.5, 4, -1});
  Tensor y = lin.forward(x);
  for (Index i = 0; i < 6; ++i) CHECK(y.at(i) == x.at(i));

  for (Index i = 0; i < 3; ++i) lin.weight.mutable_data()[i * 3 + i] = 2.0;
  Tensor z = lin.forward(Tensor({1, 3}, {1, 1, 1}));
  CHECK(z.at(0) == 2.0);
  CHECK(z.at(1) == 2.0);
  CHECK(z.at(2) == 2.0);

  CHECK_THROWS_AS(lin.forward(Tensor::zeros({2, 4})), ShapeError);
}

TEST_CASE("linear: weight gradient matches finite differences") {
  Rng rng(2);
  Linear lin(4, 3, rng);
  Tensor x = random_tensor({5, 4}, rng);
  auto build = [&] { return sum(square(lin.forward(x))); };
  auto ad = autodiff(build, lin.weight);
  auto fd = central_diff([&] { return build().item(); }, lin.weight);
  CHECK(max_rel_err(ad, fd) <= 1e-6);
}

TEST_CASE("conv: 1x1 identity, 3x3 zero, hand 2x2 case") {
  Rng rng(3);
  Tensor x = random_tensor({2, 3, 3, 4}, rng);

  Conv2d one(4, 4, 1, rng);
  auto w = one.weight.mutable_data();
  std::fill(w.begin(), w.end(), 0.0);
  for (Index i = 0; i < 4; ++i) w[i * 4 + i] = 1.0;
  Tensor y = one.forward(x);
  REQUIRE(y.shape() == x.shape());
  for (Index i = 0; i < x.numel(); ++i) CHECK(y.at(i) == x.at(i));

  Conv2d three(4, 8, 3, rng);
  std::fill(three.weight.mutable_data().begin(), three.weight.mutable_data().end(), 0.0);
  Tensor z = three.forward(x);
  CHECK(z.shape() == Shape{2, 3, 3, 8});
  for (double v : z.data()) CHECK(v == 0.0);

  // Single channel 2x2 input [[1,2],[3,4]], 3x3 kernel k[ky][kx] = ky*3+kx+1,
  // zero padding: out(i,j) = sum_{ky,kx} k[ky][kx] * in(i+ky-1, j+kx-1).
  Conv2d hand(1, 1, 3, rng);
  for (Index i = 0; i < 9; ++i) hand.weight.mutable_data()[i] = static_cast<double>(i + 1);
  Tensor img({1, 2, 2, 1}, {1, 2, 3, 4});
  Tensor out = hand.forward(img);
  // (0,0): k11*1 + k12*2 + k21*3 + k22*4 = 5+12+24+36
  CHECK(out.at(0) == doctest::Approx(77));
  // (0,1): k10*1 + k11*2 + k20*3 + k21*4 = 4+10+21+32
  CHECK(out.at(1) == doctest::Approx(67));
  // (1,0): k01*1 + k02*2 + k11*3 + k12*4 = 2+6+15+24
  CHECK(out.at(2) == doctest::Approx(47));
  // (1,1): k00*1 + k01*2 + k10*3 + k11*4 = 1+4+12+20
  CHECK(out.at(3) == doctest::Approx(37));

  CHECK_THROWS_AS(one.forward(Tensor::zeros({1, 2, 2, 3})), ShapeError);
  CHECK_THROWS_AS(Conv2d(2, 2, 5, rng), std::invalid_argument);
}

TEST_CASE("swish values and slope") {
  CHECK(swish(Tensor::scalar(0.0)).item() == 0.0);
  CHECK(swish(Tensor::scalar(10.0)).item() == doctest::Approx(10.0 / (1.0 + std::exp(-10.0))).epsilon(1e-14));
  CHECK(swish(Tensor::scalar(10.0)).item() == doctest::Approx(9.99955).epsilon(1e-6));
  Tensor x = Tensor::scalar(0.0, true);
  auto g = autodiff([&] { return swish(x); }, x);
  CHECK(g[0] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("spectral norm: diag(3,1) converges to 3") {
  SpectralNormState st;
  st.u = Tensor({2}, {std::sqrt(0.5), std::sqrt(0.5)});
  st.n_power_iters = 200;
  Tensor w({2, 2}, {3, 0, 0, 1});
  auto r = spectral_normalize(w, st);
  CHECK(r.sigma.item() == doctest::Approx(3.0).epsilon(1e-12));
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(r.weight.to_matrix());
  CHECK(svd.singularValues()(0) == doctest::Approx(1.0).epsilon(1e-12));
  double n2 = 0;
  for (double v : st.u.data()) n2 += v * v;
  CHECK(n2 == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("spectral norm: zero weight passes through with warning") {
  SpectralNormState st;
  Rng rng(4);
  st.u = random_unit_vector(3, rng);
  Tensor w = Tensor::zeros({3, 5});
  auto r = spectral_normalize(w, st);
  CHECK(st.zero_weight_warning);
  CHECK(r.sigma.item() == 0.0);
  for (double v : r.weight.data()) CHECK(v == 0.0);
}

TEST_CASE("spectral norm: random 8x8 matches power-iteration oracle") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor w = random_tensor({8, 8}, rng);
    SpectralNormState st;
    st.u = random_unit_vector(8, rng);
    st.n_power_iters = 200;
    auto r = spectral_normalize(w, st);
    const double oracle = top_singular_oracle(w.to_matrix());
    CHECK(std::abs(r.sigma.item() - oracle) <= 1e-4);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(r.weight.to_matrix());
    CHECK(svd.singularValues()(0) <= 1.0 + 1e-3);
    CHECK(r.sigma.item() >= 0.0);
  }
}

TEST_CASE("spectral norm: one step per forward, u persisted, gradient exact") {
  Rng rng(6);
  Conv2d conv(3, 4, 3, rng, true);
  Tensor x = random_tensor({2, 3, 3, 3}, rng);
  const std::vector<double> u0(conv.sn.u.data().begin(), conv.sn.u.data().end());
  conv.forward(x);
  CHECK(std::vector<double>(conv.sn.u.data().begin(), conv.sn.u.data().end()) != u0);
  double n2 = 0;
  for (double v : conv.sn.u.data()) n2 += v * v;
  CHECK(n2 == doctest::Approx(1.0).epsilon(1e-12));

  // Repeated forwards converge toward the true top singular value.
  for (int i = 0; i < 300; ++i) conv.forward(x);
  CHECK(conv.sn.last_sigma == doctest::Approx(top_singular_oracle(conv.weight.to_matrix())).epsilon(1e-6));

  conv.set_state_frozen(true);
  auto build = [&] { return sum(square(conv.forward(x))); };
  auto ad = autodiff(build, conv.weight);
  auto fd = central_diff([&] { return build().item(); }, conv.weight);
  CHECK(max_rel_err(ad, fd) <= 1e-6);
}

TEST_CASE("batchnorm: eval identity, constant batch, running update") {
  BatchNorm bn(3);
  Rng rng(7);
  Tensor x = random_tensor({4, 3}, rng);
  bn.set_mode(Mode::kEval);
  Tensor y = bn.forward(x);
  for (Index i = 0; i < x.numel(); ++i) CHECK(y.at(i) == doctest::Approx(x.at(i) / std::sqrt(1.0 + 1e-5)).epsilon(1e-15));

  bn.set_mode(Mode::kTrain);
  Tensor c = Tensor::full({5, 3}, 2.5);
  Tensor yc = bn.forward(c);
  for (double v : yc.data()) CHECK(v == 0.0);

  BatchNorm fresh(2);
  // channel 0: {1,2,3,6}: mean 3, unbiased var 14/3; channel 1: {0,0,4,4}: mean 2, var 16/3
  Tensor b({4, 2}, {1, 0, 2, 0, 3, 4, 6, 4});
  fresh.forward(b);
  CHECK(fresh.running_mean.at(0) == doctest::Approx(0.9 * 0 + 0.1 * 3));
  CHECK(fresh.running_mean.at(1) == doctest::Approx(0.1 * 2));
  CHECK(fresh.running_var.at(0) == doctest::Approx(0.9 * 1 + 0.1 * 14.0 / 3.0));
  CHECK(fresh.running_var.at(1) == doctest::Approx(0.9 * 1 + 0.1 * 16.0 / 3.0));

  CHECK_THROWS_AS(fresh.forward(Tensor::zeros({1, 2})), std::invalid_argument);
  CHECK_THROWS_AS(fresh.forward(Tensor::zeros({4, 3})), ShapeError);
}

TEST_CASE("batchnorm: eval mode is affine") {
  Rng rng(8);
  BatchNorm bn(4);
  for (int i = 0; i < 3; ++i) bn.forward(random_tensor({6, 4}, rng));
  for (double& v : bn.gamma.mutable_data()) v = rng.normal();
  for (double& v : bn.beta.mutable_data()) v = rng.normal();
  bn.set_mode(Mode::kEval);
  for (double rv : bn.running_var.data()) CHECK(rv >= 0.0);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor({3, 4}, rng);
    Tensor y = random_tensor({3, 4}, rng);
    const double a = rng.uniform(-2, 2);
    Tensor lhs = bn.forward(add(mul_scalar(x, a), mul_scalar(y, 1 - a)));
    Tensor rhs = add(mul_scalar(bn.forward(x), a), mul_scalar(bn.forward(y), 1 - a));
    for (Index i = 0; i < lhs.numel(); ++i) CHECK(std::abs(lhs.at(i) - rhs.at(i)) <= 1e-10);
  }
}

TEST_CASE("batchnorm: train-mode gradients with frozen state") {
  Rng rng(9);
  BatchNorm bn(3);
  for (double& v : bn.gamma.mutable_data()) v = rng.uniform(0.5, 1.5);
  bn.set_state_frozen(true);
  Tensor x = random_tensor({5, 3}, rng, true);
  Tensor w = random_tensor({5, 3}, rng);
  auto build = [&] { return sum(mul(bn.forward(x), w)); };
  auto ad = autodiff(build, x);
  auto fd = central_diff([&] { return build().item(); }, x);
  CHECK(max_rel_err(ad, fd) <= 1e-6);
  CHECK(bn.running_mean.at(0) == 0.0);
}

TEST_CASE("positional embedding") {
  Rng rng(10);
  PositionalEmbedding zero(4, 3, rng, 0.0);
  Tensor x = random_tensor({2, 4, 3}, rng);
  Tensor y = zero.forward(x);
  for (Index i = 0; i < x.numel(); ++i) CHECK(y.at(i) == x.at(i));

  PositionalEmbedding pe(4, 3, rng);
  for (Index i = 0; i < 12; ++i) pe.table.mutable_data()[i] = static_cast<double>(i / 3);
  Tensor z = pe.forward(Tensor::zeros({2, 4, 3}));
  for (Index n = 0; n < 2; ++n)
    for (Index r = 0; r < 4; ++r)
      for (Index c = 0; c < 3; ++c) CHECK(z.at(n * 12 + r * 3 + c) == static_cast<double>(r));

  CHECK_THROWS_AS(PositionalEmbedding(0, 3, rng), std::invalid_argument);
}

TEST_CASE("kaiming init statistics") {
  Rng rng(11);
  const Index fan_in = 50;
  Tensor w = kaiming_init(rng, {1000, 100}, fan_in);
  const double n = static_cast<double>(w.numel());
  double mean = 0, m2 = 0;
  for (double v : w.data()) mean += v;
  mean /= n;
  for (double v : w.data()) m2 += (v - mean) * (v - mean);
  const double var = m2 / (n - 1);
  const double target = 2.0 / static_cast<double>(fan_in);
  CHECK(std::abs(var - target) / target < 0.05);
  CHECK(std::abs(mean) < 3.0 * std::sqrt(target / n));

  Rng a(12), b(12);
  Tensor wa = kaiming_init(a, {4, 4}, 4);
  Tensor wb = kaiming_init(b, {4, 4}, 4);
  CHECK(std::equal(wa.data().begin(), wa.data().end(), wb.data().begin()));
  CHECK_THROWS(kaiming_init(a, {2, 2}, 0));
}

TEST_CASE("parameter name sets and momentum copy compatibility") {
  Rng r1(13), r2(14);
  Conv2d a(3, 6, 3, r1, true), b(3, 6, 3, r2, true);
  check_compatible(a.state("c."), b.state("c."));
  copy_values(a.state("c."), b.state("c."));
  CHECK(std::equal(a.weight.data().begin(), a.weight.data().end(), b.weight.data().begin()));
  Conv2d c(3, 4, 3, r1);
  CHECK_THROWS(check_compatible(a.state(), c.state()));
  CHECK_THROWS(check_compatible(a.state("x."), b.state("y.")));
}

TEST_CASE("checkpoint round trip and error handling") {
  Rng rng(15);
  BatchNorm bn(3);
  Conv2d conv(2, 3, 3, rng, true);
  bn.forward(random_tensor({4, 3}, rng));
  std::vector<Param> state = conv.state("conv.");
  for (auto& p : bn.state("bn.")) state.push_back(p);
  state.push_back({"scalar", Tensor::scalar(1.5)});

  const auto path = std::filesystem::temp_directory_path() / "iecl_test_ckpt.bin";
  save_checkpoint(path, state);
  auto loaded = load_checkpoint(path);
  REQUIRE(loaded.size() == state.size());
  for (std::size_t i = 0; i < state.size(); ++i) {
    CHECK(loaded[i].name == state[i].name);
    CHECK(loaded[i].value.shape() == state[i].value.shape());
    CHECK(std::equal(loaded[i].value.data().begin(), loaded[i].value.data().end(), state[i].value.data().begin()));
  }

  Rng other(99);
  Conv2d conv2(2, 3, 3, other, true);
  restore(loaded, conv2.state("conv."));
  CHECK(std::equal(conv2.weight.data().begin(), conv2.weight.data().end(), conv.weight.data().begin()));
  CHECK_THROWS_AS(restore(loaded, Conv2d(2, 4, 3, other).state("conv.")), CheckpointError);
  CHECK_THROWS_AS(restore(loaded, conv2.state("other.")), CheckpointError);

  // Trailing bytes, truncation and bad magic.
  {
    std::ofstream os(path, std::ios::binary | std::ios::app);
    os << "x";
  }
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 5);
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
  {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os << "NOTACKPT";
  }
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
}
