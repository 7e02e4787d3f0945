#include "iecl/oracles.hpp"
#include "iecl/saib.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace iecl;
using namespace iecl::saib;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool grad = false) {
  std::vector<double> d(static_cast<std::size_t>(numel(shape)));
  for (double& v : d) v = rng.normal();
  return Tensor(std::move(shape), std::move(d), grad);
}

SaibConfig small_config(Index c, Index hw, Index p, nn::Activation act = nn::Activation::kSwish) {
  SaibConfig cfg;
  cfg.channels = c;
  cfg.height = hw;
  cfg.width = hw;
  cfg.patch = p;
  cfg.activation = act;
  return cfg;
}

// Trains BN running stats a little so eval mode is not trivially identity.
void warm_up(SaibBlock& b, Rng& rng) {
  const auto& cfg = b.config();
  for (int i = 0; i < 3; ++i) b.forward(random_tensor({4, cfg.channels, cfg.height, cfg.width}, rng));
  for (nn::BatchNorm* bn : {&b.bn1, &b.bn2, &b.bn3}) {
    for (double& v : bn->gamma.mutable_data()) v = rng.uniform(0.5, 1.5);
    for (double& v : bn->beta.mutable_data()) v = rng.uniform(-0.2, 0.2);
  }
}

}  // namespace

TEST_CASE("patchify shapes and round trip") {
  Rng rng(1);
  Tensor x = random_tensor({1, 4, 4}, rng);
  Tensor t = patchify(x, 2);
  CHECK(t.shape() == Shape{4, 4});
  Tensor back = unpatchify(t, 2, {1, 4, 4});
  CHECK(std::equal(back.data().begin(), back.data().end(), x.data().begin()));

  Tensor img = random_tensor({3, 8, 8}, rng);
  CHECK(patchify(img, 2).shape() == Shape{48, 4});

  Tensor batch = random_tensor({2, 3, 8, 8}, rng);
  Tensor bt = patchify(batch, 4);
  CHECK(bt.shape() == Shape{2, 12, 16});
  Tensor bb = unpatchify(bt, 4, {3, 8, 8});
  CHECK(std::equal(bb.data().begin(), bb.data().end(), batch.data().begin()));

  CHECK_THROWS_AS(patchify(random_tensor({1, 6, 4}, rng), 4), ShapeError);
  CHECK_THROWS_AS(patchify(random_tensor({4, 4}, rng), 2), ShapeError);
}

TEST_CASE("patchify element placement") {
  const Index c = 2, hh = 6, ww = 4, p = 2, h = hh / p, w = ww / p;
  std::vector<double> v(static_cast<std::size_t>(c * hh * ww));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  Tensor x({c, hh, ww}, v);
  Tensor t = patchify(x, p);
  for (Index ch = 0; ch < c; ++ch)
    for (Index y = 0; y < hh; ++y)
      for (Index xx = 0; xx < ww; ++xx) {
        const Index row = ch * h * w + (y / p) * w + xx / p;
        const Index col = (y % p) * p + xx % p;
        CHECK(t.at(row * p * p + col) == static_cast<double>(ch * hh * ww + y * ww + xx));
      }
}

TEST_CASE("zero residual branch is the identity, bitwise") {
  Rng rng(2);
  SaibBlock b(small_config(3, 8, 2), rng);
  b.zero_residual();
  for (int trial = 0; trial < 5; ++trial) {
    Tensor x = random_tensor({4, 3, 8, 8}, rng);
    Tensor y = b.forward(x);
    CHECK(y.shape() == x.shape());
    CHECK(std::equal(y.data().begin(), y.data().end(), x.data().begin()));
  }
  b.set_mode(nn::Mode::kEval);
  Tensor x = random_tensor({3, 8, 8}, rng);
  Tensor y = b.forward(x);
  CHECK(std::equal(y.data().begin(), y.data().end(), x.data().begin()));
  Eigen::MatrixXd j = jacobian(b, x);
  CHECK(j.isApprox(Eigen::MatrixXd::Identity(192, 192), 0.0));
  CHECK(log_abs_det(j).value == 0.0);
}

TEST_CASE("random block preserves shape") {
  Rng rng(3);
  SaibBlock b(small_config(3, 8, 2), rng);
  Tensor x = random_tensor({5, 3, 8, 8}, rng);
  CHECK(b.forward(x).shape() == x.shape());
  Tensor s = random_tensor({3, 8, 8}, rng);
  b.set_mode(nn::Mode::kEval);
  CHECK(b.forward(s).shape() == s.shape());
  CHECK_THROWS_AS(b.forward(random_tensor({2, 1, 8, 8}, rng)), ShapeError);
}

TEST_CASE("scaled identity residual gives 1.5 x and J = 1.5 I") {
  Rng rng(4);
  SaibBlock b(small_config(3, 8, 2, nn::Activation::kIdentity), rng);
  b.set_scaled_identity_residual(0.5);
  Tensor x = random_tensor({2, 3, 8, 8}, rng);
  Tensor y = b.forward(x);
  for (Index i = 0; i < x.numel(); ++i) CHECK(y.at(i) == doctest::Approx(1.5 * x.at(i)).epsilon(1e-15));

  Eigen::MatrixXd j = jacobian(b, random_tensor({3, 8, 8}, rng));
  CHECK((j - 1.5 * Eigen::MatrixXd::Identity(192, 192)).cwiseAbs().maxCoeff() <= 1e-14);
  CHECK(log_abs_det(j).value == doctest::Approx(192 * std::log(1.5)).epsilon(1e-12));

  SaibBlock swish_block(small_config(1, 4, 2), rng);
  CHECK_THROWS(swish_block.set_scaled_identity_residual(0.5));
}

TEST_CASE("jacobian matches central differences on random blocks") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Index c = 1 + static_cast<Index>(rng.below(2));
    const Index hw = trial % 2 == 0 ? 4 : 6;
    const auto act = trial % 3 == 2 ? nn::Activation::kRelu : nn::Activation::kSwish;
    SaibBlock b(small_config(c, hw, 2, act), rng);
    warm_up(b, rng);
    Tensor x = random_tensor({c, hw, hw}, rng);
    const Eigen::MatrixXd j = jacobian(b, x);
    CHECK(b.mode() == nn::Mode::kTrain);

    b.set_mode(nn::Mode::kEval);
    auto f = [&](const Eigen::VectorXd& v) {
      NoGradGuard guard;
      Tensor in({c, hw, hw}, std::vector<double>(v.data(), v.data() + v.size()));
      Tensor out = b.forward(in);
      return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(out.data().data(), out.numel()));
    };
    const Eigen::VectorXd x0 = Eigen::Map<const Eigen::VectorXd>(x.data().data(), x.numel());
    const Eigen::MatrixXd fd = verify::numeric_jacobian(f, x0, 1e-5);
    b.set_mode(nn::Mode::kTrain);
    CHECK((j - fd).cwiseAbs().maxCoeff() <= 1e-5);
  }
}

TEST_CASE("jacobian guards") {
  Rng rng(6);
  SaibConfig cfg = small_config(3, 8, 2);
  cfg.jacobian_cap = 100;
  SaibBlock b(cfg, rng);
  CHECK_THROWS_AS(jacobian(b, random_tensor({3, 8, 8}, rng)), std::invalid_argument);

  SaibConfig mix = small_config(1, 4, 2);
  mix.batch_mixing = true;
  SaibBlock m(mix, rng);
  CHECK_THROWS_AS(jacobian(m, random_tensor({1, 4, 4}, rng)), std::invalid_argument);
  // Batch mixing couples samples: changing sample 1 moves sample 0's output.
  Tensor x = random_tensor({2, 1, 4, 4}, rng);
  Tensor y0 = m.forward(x);
  Tensor x2 = x.clone();
  x2.mutable_data()[20] += 1.0;
  Tensor y1 = m.forward(x2);
  bool moved = false;
  for (Index i = 0; i < 16; ++i) moved = moved || y0.at(i) != y1.at(i);
  CHECK(moved);

  SaibBlock ok(small_config(1, 4, 2), rng);
  CHECK_THROWS_AS(jacobian(ok, random_tensor({2, 1, 4, 4}, rng)), ShapeError);
}

TEST_CASE("log_abs_det examples and oracles") {
  CHECK(log_abs_det(Eigen::MatrixXd::Identity(5, 5)).value == 0.0);
  CHECK(log_abs_det(1.5 * Eigen::MatrixXd::Identity(4, 4)).value == doctest::Approx(1.62186).epsilon(1e-5));
  CHECK(log_abs_det(1.5 * Eigen::MatrixXd::Identity(4, 4)).value == doctest::Approx(4 * std::log(1.5)).epsilon(1e-15));

  Eigen::MatrixXd sing = Eigen::MatrixXd::Ones(3, 3);
  sing(0, 0) = 0;
  sing.row(2) = sing.row(1);
  auto ld = log_abs_det(sing);
  CHECK(ld.singular);
  CHECK(std::isinf(ld.value));
  CHECK(ld.value < 0);
  CHECK_THROWS_AS(log_abs_det(Eigen::MatrixXd::Ones(2, 3)), ShapeError);

  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::MatrixXd a = gaussian_matrix(16, 16, rng);
    const double ours = log_abs_det(a).value;
    const double ref = verify::elimination_log_abs_det(a).value;
    CHECK(std::abs(ours - ref) <= 1e-8 * std::max(1.0, std::abs(ref)));
  }
}

TEST_CASE("log|det J| equals the sum of log singular values") {
  Rng rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    SaibBlock b(small_config(1, 4, 2), rng);
    warm_up(b, rng);
    const Eigen::MatrixXd j = jacobian(b, random_tensor({1, 4, 4}, rng));
    const Eigen::VectorXd sv = verify::jacobi_singular_values(j);
    CHECK(std::abs(log_abs_det(j).value - sv.array().log().sum()) <= 1e-6);
  }
}

TEST_CASE("volume expansion statistics") {
  Rng rng(9);
  SaibBlock zero(small_config(1, 4, 2), rng);
  zero.zero_residual();
  auto s0 = volume_expansion_stats(zero, rng, 5);
  CHECK(s0.fraction_expanding == 0.0);
  CHECK(s0.mean_logdet == 0.0);
  CHECK(s0.logdets.size() == 5);

  SaibBlock half(small_config(3, 8, 2, nn::Activation::kIdentity), rng);
  half.set_scaled_identity_residual(0.5);
  auto s1 = volume_expansion_stats(half, rng, 3);
  CHECK(s1.fraction_expanding == 1.0);
  CHECK(s1.mean_logdet == doctest::Approx(192 * std::log(1.5)).epsilon(1e-12));

  SaibBlock rand(small_config(1, 4, 2), rng);
  auto s2 = volume_expansion_stats(rand, rng, 10);
  CHECK(s2.fraction_expanding >= 0.0);
  CHECK(s2.fraction_expanding <= 1.0);
  CHECK(s2.min_logdet <= s2.mean_logdet);
  CHECK_THROWS(volume_expansion_stats(rand, rng, 0));
}

TEST_CASE("gradients reach the positional table and conv weights") {
  Rng rng(10);
  SaibBlock b(small_config(1, 4, 2), rng);
  b.set_state_frozen(true);
  Tensor x = random_tensor({3, 1, 4, 4}, rng);
  Tensor w = random_tensor({3, 1, 4, 4}, rng);
  auto build = [&] { return sum(mul(b.forward(x), w)); };
  for (Tensor* p : {&b.pos.table, &b.conv2.weight, &b.bn1.gamma}) {
    auto ad = testing::autodiff(build, *p);
    auto fd = testing::central_diff([&] { return build().item(); }, *p);
    CHECK(testing::max_rel_err(ad, fd) <= 1e-6);
    double norm = 0;
    for (double g : ad) norm += g * g;
    CHECK(norm > 0.0);
  }
  CHECK(b.l2_penalty().item() > 0.0);
  CHECK(b.parameters().size() == 15);
}
