#include "iecl/saib.hpp"

#include <algorithm>
#include <limits>

namespace iecl::saib {

namespace {

void check_divisible(const Shape& image, Index p) {
  if (p < 1) throw std::invalid_argument("patch size must be positive");
  if (image[1] % p != 0 || image[2] % p != 0) {
    throw ShapeError("patch size " + std::to_string(p) + " does not divide spatial dims " +
                     std::to_string(image[1]) + "x" + std::to_string(image[2]));
  }
}

}  // namespace

Tensor patchify(const Tensor& x, Index p) {
  if (x.rank() != 3 && x.rank() != 4) {
    throw ShapeError("patchify: expected [C,H,W] or [N,C,H,W], got " + to_string(x.shape()));
  }
  const bool batched = x.rank() == 4;
  const Index n = batched ? x.dim(0) : 1;
  const Shape image = batched ? Shape{x.dim(1), x.dim(2), x.dim(3)} : x.shape();
  check_divisible(image, p);
  const Index c = image[0], h = image[1] / p, w = image[2] / p;
  Tensor t = reshape(x, {n, c, h, p, w, p});
  t = permute(t, {0, 1, 2, 4, 3, 5});
  return batched ? reshape(t, {n, c * h * w, p * p}) : reshape(t, {c * h * w, p * p});
}

Tensor unpatchify(const Tensor& tokens, Index p, const Shape& image) {
  if (image.size() != 3) throw ShapeError("unpatchify: image shape must be (C,H,W)");
  check_divisible(image, p);
  const Index c = image[0], h = image[1] / p, w = image[2] / p;
  const Index rows = c * h * w;
  const bool batched = tokens.rank() == 3;
  if ((tokens.rank() != 2 && !batched) || tokens.dim(-2) != rows || tokens.dim(-1) != p * p) {
    throw ShapeError("unpatchify: tokens " + to_string(tokens.shape()) + " do not match image " + to_string(image) +
                     " with patch " + std::to_string(p));
  }
  const Index n = batched ? tokens.dim(0) : 1;
  Tensor t = reshape(tokens, {n, c, h, w, p, p});
  t = permute(t, {0, 1, 2, 4, 3, 5});
  return batched ? reshape(t, {n, c, image[1], image[2]}) : reshape(t, image);
}

// ---------------------------------------------------------------------------

SaibBlock::SaibBlock(const SaibConfig& cfg, Rng& rng)
    : pos(cfg.channels * (cfg.height / std::max<Index>(cfg.patch, 1)) * (cfg.width / std::max<Index>(cfg.patch, 1)),
          cfg.patch * cfg.patch, rng, cfg.pos_init_std),
      conv1(cfg.patch * cfg.patch, cfg.patch * cfg.patch, 1, rng),
      conv2(cfg.patch * cfg.patch, 2 * cfg.patch * cfg.patch, 3, rng),
      conv3(2 * cfg.patch * cfg.patch, 2 * cfg.patch * cfg.patch, 1, rng),
      conv4(2 * cfg.patch * cfg.patch, cfg.patch * cfg.patch, 1, rng),
      bn1(cfg.patch * cfg.patch),
      bn2(2 * cfg.patch * cfg.patch),
      bn3(2 * cfg.patch * cfg.patch),
      cfg_(cfg) {
  if (cfg.channels < 1) throw std::invalid_argument("saib: channels must be positive");
  check_divisible({cfg.channels, cfg.height, cfg.width}, cfg.patch);
  if (cfg.jacobian_cap < 1) throw std::invalid_argument("saib: jacobian_cap must be positive");
}

Tensor SaibBlock::forward(const Tensor& x) {
  const Shape image{cfg_.channels, cfg_.height, cfg_.width};
  const bool batched = x.rank() == 4;
  const Shape got = batched ? Shape{x.dim(1), x.dim(2), x.dim(3)} : x.shape();
  if ((x.rank() != 3 && !batched) || got != image) {
    throw ShapeError("saib: input " + to_string(x.shape()) + " does not match block image " + to_string(image));
  }
  const Index n = batched ? x.dim(0) : 1;
  const Index p = cfg_.patch, h = cfg_.height / p, w = cfg_.width / p;
  const auto act = cfg_.activation;

  Tensor tokens = pos.forward(patchify(batched ? x : reshape(x, {1, image[0], image[1], image[2]}), p));
  if (cfg_.batch_mixing) tokens = add(tokens, mean(tokens, 0));
  const Tensor map = reshape(tokens, {n * cfg_.channels, h, w, p * p});

  const Tensor a1 = nn::activate(bn1.forward(conv1.forward(map)), act);
  const Tensor a2 = nn::activate(bn2.forward(conv2.forward(a1)), act);
  const Tensor a3 = add(nn::activate(bn3.forward(conv3.forward(a2)), act), a2);
  const Tensor r = add(conv4.forward(a3), a1);

  Tensor delta = unpatchify(reshape(r, {n, cfg_.channels * h * w, p * p}), p, image);
  if (!batched) delta = reshape(delta, image);
  return add(x, delta);
}

void SaibBlock::collect_parameters(const std::string& prefix, std::vector<nn::Param>& out) const {
  pos.collect_parameters(prefix + "pos.", out);
  conv1.collect_parameters(prefix + "conv1.", out);
  bn1.collect_parameters(prefix + "bn1.", out);
  conv2.collect_parameters(prefix + "conv2.", out);
  bn2.collect_parameters(prefix + "bn2.", out);
  conv3.collect_parameters(prefix + "conv3.", out);
  bn3.collect_parameters(prefix + "bn3.", out);
  conv4.collect_parameters(prefix + "conv4.", out);
}

void SaibBlock::collect_buffers(const std::string& prefix, std::vector<nn::Param>& out) const {
  bn1.collect_buffers(prefix + "bn1.", out);
  bn2.collect_buffers(prefix + "bn2.", out);
  bn3.collect_buffers(prefix + "bn3.", out);
}

void SaibBlock::set_mode(nn::Mode mode) {
  bn1.set_mode(mode);
  bn2.set_mode(mode);
  bn3.set_mode(mode);
}

void SaibBlock::set_state_frozen(bool frozen) {
  for (nn::Module* m : std::initializer_list<nn::Module*>{&conv1, &conv2, &conv3, &conv4, &bn1, &bn2, &bn3}) {
    m->set_state_frozen(frozen);
  }
}

void SaibBlock::zero_residual() {
  for (nn::Conv2d* c : {&conv1, &conv2, &conv3, &conv4}) {
    for (Tensor t : {c->weight, c->bias}) std::ranges::fill(t.mutable_data(), 0.0);
  }
}

void SaibBlock::set_scaled_identity_residual(double scale) {
  if (cfg_.activation != nn::Activation::kIdentity) {
    throw std::invalid_argument("set_scaled_identity_residual needs the identity activation");
  }
  const Index c = token_channels();
  zero_residual();
  std::ranges::fill(pos.table.mutable_data(), 0.0);
  for (nn::BatchNorm* bn : {&bn1, &bn2, &bn3}) {
    std::ranges::fill(bn->gamma.mutable_data(), 1.0);
    std::ranges::fill(bn->beta.mutable_data(), 0.0);
    std::ranges::fill(bn->running_mean.mutable_data(), 0.0);
    // 1 / sqrt(running_var + eps) == 1 exactly.
    std::ranges::fill(bn->running_var.mutable_data(), 1.0 - bn->eps);
  }
  set_mode(nn::Mode::kEval);
  // a1 = P; a2 = [P, 0] from the centre tap; a3 = a2; r = (scale - 1) P + a1.
  auto w1 = conv1.weight.mutable_data();
  for (Index i = 0; i < c; ++i) w1[i * c + i] = 1.0;
  auto w2 = conv2.weight.mutable_data();
  const Index centre = 4 * c;  // tap (ky, kx) = (1, 1)
  for (Index i = 0; i < c; ++i) w2[i * 9 * c + centre + i] = 1.0;
  auto w4 = conv4.weight.mutable_data();
  for (Index i = 0; i < c; ++i) w4[i * 2 * c + i] = scale - 1.0;
}

Tensor SaibBlock::l2_penalty() const {
  Tensor total = Tensor::scalar(0.0);
  for (const auto& p : parameters()) total = add(total, sum(square(p.value)));
  return total;
}

// ---------------------------------------------------------------------------

namespace {

// Restores BN mode, frozen state and parameter requires_grad flags.
class EvalSnapshot {
 public:
  explicit EvalSnapshot(SaibBlock& b) : block_(b), mode_(b.mode()), params_(b.parameters()) {
    for (const auto& p : params_) grad_flags_.push_back(p.value.requires_grad());
    block_.set_mode(nn::Mode::kEval);
    block_.set_state_frozen(true);
    block_.set_requires_grad(false);
  }
  ~EvalSnapshot() {
    block_.set_mode(mode_);
    block_.set_state_frozen(false);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor t = params_[i].value;
      t.set_requires_grad(grad_flags_[i]);
    }
  }
  EvalSnapshot(const EvalSnapshot&) = delete;
  EvalSnapshot& operator=(const EvalSnapshot&) = delete;

 private:
  SaibBlock& block_;
  nn::Mode mode_;
  std::vector<nn::Param> params_;
  std::vector<bool> grad_flags_;
};

}  // namespace

Eigen::MatrixXd jacobian(SaibBlock& block, const Tensor& x) {
  const auto& cfg = block.config();
  const Index d = cfg.dim();
  if (cfg.batch_mixing) throw std::invalid_argument("jacobian: undefined for a batch-mixing block");
  if (d > cfg.jacobian_cap) {
    throw std::invalid_argument("jacobian: D = " + std::to_string(d) + " exceeds the cap of " +
                                std::to_string(cfg.jacobian_cap) + "; use a smaller image or raise jacobian_cap");
  }
  if (x.numel() != d || (x.rank() == 4 && x.dim(0) != 1)) {
    throw ShapeError("jacobian: expected one sample of " + std::to_string(d) + " values, got " + to_string(x.shape()));
  }
  EvalSnapshot snapshot(block);
  TapeScope scope;
  Tensor input(Shape{cfg.channels, cfg.height, cfg.width}, std::vector<double>(x.data().begin(), x.data().end()), true);
  const Tensor out = block.forward(input);

  Eigen::MatrixXd jac(d, d);
  std::vector<double> seed(static_cast<std::size_t>(d), 0.0);
  const std::vector<Tensor> wrt{input};
  for (Index i = 0; i < d; ++i) {
    seed[static_cast<std::size_t>(i)] = 1.0;
    const auto rows = scope.tape().vjp(out, seed, wrt);
    seed[static_cast<std::size_t>(i)] = 0.0;
    jac.row(i) = Eigen::Map<const Eigen::RowVectorXd>(rows[0].data(), d);
  }
  return jac;
}

VolumeStats volume_expansion_stats(SaibBlock& block, Rng& rng, Index n_samples, const Sampler& sample) {
  if (n_samples < 1) throw std::invalid_argument("volume_expansion_stats: n_samples must be >= 1");
  VolumeStats s;
  s.min_logdet = std::numeric_limits<double>::infinity();
  Index expanding = 0;
  double total = 0.0;
  for (Index i = 0; i < n_samples; ++i) {
    const LogAbsDet ld = log_abs_det(jacobian(block, sample(rng)));
    s.logdets.push_back(ld.value);
    if (ld.singular) ++s.singular;
    if (ld.value > 0.0) ++expanding;
    total += ld.value;
    s.min_logdet = std::min(s.min_logdet, ld.value);
  }
  s.fraction_expanding = static_cast<double>(expanding) / static_cast<double>(n_samples);
  s.mean_logdet = total / static_cast<double>(n_samples);
  return s;
}

VolumeStats volume_expansion_stats(SaibBlock& block, Rng& rng, Index n_samples) {
  const auto& cfg = block.config();
  return volume_expansion_stats(block, rng, n_samples, [&cfg](Rng& r) {
    std::vector<double> v(static_cast<std::size_t>(cfg.dim()));
    for (double& e : v) e = r.normal();
    return Tensor({cfg.channels, cfg.height, cfg.width}, std::move(v));
  });
}

}  // namespace iecl::saib
