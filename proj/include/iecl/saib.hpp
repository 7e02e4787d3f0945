#pragma once

// Sample augmentation incremental block: a residual, non-isometric
// transform on images that works on patch tokens.
//
//   P  = patchify(x) + pos            [N, C*h*w, p*p]    (h = H/p, w = W/p)
//   M  = P viewed as a channels-last map [N*C, h, w, p*p]
//   a1 = act(BN(conv1x1(M)))          p*p   -> p*p
//   a2 = act(BN(conv3x3(a1)))         p*p   -> 2p*p
//   a3 = act(BN(conv1x1(a2))) + a2    2p*p  -> 2p*p
//   r  = conv1x1(a3) + a1             2p*p  -> p*p
//   x' = x + unpatchify(r)
//
// Colour planes are separate token maps, so every conv acts per sample and
// per channel plane, and the block has a well-defined per-sample Jacobian.

#include "iecl/linalg.hpp"
#include "iecl/nn.hpp"

#include <functional>
#include <vector>

namespace iecl::saib {

// [C,H,W] -> [C*h*w, p*p] or [N,C,H,W] -> [N, C*h*w, p*p].
// Element (c, y, x) lands at row c*h*w + (y/p)*w + x/p, column (y%p)*p + x%p.
Tensor patchify(const Tensor& x, Index p);
// Inverse of patchify; `image` is the (C,H,W) of one sample.
Tensor unpatchify(const Tensor& tokens, Index p, const Shape& image);

struct SaibConfig {
  Index channels = 3;
  Index height = 8;
  Index width = 8;
  Index patch = 2;
  nn::Activation activation = nn::Activation::kSwish;
  double pos_init_std = 0.02;
  // Adds the batch-mean token map to every sample. Qualitative experiments
  // only: the block is then no longer a per-sample map and jacobian refuses it.
  bool batch_mixing = false;
  Index jacobian_cap = 256;

  Index dim() const { return channels * height * width; }
};

class SaibBlock : public nn::Module {
 public:
  SaibBlock(const SaibConfig& cfg, Rng& rng);

  // x: [N,C,H,W] or a single [C,H,W] sample; output has the input's shape.
  Tensor forward(const Tensor& x);

  void collect_parameters(const std::string& prefix, std::vector<nn::Param>& out) const override;
  void collect_buffers(const std::string& prefix, std::vector<nn::Param>& out) const override;
  void set_mode(nn::Mode mode) override;
  void set_state_frozen(bool frozen) override;
  nn::Mode mode() const { return bn1.mode(); }

  // Sets every residual-branch weight and bias to zero, making the block the
  // identity map.
  void zero_residual();
  // Sets weights so the residual branch computes scale * x exactly: identity
  // BN in eval mode, zero positional table, identity-chain convs. Requires
  // the identity activation.
  void set_scaled_identity_residual(double scale);
  // Sum of squared entries over all parameters (differentiable).
  Tensor l2_penalty() const;

  const SaibConfig& config() const { return cfg_; }
  Index token_channels() const { return cfg_.patch * cfg_.patch; }

  nn::PositionalEmbedding pos;
  nn::Conv2d conv1, conv2, conv3, conv4;
  nn::BatchNorm bn1, bn2, bn3;

 private:
  SaibConfig cfg_;
};

// D x D Jacobian of the block at one sample x ([C,H,W] or [1,C,H,W]),
// D = C*H*W. Row i is the gradient of output component i with respect to
// the flattened input, obtained from D reverse-mode passes over a single
// recorded forward. BN is evaluated in eval mode (restored afterwards) so
// the block is a fixed function of x.
Eigen::MatrixXd jacobian(SaibBlock& block, const Tensor& x);

using iecl::log_abs_det;
using iecl::LogAbsDet;

struct VolumeStats {
  double fraction_expanding = 0.0;  // share of samples with log|det J| > 0
  double mean_logdet = 0.0;
  double min_logdet = 0.0;
  std::vector<double> logdets;
  Index singular = 0;
};

using Sampler = std::function<Tensor(Rng&)>;

// log|det J(x_i)| over n samples drawn by `sample` ([C,H,W] each).
VolumeStats volume_expansion_stats(SaibBlock& block, Rng& rng, Index n_samples, const Sampler& sample);
// Standard normal inputs.
VolumeStats volume_expansion_stats(SaibBlock& block, Rng& rng, Index n_samples);

}  // namespace iecl::saib
