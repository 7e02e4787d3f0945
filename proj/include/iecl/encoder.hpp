#pragma once

// Conv encoder with projector, and the anchor/momentum encoder pair.

#include "iecl/config.hpp"
#include "iecl/nn.hpp"

#include <deque>

namespace iecl {

struct EncoderOutput {
  Tensor features;    // [N, F] pooled backbone output
  Tensor projection;  // [N, P]
};

// conv3x3 -> BN -> act for each stem width, global average pool, then
// Linear -> BN -> act, Linear -> BN -> act, Linear.
class EncoderNet : public nn::Module {
 public:
  EncoderNet(const EncoderSettings& cfg, Index in_channels, bool spectral_norm, Rng& rng);

  // x: [N, C, H, W]
  EncoderOutput forward(const Tensor& x);

  // sum over conv layers of relu(sigma_hat - 1)^2 (raw weights).
  Tensor lipschitz_penalty();

  void collect_parameters(const std::string& prefix, std::vector<nn::Param>& out) const override;
  void collect_buffers(const std::string& prefix, std::vector<nn::Param>& out) const override;
  void set_mode(nn::Mode mode) override;
  void set_state_frozen(bool frozen) override;

  Index feature_dim() const { return cfg_.stem_channels.back(); }
  const EncoderSettings& config() const { return cfg_; }

  std::deque<nn::Conv2d> convs;
  std::deque<nn::BatchNorm> conv_bns;
  std::deque<nn::Linear> fcs;
  std::deque<nn::BatchNorm> fc_bns;

 private:
  EncoderSettings cfg_;
  Index in_channels_;
};

class EncoderPair {
 public:
  // K starts as an exact copy of Q and never takes gradients.
  EncoderPair(const EncoderSettings& cfg, Index in_channels, bool spectral_norm, double m, Rng& rng);

  EncoderNet q;
  EncoderNet k;
  double m;
};

// k <- m k + (1 - m) q over the parameters (buffers stay per-encoder).
void momentum_update(const std::vector<nn::Param>& q, const std::vector<nn::Param>& k, double m);
void momentum_update(EncoderPair& pair);

}  // namespace iecl
