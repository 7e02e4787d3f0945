#include "iecl/encoder.hpp"

namespace iecl {

EncoderNet::EncoderNet(const EncoderSettings& cfg, Index in_channels, bool spectral_norm, Rng& rng)
    : cfg_(cfg), in_channels_(in_channels) {
  Index c = in_channels;
  for (Index width : cfg.stem_channels) {
    convs.emplace_back(c, width, 3, rng, spectral_norm);
    convs.back().sn.n_power_iters = cfg.n_power_iters;
    conv_bns.emplace_back(width);
    c = width;
  }
  fcs.emplace_back(c, cfg.projector_hidden, rng);
  fc_bns.emplace_back(cfg.projector_hidden);
  fcs.emplace_back(cfg.projector_hidden, cfg.projector_hidden, rng);
  fc_bns.emplace_back(cfg.projector_hidden);
  fcs.emplace_back(cfg.projector_hidden, cfg.projector_out, rng);
}

EncoderOutput EncoderNet::forward(const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) != in_channels_) {
    throw ShapeError("encoder: expected [N," + std::to_string(in_channels_) + ",H,W], got " + to_string(x.shape()));
  }
  const Index n = x.dim(0), h = x.dim(2), w = x.dim(3);
  Tensor t = permute(x, {0, 2, 3, 1});
  for (std::size_t i = 0; i < convs.size(); ++i) {
    t = nn::activate(conv_bns[i].forward(convs[i].forward(t)), cfg_.activation);
  }
  EncoderOutput out;
  out.features = mean(reshape(t, {n, h * w, feature_dim()}), 1);
  Tensor z = out.features;
  for (std::size_t i = 0; i < 2; ++i) z = nn::activate(fc_bns[i].forward(fcs[i].forward(z)), cfg_.activation);
  out.projection = fcs[2].forward(z);
  return out;
}

Tensor EncoderNet::lipschitz_penalty() {
  Tensor total = Tensor::scalar(0.0);
  for (auto& conv : convs) total = add(total, square(relu(add_scalar(conv.sigma_estimate(), -1.0))));
  return total;
}

void EncoderNet::collect_parameters(const std::string& prefix, std::vector<nn::Param>& out) const {
  for (std::size_t i = 0; i < convs.size(); ++i) {
    convs[i].collect_parameters(prefix + "conv" + std::to_string(i) + ".", out);
    conv_bns[i].collect_parameters(prefix + "conv_bn" + std::to_string(i) + ".", out);
  }
  for (std::size_t i = 0; i < fcs.size(); ++i) {
    fcs[i].collect_parameters(prefix + "fc" + std::to_string(i) + ".", out);
    if (i < fc_bns.size()) fc_bns[i].collect_parameters(prefix + "fc_bn" + std::to_string(i) + ".", out);
  }
}

void EncoderNet::collect_buffers(const std::string& prefix, std::vector<nn::Param>& out) const {
  for (std::size_t i = 0; i < convs.size(); ++i) {
    convs[i].collect_buffers(prefix + "conv" + std::to_string(i) + ".", out);
    conv_bns[i].collect_buffers(prefix + "conv_bn" + std::to_string(i) + ".", out);
  }
  for (std::size_t i = 0; i < fc_bns.size(); ++i) fc_bns[i].collect_buffers(prefix + "fc_bn" + std::to_string(i) + ".", out);
}

void EncoderNet::set_mode(nn::Mode mode) {
  for (auto& bn : conv_bns) bn.set_mode(mode);
  for (auto& bn : fc_bns) bn.set_mode(mode);
}

void EncoderNet::set_state_frozen(bool frozen) {
  for (auto& c : convs) c.set_state_frozen(frozen);
  for (auto& bn : conv_bns) bn.set_state_frozen(frozen);
  for (auto& bn : fc_bns) bn.set_state_frozen(frozen);
}

EncoderPair::EncoderPair(const EncoderSettings& cfg, Index in_channels, bool spectral_norm, double m_, Rng& rng)
    : q(cfg, in_channels, spectral_norm, rng), k(cfg, in_channels, spectral_norm, rng), m(m_) {
  nn::copy_values(q.state(), k.state());
  k.set_requires_grad(false);
}

void momentum_update(const std::vector<nn::Param>& q, const std::vector<nn::Param>& k, double m) {
  nn::check_compatible(q, k);
  for (std::size_t i = 0; i < q.size(); ++i) {
    Tensor target = k[i].value;
    auto kd = target.mutable_data();
    const auto qd = q[i].value.data();
    // m k + (1 - m) q, written so that k == q is an exact fixed point
    for (std::size_t j = 0; j < kd.size(); ++j) kd[j] += (1.0 - m) * (qd[j] - kd[j]);
  }
}

void momentum_update(EncoderPair& pair) { momentum_update(pair.q.parameters(), pair.k.parameters(), pair.m); }

}  // namespace iecl
