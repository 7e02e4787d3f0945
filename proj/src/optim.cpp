#include "iecl/optim.hpp"

#include <cmath>
#include <numbers>

namespace iecl {

namespace {

void ensure_state(std::vector<std::vector<double>>& state, const std::vector<nn::Param>& params) {
  if (state.empty()) {
    for (const auto& p : params) state.emplace_back(static_cast<std::size_t>(p.value.numel()), 0.0);
    return;
  }
  if (state.size() != params.size()) throw std::logic_error("optimizer: parameter list changed between steps");
}

}  // namespace

void Sgd::step(const std::vector<nn::Param>& params, double lr) {
  ensure_state(velocity_, params);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor w = params[i].value;
    if (!w.has_grad()) continue;
    const auto g = w.grad();
    auto d = w.mutable_data();
    auto& vel = velocity_[i];
    for (std::size_t j = 0; j < d.size(); ++j) {
      vel[j] = momentum_ * vel[j] + g[j] + weight_decay_ * d[j];
      d[j] -= lr * vel[j];
    }
  }
}

void AdamW::step(const std::vector<nn::Param>& params, double lr) {
  ensure_state(m_, params);
  ensure_state(v_, params);
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor w = params[i].value;
    if (!w.has_grad()) continue;
    const auto g = w.grad();
    auto d = w.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < d.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      const double update = (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
      d[j] -= lr * (weight_decay_ * d[j] + update);
    }
  }
}

std::unique_ptr<Optimizer> make_optimizer(const OptimizerSettings& s) {
  if (s.name == "adamw") return std::make_unique<AdamW>(s.beta1, s.beta2, s.eps, s.weight_decay);
  if (s.name == "sgd") return std::make_unique<Sgd>(s.momentum, s.weight_decay);
  throw ConfigError("unknown optimizer '" + s.name + "'");
}

double cosine_lr(double base, Index step, Index total) {
  if (total <= 0) return base;
  const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
  return 0.5 * base * (1.0 + std::cos(std::numbers::pi * t));
}

double scheduled_lr(const OptimizerSettings& s, Index step, Index total) {
  return s.schedule == "cosine" ? cosine_lr(s.lr, step, total) : s.lr;
}

}  // namespace iecl
