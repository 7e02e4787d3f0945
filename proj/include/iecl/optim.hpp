#pragma once

// First-order optimizers over a fixed, ordered parameter list.

#include "iecl/config.hpp"
#include "iecl/nn.hpp"

#include <memory>
#include <vector>

namespace iecl {

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  // Updates every parameter that holds a gradient. The list must keep the
  // same order and shapes between calls.
  virtual void step(const std::vector<nn::Param>& params, double lr) = 0;
};

// Heavy-ball SGD with L2 weight decay folded into the gradient.
class Sgd : public Optimizer {
 public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}
  void step(const std::vector<nn::Param>& params, double lr) override;

 private:
  double momentum_, weight_decay_;
  std::vector<std::vector<double>> velocity_;
};

// Adam with decoupled weight decay: w <- w - lr (wd w + m_hat / (sqrt(v_hat) + eps)).
class AdamW : public Optimizer {
 public:
  AdamW(double beta1, double beta2, double eps, double weight_decay)
      : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}
  void step(const std::vector<nn::Param>& params, double lr) override;

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

std::unique_ptr<Optimizer> make_optimizer(const OptimizerSettings& s);

// base * (1 + cos(pi * step / total)) / 2; base when total == 0.
double cosine_lr(double base, Index step, Index total);
double scheduled_lr(const OptimizerSettings& s, Index step, Index total);

}  // namespace iecl
