#pragma once

// Parameterised layers: linear, channels-last convolution with optional
// spectral normalisation, batch norm, learnable positional table.

#include "iecl/ops.hpp"
#include "iecl/rng.hpp"

#include <string>
#include <vector>

namespace iecl::nn {

enum class Mode { kTrain, kEval };
enum class Activation { kSwish, kRelu, kIdentity };

Tensor activate(const Tensor& x, Activation act);
Activation parse_activation(const std::string& name);
std::string to_string(Activation act);

// A named handle into a module's storage.
struct Param {
  std::string name;
  Tensor value;
};

// Samples N(0, 2 / fan_in) with requires_grad set.
Tensor kaiming_init(Rng& rng, Shape shape, Index fan_in);

class Module {
 public:
  virtual ~Module() = default;

  virtual void collect_parameters(const std::string& prefix, std::vector<Param>& out) const = 0;
  // Non-learnable state: running statistics, power-iteration vectors.
  virtual void collect_buffers(const std::string& /*prefix*/, std::vector<Param>& /*out*/) const {}
  virtual void set_mode(Mode /*mode*/) {}
  // While frozen, forward passes leave running statistics and
  // power-iteration vectors untouched (forward becomes a pure function).
  virtual void set_state_frozen(bool /*frozen*/) {}

  std::vector<Param> parameters(const std::string& prefix = "") const;
  std::vector<Param> buffers(const std::string& prefix = "") const;
  // Parameters followed by buffers.
  std::vector<Param> state(const std::string& prefix = "") const;

  void zero_grad() const;
  void set_requires_grad(bool flag) const;
};

// Throws unless both lists hold the same names with the same shapes, in order.
void check_compatible(const std::vector<Param>& a, const std::vector<Param>& b);
// Copies values from `src` into `dst` (compatible lists).
void copy_values(const std::vector<Param>& src, const std::vector<Param>& dst);

class Linear : public Module {
 public:
  Linear(Index in, Index out, Rng& rng);
  Tensor forward(const Tensor& x) const;
  void collect_parameters(const std::string& prefix, std::vector<Param>& out) const override;

  Tensor weight;  // [out, in]
  Tensor bias;    // [out]
};

struct SpectralNormState {
  Tensor u;  // unit vector, length = rows of the flattened weight
  int n_power_iters = 1;
  bool zero_weight_warning = false;
  double last_sigma = 0.0;
};

struct SpectralNormResult {
  Tensor weight;  // W / sigma, or W unchanged when W == 0
  Tensor sigma;   // differentiable scalar estimate of the top singular value
};

// Alternating power iteration from the stored u:
//   repeat n times: v = normalize(W^T u); u = normalize(W v)
//   sigma = ||W^T u||
// The iteration is recorded on the tape, so gradients include the
// dependence of u and sigma on W. When persist_u is set the final u is
// written back to the state.
SpectralNormResult spectral_normalize(const Tensor& weight, SpectralNormState& state, bool persist_u = true);

// Unit vector with N(0,1) direction.
Tensor random_unit_vector(Index n, Rng& rng);

// Channels-last convolution, stride 1, zero padding preserving H and W.
class Conv2d : public Module {
 public:
  Conv2d(Index in_channels, Index out_channels, Index kernel, Rng& rng, bool spectral_norm = false);

  // x: [N,H,W,in_channels] -> [N,H,W,out_channels]
  Tensor forward(const Tensor& x);
  // Power-iteration sigma of the raw weight (differentiable), for the
  // Lipschitz penalty. Persists u unless frozen.
  Tensor sigma_estimate();

  void collect_parameters(const std::string& prefix, std::vector<Param>& out) const override;
  void collect_buffers(const std::string& prefix, std::vector<Param>& out) const override;
  void set_state_frozen(bool frozen) override { frozen_ = frozen; }

  Index in_channels() const { return in_; }
  Index out_channels() const { return out_; }
  Index kernel() const { return kernel_; }
  bool spectral_norm() const { return sn_enabled_; }

  Tensor weight;  // [out, kernel*kernel*in], columns ordered (ky, kx, c)
  Tensor bias;    // [out]
  SpectralNormState sn;

 private:
  Index in_, out_, kernel_;
  bool sn_enabled_;
  bool frozen_ = false;
};

class BatchNorm : public Module {
 public:
  explicit BatchNorm(Index channels, double momentum = 0.1, double eps = 1e-5);

  // x: [..., channels]. Train mode normalises with biased batch statistics
  // and folds the batch mean and unbiased variance into the running
  // statistics with weight `momentum`. Eval mode is the per-channel affine
  // map (x - running_mean) / sqrt(running_var + eps) * gamma + beta.
  Tensor forward(const Tensor& x);

  void collect_parameters(const std::string& prefix, std::vector<Param>& out) const override;
  void collect_buffers(const std::string& prefix, std::vector<Param>& out) const override;
  void set_mode(Mode mode) override { mode_ = mode; }
  void set_state_frozen(bool frozen) override { frozen_ = frozen; }
  Mode mode() const { return mode_; }

  Tensor gamma, beta;
  Tensor running_mean, running_var;
  double momentum, eps;

 private:
  Index channels_;
  Mode mode_ = Mode::kTrain;
  bool frozen_ = false;
};

// Learnable additive table, one row per patch index.
class PositionalEmbedding : public Module {
 public:
  // init_std == 0 gives a zero table.
  PositionalEmbedding(Index n_patches, Index dim, Rng& rng, double init_std = 0.02);

  // x: [..., n_patches, dim]; row i of the table is added to patch i.
  Tensor forward(const Tensor& x) const;
  void collect_parameters(const std::string& prefix, std::vector<Param>& out) const override;

  Tensor table;  // [n_patches, dim]
};

}  // namespace iecl::nn
