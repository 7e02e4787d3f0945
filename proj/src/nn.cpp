#include "iecl/nn.hpp"

#include <algorithm>
#include <cmath>

namespace iecl::nn {

Tensor activate(const Tensor& x, Activation act) {
  switch (act) {
    case Activation::kSwish:
      return swish(x);
    case Activation::kRelu:
      return relu(x);
    case Activation::kIdentity:
      return x;
  }
  return x;
}

Activation parse_activation(const std::string& name) {
  if (name == "swish") return Activation::kSwish;
  if (name == "relu") return Activation::kRelu;
  if (name == "identity") return Activation::kIdentity;
  throw std::invalid_argument("unknown activation '" + name + "' (expected swish, relu or identity)");
}

std::string to_string(Activation act) {
  switch (act) {
    case Activation::kSwish:
      return "swish";
    case Activation::kRelu:
      return "relu";
    case Activation::kIdentity:
      return "identity";
  }
  return "swish";
}

Tensor kaiming_init(Rng& rng, Shape shape, Index fan_in) {
  if (fan_in <= 0) throw std::invalid_argument("kaiming_init: fan_in must be positive");
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<double> data(static_cast<std::size_t>(numel(shape)));
  for (double& v : data) v = stddev * rng.normal();
  return Tensor(std::move(shape), std::move(data), true);
}

// ---------------------------------------------------------------------------

std::vector<Param> Module::parameters(const std::string& prefix) const {
  std::vector<Param> out;
  collect_parameters(prefix, out);
  return out;
}

std::vector<Param> Module::buffers(const std::string& prefix) const {
  std::vector<Param> out;
  collect_buffers(prefix, out);
  return out;
}

std::vector<Param> Module::state(const std::string& prefix) const {
  std::vector<Param> out;
  collect_parameters(prefix, out);
  collect_buffers(prefix, out);
  return out;
}

void Module::zero_grad() const {
  for (auto& p : parameters()) p.value.zero_grad();
}

void Module::set_requires_grad(bool flag) const {
  for (auto& p : parameters()) p.value.set_requires_grad(flag);
}

void check_compatible(const std::vector<Param>& a, const std::vector<Param>& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("parameter sets differ in size: " + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()));
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name) {
      throw std::invalid_argument("parameter name mismatch: '" + a[i].name + "' vs '" + b[i].name + "'");
    }
    if (a[i].value.shape() != b[i].value.shape()) {
      throw ShapeError("parameter '" + a[i].name + "' shape mismatch: " + iecl::to_string(a[i].value.shape()) +
                       " vs " + iecl::to_string(b[i].value.shape()));
    }
  }
}

void copy_values(const std::vector<Param>& src, const std::vector<Param>& dst) {
  check_compatible(src, dst);
  for (std::size_t i = 0; i < src.size(); ++i) {
    Tensor target = dst[i].value;
    std::copy(src[i].value.data().begin(), src[i].value.data().end(), target.mutable_data().begin());
  }
}

// ---------------------------------------------------------------------------

Linear::Linear(Index in, Index out, Rng& rng)
    : weight(kaiming_init(rng, {out, in}, in)), bias(Tensor::zeros({out}, true)) {}

Tensor Linear::forward(const Tensor& x) const {
  if (x.rank() != 2 || x.dim(1) != weight.dim(1)) {
    throw ShapeError("linear: input " + iecl::to_string(x.shape()) + " does not match weight " +
                     iecl::to_string(weight.shape()));
  }
  return add(matmul(x, transpose(weight)), bias);
}

void Linear::collect_parameters(const std::string& prefix, std::vector<Param>& out) const {
  out.push_back({prefix + "weight", weight});
  out.push_back({prefix + "bias", bias});
}

// ---------------------------------------------------------------------------

Tensor random_unit_vector(Index n, Rng& rng) {
  std::vector<double> u(static_cast<std::size_t>(n));
  double norm = 0.0;
  for (double& v : u) {
    v = rng.normal();
    norm += v * v;
  }
  norm = std::sqrt(norm);
  for (double& v : u) v /= norm;
  return Tensor({n}, std::move(u));
}

namespace {

constexpr double kNormFloor = 1e-12;

Tensor normalize_column(const Tensor& x) { return div(x, clamp_min(l2_norm(reshape(x, {x.numel()}), 0), kNormFloor)); }

}  // namespace

SpectralNormResult spectral_normalize(const Tensor& weight, SpectralNormState& state, bool persist_u) {
  if (weight.rank() != 2) {
    throw ShapeError("spectral_normalize: expected a flattened 2-D weight, got " + iecl::to_string(weight.shape()));
  }
  const Index rows = weight.dim(0);
  if (!state.u.defined() || state.u.numel() != rows) {
    throw ShapeError("spectral_normalize: u has " + std::to_string(state.u.defined() ? state.u.numel() : 0) +
                     " entries, weight has " + std::to_string(rows) + " rows");
  }
  if (state.n_power_iters < 1) throw std::invalid_argument("spectral_normalize: n_power_iters must be positive");

  const auto w = weight.data();
  if (std::all_of(w.begin(), w.end(), [](double v) { return v == 0.0; })) {
    state.zero_weight_warning = true;
    state.last_sigma = 0.0;
    return {weight, Tensor::scalar(0.0)};
  }
  state.zero_weight_warning = false;

  const Tensor wt = transpose(weight);
  Tensor u = reshape(state.u.detach(), {rows, 1});
  for (int i = 0; i < state.n_power_iters; ++i) {
    Tensor v = normalize_column(matmul(wt, u));
    u = normalize_column(matmul(weight, v));
  }
  Tensor sigma = l2_norm(reshape(matmul(wt, u), {weight.dim(1)}), 0);
  state.last_sigma = sigma.item();
  if (persist_u) {
    Tensor stored = state.u;
    std::copy(u.data().begin(), u.data().end(), stored.mutable_data().begin());
  }
  return {div(weight, sigma), sigma};
}

// ---------------------------------------------------------------------------

Conv2d::Conv2d(Index in_channels, Index out_channels, Index kernel, Rng& rng, bool spectral_norm)
    : weight(kaiming_init(rng, {out_channels, kernel * kernel * in_channels}, kernel * kernel * in_channels)),
      bias(Tensor::zeros({out_channels}, true)),
      in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      sn_enabled_(spectral_norm) {
  if (kernel != 1 && kernel != 3) throw std::invalid_argument("Conv2d: kernel must be 1 or 3");
  sn.u = random_unit_vector(out_channels, rng);
}

Tensor Conv2d::forward(const Tensor& x) {
  if (x.rank() != 4 || x.dim(3) != in_) {
    throw ShapeError("conv: input " + iecl::to_string(x.shape()) + " does not have " + std::to_string(in_) +
                     " channels");
  }
  const Tensor w = sn_enabled_ ? spectral_normalize(weight, sn, !frozen_).weight : weight;
  return conv2d(x, w, bias, kernel_);
}

Tensor Conv2d::sigma_estimate() { return spectral_normalize(weight, sn, !frozen_).sigma; }

void Conv2d::collect_parameters(const std::string& prefix, std::vector<Param>& out) const {
  out.push_back({prefix + "weight", weight});
  out.push_back({prefix + "bias", bias});
}

void Conv2d::collect_buffers(const std::string& prefix, std::vector<Param>& out) const {
  out.push_back({prefix + "sn_u", sn.u});
}

// ---------------------------------------------------------------------------

BatchNorm::BatchNorm(Index channels, double momentum_, double eps_)
    : gamma(Tensor::full({channels}, 1.0, true)),
      beta(Tensor::zeros({channels}, true)),
      running_mean(Tensor::zeros({channels})),
      running_var(Tensor::full({channels}, 1.0)),
      momentum(momentum_),
      eps(eps_),
      channels_(channels) {
  if (!(momentum > 0.0 && momentum < 1.0)) throw std::invalid_argument("BatchNorm: momentum must be in (0,1)");
  if (!(eps > 0.0)) throw std::invalid_argument("BatchNorm: eps must be positive");
}

Tensor BatchNorm::forward(const Tensor& x) {
  if (x.rank() < 1 || x.dim(-1) != channels_) {
    throw ShapeError("batchnorm: input " + iecl::to_string(x.shape()) + " does not end in " +
                     std::to_string(channels_) + " channels");
  }
  const Index m = x.numel() / channels_;
  const Tensor flat = reshape(x, {m, channels_});
  Tensor y;
  if (mode_ == Mode::kTrain) {
    if (m < 2) throw std::invalid_argument("batchnorm: train mode needs at least 2 values per channel");
    const Tensor mu = mean(flat, 0);
    const Tensor centered = sub(flat, mu);
    const Tensor var = mean(square(centered), 0);
    y = div(centered, sqrt(add_scalar(var, eps)));
    if (!frozen_) {
      const double unbias = static_cast<double>(m) / static_cast<double>(m - 1);
      auto rm = running_mean.mutable_data();
      auto rv = running_var.mutable_data();
      for (Index c = 0; c < channels_; ++c) {
        rm[c] = (1.0 - momentum) * rm[c] + momentum * mu.at(c);
        rv[c] = (1.0 - momentum) * rv[c] + momentum * var.at(c) * unbias;
      }
    }
  } else {
    std::vector<double> inv(static_cast<std::size_t>(channels_));
    for (Index c = 0; c < channels_; ++c) inv[c] = 1.0 / std::sqrt(running_var.at(c) + eps);
    y = mul(sub(flat, running_mean), Tensor({channels_}, std::move(inv)));
  }
  return reshape(add(mul(y, gamma), beta), x.shape());
}

void BatchNorm::collect_parameters(const std::string& prefix, std::vector<Param>& out) const {
  out.push_back({prefix + "gamma", gamma});
  out.push_back({prefix + "beta", beta});
}

void BatchNorm::collect_buffers(const std::string& prefix, std::vector<Param>& out) const {
  out.push_back({prefix + "running_mean", running_mean});
  out.push_back({prefix + "running_var", running_var});
}

// ---------------------------------------------------------------------------

PositionalEmbedding::PositionalEmbedding(Index n_patches, Index dim, Rng& rng, double init_std) {
  if (n_patches < 1 || dim < 1) throw std::invalid_argument("PositionalEmbedding: sizes must be positive");
  std::vector<double> data(static_cast<std::size_t>(n_patches * dim), 0.0);
  if (init_std > 0.0)
    for (double& v : data) v = init_std * rng.normal();
  table = Tensor({n_patches, dim}, std::move(data), true);
}

Tensor PositionalEmbedding::forward(const Tensor& x) const { return add(x, table); }

void PositionalEmbedding::collect_parameters(const std::string& prefix, std::vector<Param>& out) const {
  out.push_back({prefix + "table", table});
}

}  // namespace iecl::nn
