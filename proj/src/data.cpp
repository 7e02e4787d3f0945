#include "iecl/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace iecl::data {

Eigen::MatrixXd prototype_matrix(const DataConfig& cfg) {
  const Index c = cfg.channels, h = cfg.height, w = cfg.width, k = cfg.n_classes;
  Eigen::MatrixXd protos(k, c * h * w);
  const double cy = 0.5 * static_cast<double>(h - 1), cx = 0.5 * static_cast<double>(w - 1);
  for (Index cls = 0; cls < k; ++cls) {
    for (Index ch = 0; ch < c; ++ch) {
      const double colour = 0.7 + 0.3 * std::cos(2.0 * std::numbers::pi *
                                                 (static_cast<double>(cls) / static_cast<double>(k) +
                                                  static_cast<double>(ch) / static_cast<double>(c)));
      for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x) {
          const bool in_y = std::abs(static_cast<double>(y) - cy) < 0.25 * static_cast<double>(h);
          const bool in_x = std::abs(static_cast<double>(x) - cx) < 0.25 * static_cast<double>(w);
          bool on = false;
          switch (cls % 4) {
            case 0: on = in_y && in_x; break;
            case 1: on = in_x; break;
            case 2: on = in_y; break;
            case 3: on = 2 * y < h; break;
          }
          protos(cls, (ch * h + y) * w + x) = (on ? 1.0 : -1.0) * colour;
        }
    }
  }
  return protos;
}

SyntheticDataset::SyntheticDataset(const DataConfig& cfg, Rng& rng) : cfg_(cfg), prototypes_(prototype_matrix(cfg)) {
  const Index d = dim();
  images_.reserve(static_cast<std::size_t>(cfg.n_classes * cfg.n_per_class * d));
  for (Index i = 0; i < cfg.n_per_class; ++i)
    for (Index cls = 0; cls < cfg.n_classes; ++cls) {
      labels_.push_back(static_cast<int>(cls));
      for (Index j = 0; j < d; ++j) {
        const double v = prototypes_(cls, j) + cfg.noise_sigma * rng.normal();
        images_.push_back(std::clamp(v, kClipLo, kClipHi));
      }
    }
}

Tensor SyntheticDataset::images() const {
  return Tensor({size(), cfg_.channels, cfg_.height, cfg_.width}, images_);
}

Tensor SyntheticDataset::batch(std::span<const Index> indices) const {
  const Index d = dim();
  std::vector<double> out;
  out.reserve(indices.size() * static_cast<std::size_t>(d));
  for (Index i : indices) {
    if (i < 0 || i >= size()) throw std::out_of_range("dataset index " + std::to_string(i) + " out of range");
    const auto begin = images_.begin() + i * d;
    out.insert(out.end(), begin, begin + d);
  }
  return Tensor({static_cast<Index>(indices.size()), cfg_.channels, cfg_.height, cfg_.width}, std::move(out));
}

std::vector<int> SyntheticDataset::nearest_prototype(const Eigen::MatrixXd& x) const {
  std::vector<int> out(static_cast<std::size_t>(x.rows()));
  for (Index i = 0; i < x.rows(); ++i) {
    Index best = 0;
    (prototypes_.rowwise() - x.row(i)).rowwise().squaredNorm().minCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

std::vector<std::vector<Index>> epoch_batches(Index n, Index batch_size, Rng& rng) {
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  // Fisher-Yates with the unbiased integer draw.
  for (Index i = n - 1; i > 0; --i) {
    std::swap(order[static_cast<std::size_t>(i)], order[rng.below(static_cast<std::uint64_t>(i + 1))]);
  }
  std::vector<std::vector<Index>> batches;
  for (Index start = 0; start + batch_size <= n; start += batch_size) {
    batches.emplace_back(order.begin() + start, order.begin() + start + batch_size);
  }
  return batches;
}

Tensor augment(const Tensor& x, const AugmentSettings& s, Rng& rng) {
  if (x.rank() != 4) throw ShapeError("augment: expected [N,C,H,W], got " + to_string(x.shape()));
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto in = x.data();
  std::vector<double> out(in.size());
  const Index pad = s.crop_pad;
  for (Index i = 0; i < n; ++i) {
    const bool flip = s.flip && rng.bernoulli(0.5);
    const Index dy = pad > 0 ? static_cast<Index>(rng.below(static_cast<std::uint64_t>(2 * pad + 1))) - pad : 0;
    const Index dx = pad > 0 ? static_cast<Index>(rng.below(static_cast<std::uint64_t>(2 * pad + 1))) - pad : 0;
    for (Index ch = 0; ch < c; ++ch)
      for (Index y = 0; y < h; ++y)
        for (Index xx = 0; xx < w; ++xx) {
          const Index sy = y + dy;
          const Index sx0 = xx + dx;
          const Index sx = flip ? w - 1 - sx0 : sx0;
          double v = 0.0;
          if (sy >= 0 && sy < h && sx0 >= 0 && sx0 < w) v = in[static_cast<std::size_t>(((i * c + ch) * h + sy) * w + sx)];
          out[static_cast<std::size_t>(((i * c + ch) * h + y) * w + xx)] = v;
        }
    if (s.noise_sigma > 0.0) {
      const auto base = static_cast<std::size_t>(i * c * h * w);
      for (Index j = 0; j < c * h * w; ++j) out[base + static_cast<std::size_t>(j)] += s.noise_sigma * rng.normal();
    }
  }
  return Tensor(x.shape(), std::move(out));
}

Tensor flip_horizontal(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("flip_horizontal: expected [N,C,H,W], got " + to_string(x.shape()));
  const Index w = x.dim(3);
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t row = 0; row < in.size() / static_cast<std::size_t>(w); ++row)
    for (Index xx = 0; xx < w; ++xx) {
      out[row * static_cast<std::size_t>(w) + static_cast<std::size_t>(xx)] =
          in[row * static_cast<std::size_t>(w) + static_cast<std::size_t>(w - 1 - xx)];
    }
  return Tensor(x.shape(), std::move(out));
}

}  // namespace iecl::data
