#pragma once

// Synthetic image classes and the view augmentations.
//
// Class k has a spatial pattern s_k(y, x) in {-1, +1} and a colour c_k(ch):
//   pattern (k mod 4): 0 central square, 1 central vertical band,
//                      2 central horizontal band, 3 top half
//   colour:            c_k(ch) = 0.7 + 0.3 cos(2 pi (k / K + ch / C))
// All patterns are mirror-symmetric left to right. A sample is
//   clip(s_k(y, x) c_k(ch) + N(0, noise_sigma^2), -2, 2).

#include "iecl/config.hpp"
#include "iecl/rng.hpp"
#include "iecl/tensor.hpp"

#include <span>
#include <vector>

namespace iecl::data {

inline constexpr double kClipLo = -2.0;
inline constexpr double kClipHi = 2.0;

class SyntheticDataset {
 public:
  SyntheticDataset(const DataConfig& cfg, Rng& rng);

  Index size() const { return static_cast<Index>(labels_.size()); }
  Index dim() const { return cfg_.channels * cfg_.height * cfg_.width; }
  const DataConfig& config() const { return cfg_; }
  const std::vector<int>& labels() const { return labels_; }

  // [n, C, H, W]
  Tensor images() const;
  Tensor batch(std::span<const Index> indices) const;
  // [n_classes, C*H*W]
  const Eigen::MatrixXd& prototypes() const { return prototypes_; }

  // Index of the prototype nearest to each row of x [n, C*H*W].
  std::vector<int> nearest_prototype(const Eigen::MatrixXd& x) const;

 private:
  DataConfig cfg_;
  Eigen::MatrixXd prototypes_;
  std::vector<double> images_;
  std::vector<int> labels_;
};

Eigen::MatrixXd prototype_matrix(const DataConfig& cfg);

// Per-epoch shuffled batches of full size (a short tail is dropped).
std::vector<std::vector<Index>> epoch_batches(Index n, Index batch_size, Rng& rng);

// Random horizontal flip (p = 0.5), a random shift of up to crop_pad pixels
// per axis with zero fill (pad then re-crop), then additive N(0, noise_sigma^2).
// Draw order per sample: flip, dy, dx, then noise in element order.
Tensor augment(const Tensor& x, const AugmentSettings& settings, Rng& rng);

Tensor flip_horizontal(const Tensor& x);

}  // namespace iecl::data
