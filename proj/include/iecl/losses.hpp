#pragma once

// Terms of the training objective and the InfoNCE mutual-information bound.

#include "iecl/ops.hpp"

#include <string>

namespace iecl::losses {

inline constexpr double kNormFloor = 1e-12;
inline constexpr double kVarianceFloor = 1e-10;

struct CosineResult {
  Tensor value;
  bool zero_vector = false;  // a norm hit the floor; value is then 0
};
CosineResult cosine_sim(const Tensor& a, const Tensor& b);

// Rows scaled to unit L2 norm (norms floored at 1e-12).
Tensor normalize_rows(const Tensor& x);

// In-batch InfoNCE: row i of queries is the positive for anchor i, every
// other query row is a negative.
//   loss = mean_i [ logsumexp_j(s_ij) - s_ii ],  s_ij = cos(a_i, q_j) / tau
Tensor info_nce(const Tensor& anchors, const Tensor& queries, double tau);

// log N - loss
double mi_lower_bound(double loss, Index n);

struct GaussianMoments {
  Tensor mu;      // [d]
  Tensor sigma2;  // scalar, isotropic variance
  bool floored = false;
};

// Batch mean and the per-dimension unbiased variance averaged over
// dimensions; sigma2 is floored at 1e-10. Differentiable.
GaussianMoments fit_moments(const Tensor& batch);

// KL(p || q) between isotropic Gaussians N(mu_p, s_p I) and N(mu_q, s_q I):
//   d/2 log(s_q / s_p) + (d s_p + ||mu_p - mu_q||^2) / (2 s_q) - d/2
// Differentiable in both arguments; detach a side by fitting it on a
// detached batch.
Tensor gaussian_kl(const GaussianMoments& p, const GaussianMoments& q);

struct LossWeights {
  double tau = 0.2;
  double beta = 0.09;
  double lambda = 0.2;
  double eta = 1.0;
  double gamma = 1e-4;

  // Throws unless tau > 0 and every other weight is > 0, or >= 0 when
  // allow_zero is set (ablations and verification).
  void validate(bool allow_zero = false) const;
};

struct LossTerms {
  Tensor infonce;
  Tensor kl;
  Tensor entropy;      // H of the designated feature batch
  Tensor reg_encoder;  // 0 when spectral norm is architectural
  Tensor saib_decay;   // sum of squared SAIB parameters
};

struct LossBreakdown {
  Tensor infonce, kl, neg_entropy, reg_encoder, saib_decay;
  Tensor total;  // infonce + beta kl + lambda neg_entropy + eta reg_encoder + gamma saib_decay
  LossWeights weights;
};

LossBreakdown final_objective(const LossTerms& terms, const LossWeights& weights);

}  // namespace iecl::losses
