#include "iecl/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace iecl::losses {

CosineResult cosine_sim(const Tensor& a, const Tensor& b) {
  if (a.rank() != 1 || a.shape() != b.shape()) {
    throw ShapeError("cosine_sim: expected two vectors of equal length, got " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  }
  const Tensor na = l2_norm(a, 0), nb = l2_norm(b, 0);
  CosineResult out;
  out.zero_vector = na.item() < kNormFloor || nb.item() < kNormFloor;
  out.value = div(sum(mul(a, b)), mul(clamp_min(na, kNormFloor), clamp_min(nb, kNormFloor)));
  return out;
}

Tensor normalize_rows(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("normalize_rows: expected [n,d], got " + to_string(x.shape()));
  const Tensor norms = clamp_min(l2_norm(x, 1), kNormFloor);
  // Broadcast the per-row norm over columns by dividing the transpose.
  return transpose(div(transpose(x), norms));
}

Tensor info_nce(const Tensor& anchors, const Tensor& queries, double tau) {
  if (anchors.rank() != 2 || anchors.shape() != queries.shape()) {
    throw ShapeError("info_nce: anchors " + to_string(anchors.shape()) + " and queries " +
                     to_string(queries.shape()) + " must both be [N,d]");
  }
  if (anchors.dim(0) < 2) throw std::invalid_argument("info_nce: need N >= 2 (no negatives otherwise)");
  if (!(tau > 0.0)) throw std::invalid_argument("info_nce: tau must be positive");
  const Tensor a = normalize_rows(anchors);
  const Tensor q = normalize_rows(queries);
  const Tensor logits = mul_scalar(matmul(a, transpose(q)), 1.0 / tau);
  const Tensor positives = mul_scalar(sum(mul(a, q), 1), 1.0 / tau);
  return mean(sub(logsumexp(logits, 1), positives));
}

double mi_lower_bound(double loss, Index n) {
  if (n < 2) throw std::invalid_argument("mi_lower_bound: need N >= 2");
  return std::log(static_cast<double>(n)) - loss;
}

GaussianMoments fit_moments(const Tensor& batch) {
  if (batch.rank() != 2) throw ShapeError("fit_moments: expected [n,d], got " + to_string(batch.shape()));
  const Index n = batch.dim(0), d = batch.dim(1);
  if (n < 2) throw std::invalid_argument("fit_moments: need at least 2 samples");
  GaussianMoments m;
  m.mu = mean(batch, 0);
  const Tensor centered = sub(batch, m.mu);
  const Tensor var = mul_scalar(sum(square(centered)), 1.0 / static_cast<double>((n - 1) * d));
  m.floored = var.item() < kVarianceFloor;
  m.sigma2 = clamp_min(var, kVarianceFloor);
  return m;
}

Tensor gaussian_kl(const GaussianMoments& p, const GaussianMoments& q) {
  if (p.mu.shape() != q.mu.shape() || p.mu.rank() != 1) {
    throw ShapeError("gaussian_kl: mean shapes " + to_string(p.mu.shape()) + " and " + to_string(q.mu.shape()) +
                     " differ");
  }
  const double d = static_cast<double>(p.mu.numel());
  const Tensor log_ratio = sub(log(q.sigma2), log(p.sigma2));
  const Tensor dist2 = sum(square(sub(p.mu, q.mu)));
  const Tensor quad = div(add(mul_scalar(p.sigma2, d), dist2), mul_scalar(q.sigma2, 2.0));
  return add_scalar(add(mul_scalar(log_ratio, 0.5 * d), quad), -0.5 * d);
}

void LossWeights::validate(bool allow_zero) const {
  if (!(tau > 0.0)) throw std::invalid_argument("loss weights: tau must be > 0");
  const std::pair<const char*, double> named[] = {{"beta", beta}, {"lambda", lambda}, {"eta", eta}, {"gamma", gamma}};
  for (const auto& [name, w] : named) {
    if (!std::isfinite(w) || w < 0.0 || (!allow_zero && w == 0.0)) {
      throw std::invalid_argument(std::string("loss weights: ") + name + " must be " +
                                  (allow_zero ? ">= 0" : "> 0 (zero needs the ablation override)") + ", got " +
                                  std::to_string(w));
    }
  }
}

LossBreakdown final_objective(const LossTerms& terms, const LossWeights& w) {
  LossBreakdown out;
  out.weights = w;
  out.infonce = terms.infonce;
  out.kl = terms.kl;
  out.neg_entropy = neg(terms.entropy);
  out.reg_encoder = terms.reg_encoder.defined() ? terms.reg_encoder : Tensor::scalar(0.0);
  out.saib_decay = terms.saib_decay.defined() ? terms.saib_decay : Tensor::scalar(0.0);
  out.total = add(add(add(add(out.infonce, mul_scalar(out.kl, w.beta)), mul_scalar(out.neg_entropy, w.lambda)),
                      mul_scalar(out.reg_encoder, w.eta)),
                  mul_scalar(out.saib_decay, w.gamma));
  return out;
}

}  // namespace iecl::losses
