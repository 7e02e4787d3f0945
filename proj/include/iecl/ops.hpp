#pragma once

// Differentiable tensor ops. Every op records itself on the active tape when
// gradient mode is on and at least one input requires grad.
//
// Broadcasting is limited to two forms: a scalar (one-element) operand, or an
// operand whose shape is a trailing suffix of the other's (repeated along
// the leading axes, e.g. [d] against [n,d]). Anything else is a ShapeError;
// reshape explicitly.

#include "iecl/tensor.hpp"

#include <vector>

namespace iecl {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& x, double s);
Tensor mul_scalar(const Tensor& x, double s);
Tensor neg(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator+(double s, const Tensor& a) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return add_scalar(a, -s); }
inline Tensor operator-(double s, const Tensor& a) { return add_scalar(neg(a), s); }
inline Tensor operator*(const Tensor& a, double s) { return mul_scalar(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator/(const Tensor& a, double s) { return mul_scalar(a, 1.0 / s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

Tensor exp(const Tensor& x);
// DomainError on any x <= 0.
Tensor log(const Tensor& x);
// DomainError on any x <= 0.
Tensor sqrt(const Tensor& x);
Tensor square(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
// x * sigmoid(x)
Tensor swish(const Tensor& x);
Tensor clamp_min(const Tensor& x, double lo);

// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
// Rank-2 transpose.
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
// out.shape[i] = x.shape[axes[i]]
Tensor permute(const Tensor& x, const std::vector<Index>& axes);

Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, Index axis, bool keepdim = false);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, Index axis, bool keepdim = false);

struct MaxResult {
  Tensor values;
  std::vector<Index> argmax;
};
// Ties resolve to the lowest index.
MaxResult max(const Tensor& x, Index axis);

// sqrt(sum(x^2, axis)); the gradient at a zero slice is taken as zero.
Tensor l2_norm(const Tensor& x, Index axis);
Tensor softmax(const Tensor& x, Index axis);
Tensor logsumexp(const Tensor& x, Index axis);

// Channels-last patches for a stride-1 convolution with zero padding
// (kernel - 1) / 2: [N,H,W,C] -> [N*H*W, kernel*kernel*C], columns ordered
// (ky, kx, c).
Tensor im2col(const Tensor& x, Index kernel);

// Channels-last 2-D convolution, stride 1, spatial size preserved.
// x: [N,H,W,C]; weight: [O, kernel*kernel*C]; bias: [O] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Index kernel);

// log det of a symmetric positive-definite matrix (Cholesky).
Tensor logdet_spd(const Tensor& s);

}  // namespace iecl
