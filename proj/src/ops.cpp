#include "iecl/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace iecl {

namespace {

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!grad_enabled()) return false;
  const Tape& tape = Tape::active();
  return std::any_of(inputs.begin(), inputs.end(), [&](const Tensor* t) { return tape.tracks(*t); });
}

void record(Tensor& out, std::vector<Tensor> inputs, BackwardFn fn) {
  Tape::active().record(out, std::move(inputs), std::move(fn));
}

std::string shape_msg(const char* op, const Tensor& a, const Tensor& b) {
  return std::string(op) + ": incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape());
}

Index normalize_axis(const char* op, const Tensor& x, Index axis) {
  const Index r = x.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError(std::string(op) + ": axis out of range for shape " + to_string(x.shape()));
  }
  return axis;
}

// Splits a shape around `axis` into (outer, length, inner) extents.
struct AxisSplit {
  Index outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, Index axis) {
  AxisSplit s;
  for (Index i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  s.len = shape[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape reduced_shape(const Shape& shape, Index axis, bool keepdim) {
  Shape out = shape;
  if (keepdim) {
    out[static_cast<std::size_t>(axis)] = 1;
  } else {
    out.erase(out.begin() + axis);
  }
  return out;
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() >= big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// How the smaller operand maps onto the output index space.
enum class Bcast { kSame, kScalarA, kScalarB, kSuffixA, kSuffixB };

Bcast broadcast_kind(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Bcast::kSame;
  if (b.numel() == 1 && b.rank() <= a.rank()) return Bcast::kScalarB;
  if (a.numel() == 1 && a.rank() <= b.rank()) return Bcast::kScalarA;
  if (is_suffix(b.shape(), a.shape())) return Bcast::kSuffixB;
  if (is_suffix(a.shape(), b.shape())) return Bcast::kSuffixA;
  throw ShapeError(shape_msg(op, a, b));
}

template <class F, class DA, class DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, DA dfa, DB dfb) {
  const Bcast kind = broadcast_kind(op, a, b);
  const bool a_big = kind == Bcast::kSame || kind == Bcast::kScalarB || kind == Bcast::kSuffixB;
  const Shape& out_shape = a_big ? a.shape() : b.shape();
  const std::size_t n = static_cast<std::size_t>(numel(out_shape));
  const std::size_t na = a.data().size(), nb = b.data().size();

  const double* pa = a.data().data();
  const double* pb = b.data().data();
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k) out[k] = f(pa[k % na], pb[k % nb]);
  Tensor result(out_shape, std::move(out));

  if (should_record({&a, &b})) {
    record(result, {a, b},
           [ai = a.impl(), bi = b.impl(), n, na, nb, dfa, dfb](std::span<const double> g,
                                                               std::span<std::vector<double>* const> gi) {
             const double* xa = ai->data.data();
             const double* xb = bi->data.data();
             if (gi[0]) {
               double* ga = gi[0]->data();
               for (std::size_t k = 0; k < n; ++k) ga[k % na] += g[k] * dfa(xa[k % na], xb[k % nb]);
             }
             if (gi[1]) {
               double* gb = gi[1]->data();
               for (std::size_t k = 0; k < n; ++k) gb[k % nb] += g[k] * dfb(xa[k % na], xb[k % nb]);
             }
           });
  }
  return result;
}

// df receives (input, output).
template <class F, class DF>
Tensor unary(const Tensor& x, F f, DF df) {
  std::vector<double> out(x.data().size());
  std::transform(x.data().begin(), x.data().end(), out.begin(), f);
  Tensor result(x.shape(), std::move(out));
  if (should_record({&x})) {
    record(result, {x},
           [xi = x.impl(), yi = result.impl(), df](std::span<const double> g,
                                                  std::span<std::vector<double>* const> gi) {
             double* gx = gi[0]->data();
             for (std::size_t k = 0; k < g.size(); ++k) gx[k] += g[k] * df(xi->data[k], yi->data[k]);
           });
  }
  return result;
}

void require_positive(const char* op, const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > 0.0)) {
      throw DomainError(std::string(op) + ": input must be positive, got " + std::to_string(v));
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  return binary("add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
                [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary("sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
                [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary("mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
                [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor add_scalar(const Tensor& x, double s) {
  return unary(x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& x, double s) {
  return unary(x, [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Tensor neg(const Tensor& x) { return mul_scalar(x, -1.0); }

Tensor exp(const Tensor& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  require_positive("log", x);
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sqrt(const Tensor& x) {
  require_positive("sqrt", x);
  return unary(x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Tensor square(const Tensor& x) {
  return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor relu(const Tensor& x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

namespace {
double sigmoid_value(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}
}  // namespace

Tensor sigmoid(const Tensor& x) {
  return unary(x, sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

Tensor swish(const Tensor& x) { return mul(x, sigmoid(x)); }

Tensor clamp_min(const Tensor& x, double lo) {
  return unary(x, [lo](double v) { return v < lo ? lo : v; }, [lo](double v, double) { return v < lo ? 0.0 : 1.0; });
}

// ---------------------------------------------------------------------------
// Linear algebra and layout

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) throw ShapeError(shape_msg("matmul", a, b));
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m * n));
  MatrixMap(out.data(), m, n).noalias() = a.matrix() * b.matrix();
  Tensor result({m, n}, std::move(out));
  if (should_record({&a, &b})) {
    record(result, {a, b},
           [ai = a.impl(), bi = b.impl(), m, k, n](std::span<const double> g, std::span<std::vector<double>* const> gi) {
             ConstMatrixMap G(g.data(), m, n);
             ConstMatrixMap A(ai->data.data(), m, k);
             ConstMatrixMap B(bi->data.data(), k, n);
             if (gi[0]) MatrixMap(gi[0]->data(), m, k).noalias() += G * B.transpose();
             if (gi[1]) MatrixMap(gi[1]->data(), k, n).noalias() += A.transpose() * G;
           });
  }
  return result;
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("transpose: expected rank 2, got shape " + to_string(x.shape()));
  return permute(x, {1, 0});
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  Tensor result(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
  if (should_record({&x})) {
    record(result, {x}, [](std::span<const double> g, std::span<std::vector<double>* const> gi) {
      double* gx = gi[0]->data();
      for (std::size_t k = 0; k < g.size(); ++k) gx[k] += g[k];
    });
  }
  return result;
}

Tensor permute(const Tensor& x, const std::vector<Index>& axes) {
  const std::size_t r = x.shape().size();
  std::vector<bool> seen(r, false);
  if (axes.size() != r) throw ShapeError("permute: axis list does not match shape " + to_string(x.shape()));
  for (Index a : axes) {
    if (a < 0 || static_cast<std::size_t>(a) >= r || seen[static_cast<std::size_t>(a)]) {
      throw ShapeError("permute: invalid axis list for shape " + to_string(x.shape()));
    }
    seen[static_cast<std::size_t>(a)] = true;
  }
  Shape in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.shape()[i];
  Shape out_shape(r);
  Shape strides(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = x.shape()[static_cast<std::size_t>(axes[i])];
    strides[i] = in_strides[static_cast<std::size_t>(axes[i])];
  }
  const std::size_t n = static_cast<std::size_t>(x.numel());
  auto src = std::make_shared<std::vector<Index>>(n);
  Shape counter(r, 0);
  Index offset = 0;
  for (std::size_t k = 0; k < n; ++k) {
    (*src)[k] = offset;
    for (std::size_t d = r; d-- > 0;) {
      ++counter[d];
      offset += strides[d];
      if (counter[d] < out_shape[d]) break;
      offset -= strides[d] * counter[d];
      counter[d] = 0;
    }
  }
  std::vector<double> out(n);
  const double* px = x.data().data();
  for (std::size_t k = 0; k < n; ++k) out[k] = px[(*src)[k]];
  Tensor result(std::move(out_shape), std::move(out));
  if (should_record({&x})) {
    record(result, {x}, [src](std::span<const double> g, std::span<std::vector<double>* const> gi) {
      double* gx = gi[0]->data();
      for (std::size_t k = 0; k < g.size(); ++k) gx[(*src)[k]] += g[k];
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  const double total = std::accumulate(x.data().begin(), x.data().end(), 0.0);
  Tensor result = Tensor::scalar(total);
  if (should_record({&x})) {
    record(result, {x}, [](std::span<const double> g, std::span<std::vector<double>* const> gi) {
      for (double& v : *gi[0]) v += g[0];
    });
  }
  return result;
}

Tensor sum(const Tensor& x, Index axis, bool keepdim) {
  axis = normalize_axis("sum", x, axis);
  const AxisSplit s = split_at(x.shape(), axis);
  std::vector<double> out(static_cast<std::size_t>(s.outer * s.inner), 0.0);
  const double* px = x.data().data();
  for (Index o = 0; o < s.outer; ++o)
    for (Index a = 0; a < s.len; ++a)
      for (Index i = 0; i < s.inner; ++i) out[o * s.inner + i] += px[(o * s.len + a) * s.inner + i];
  Tensor result(reduced_shape(x.shape(), axis, keepdim), std::move(out));
  if (should_record({&x})) {
    record(result, {x}, [s](std::span<const double> g, std::span<std::vector<double>* const> gi) {
      double* gx = gi[0]->data();
      for (Index o = 0; o < s.outer; ++o)
        for (Index a = 0; a < s.len; ++a)
          for (Index i = 0; i < s.inner; ++i) gx[(o * s.len + a) * s.inner + i] += g[o * s.inner + i];
    });
  }
  return result;
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  return mul_scalar(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor mean(const Tensor& x, Index axis, bool keepdim) {
  axis = normalize_axis("mean", x, axis);
  const Index len = x.shape()[static_cast<std::size_t>(axis)];
  if (len == 0) throw ShapeError("mean: empty reduction axis in shape " + to_string(x.shape()));
  return mul_scalar(sum(x, axis, keepdim), 1.0 / static_cast<double>(len));
}

MaxResult max(const Tensor& x, Index axis) {
  axis = normalize_axis("max", x, axis);
  const AxisSplit s = split_at(x.shape(), axis);
  if (s.len == 0) throw ShapeError("max: empty reduction axis in shape " + to_string(x.shape()));
  std::vector<double> out(static_cast<std::size_t>(s.outer * s.inner));
  std::vector<Index> arg(out.size());
  const double* px = x.data().data();
  for (Index o = 0; o < s.outer; ++o) {
    for (Index i = 0; i < s.inner; ++i) {
      Index best = 0;
      double bv = px[o * s.len * s.inner + i];
      for (Index a = 1; a < s.len; ++a) {
        const double v = px[(o * s.len + a) * s.inner + i];
        if (v > bv) {
          bv = v;
          best = a;
        }
      }
      out[o * s.inner + i] = bv;
      arg[o * s.inner + i] = best;
    }
  }
  Tensor values(reduced_shape(x.shape(), axis, false), std::move(out));
  if (should_record({&x})) {
    record(values, {x}, [s, arg](std::span<const double> g, std::span<std::vector<double>* const> gi) {
      double* gx = gi[0]->data();
      for (Index o = 0; o < s.outer; ++o)
        for (Index i = 0; i < s.inner; ++i) {
          const Index k = o * s.inner + i;
          gx[(o * s.len + arg[k]) * s.inner + i] += g[k];
        }
    });
  }
  return {values, std::move(arg)};
}

Tensor l2_norm(const Tensor& x, Index axis) {
  axis = normalize_axis("l2_norm", x, axis);
  const AxisSplit s = split_at(x.shape(), axis);
  std::vector<double> out(static_cast<std::size_t>(s.outer * s.inner), 0.0);
  const double* px = x.data().data();
  for (Index o = 0; o < s.outer; ++o)
    for (Index a = 0; a < s.len; ++a)
      for (Index i = 0; i < s.inner; ++i) {
        const double v = px[(o * s.len + a) * s.inner + i];
        out[o * s.inner + i] += v * v;
      }
  for (double& v : out) v = std::sqrt(v);
  Tensor result(reduced_shape(x.shape(), axis, false), std::move(out));
  if (should_record({&x})) {
    record(result, {x},
           [s, xi = x.impl(), yi = result.impl()](std::span<const double> g, std::span<std::vector<double>* const> gi) {
             double* gx = gi[0]->data();
             for (Index o = 0; o < s.outer; ++o)
               for (Index i = 0; i < s.inner; ++i) {
                 const Index k = o * s.inner + i;
                 const double norm = yi->data[static_cast<std::size_t>(k)];
                 if (norm == 0.0) continue;
                 for (Index a = 0; a < s.len; ++a) {
                   const Index idx = (o * s.len + a) * s.inner + i;
                   gx[idx] += g[k] * xi->data[static_cast<std::size_t>(idx)] / norm;
                 }
               }
           });
  }
  return result;
}

Tensor softmax(const Tensor& x, Index axis) {
  axis = normalize_axis("softmax", x, axis);
  const AxisSplit s = split_at(x.shape(), axis);
  std::vector<double> out(x.data().size());
  const double* px = x.data().data();
  for (Index o = 0; o < s.outer; ++o)
    for (Index i = 0; i < s.inner; ++i) {
      double m = -std::numeric_limits<double>::infinity();
      for (Index a = 0; a < s.len; ++a) m = std::max(m, px[(o * s.len + a) * s.inner + i]);
      double z = 0.0;
      for (Index a = 0; a < s.len; ++a) {
        const Index idx = (o * s.len + a) * s.inner + i;
        out[idx] = std::exp(px[idx] - m);
        z += out[idx];
      }
      for (Index a = 0; a < s.len; ++a) out[(o * s.len + a) * s.inner + i] /= z;
    }
  Tensor result(x.shape(), std::move(out));
  if (should_record({&x})) {
    record(result, {x}, [s, yi = result.impl()](std::span<const double> g, std::span<std::vector<double>* const> gi) {
      double* gx = gi[0]->data();
      const double* y = yi->data.data();
      for (Index o = 0; o < s.outer; ++o)
        for (Index i = 0; i < s.inner; ++i) {
          double dot = 0.0;
          for (Index a = 0; a < s.len; ++a) {
            const Index idx = (o * s.len + a) * s.inner + i;
            dot += g[idx] * y[idx];
          }
          for (Index a = 0; a < s.len; ++a) {
            const Index idx = (o * s.len + a) * s.inner + i;
            gx[idx] += y[idx] * (g[idx] - dot);
          }
        }
    });
  }
  return result;
}

Tensor logsumexp(const Tensor& x, Index axis) {
  axis = normalize_axis("logsumexp", x, axis);
  const AxisSplit s = split_at(x.shape(), axis);
  std::vector<double> out(static_cast<std::size_t>(s.outer * s.inner));
  const double* px = x.data().data();
  for (Index o = 0; o < s.outer; ++o)
    for (Index i = 0; i < s.inner; ++i) {
      double m = -std::numeric_limits<double>::infinity();
      for (Index a = 0; a < s.len; ++a) m = std::max(m, px[(o * s.len + a) * s.inner + i]);
      double z = 0.0;
      for (Index a = 0; a < s.len; ++a) z += std::exp(px[(o * s.len + a) * s.inner + i] - m);
      out[o * s.inner + i] = m + std::log(z);
    }
  Tensor result(reduced_shape(x.shape(), axis, false), std::move(out));
  if (should_record({&x})) {
    record(result, {x},
           [s, xi = x.impl(), yi = result.impl()](std::span<const double> g, std::span<std::vector<double>* const> gi) {
             double* gx = gi[0]->data();
             for (Index o = 0; o < s.outer; ++o)
               for (Index i = 0; i < s.inner; ++i) {
                 const Index k = o * s.inner + i;
                 const double lse = yi->data[static_cast<std::size_t>(k)];
                 for (Index a = 0; a < s.len; ++a) {
                   const Index idx = (o * s.len + a) * s.inner + i;
                   gx[idx] += g[k] * std::exp(xi->data[static_cast<std::size_t>(idx)] - lse);
                 }
               }
           });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Convolution

Tensor im2col(const Tensor& x, Index kernel) {
  if (x.rank() != 4) throw ShapeError("im2col: expected [N,H,W,C], got " + to_string(x.shape()));
  if (kernel < 1 || kernel % 2 == 0) throw ShapeError("im2col: kernel must be odd and positive");
  const Index n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const Index pad = (kernel - 1) / 2;
  const Index cols = kernel * kernel * c;
  // Map from (row, col) to the flat source index, or -1 for padding.
  auto src = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(n * h * w * cols));
  std::size_t k = 0;
  for (Index b = 0; b < n; ++b)
    for (Index y = 0; y < h; ++y)
      for (Index xx = 0; xx < w; ++xx)
        for (Index ky = 0; ky < kernel; ++ky)
          for (Index kx = 0; kx < kernel; ++kx) {
            const Index sy = y + ky - pad, sx = xx + kx - pad;
            const bool inside = sy >= 0 && sy < h && sx >= 0 && sx < w;
            for (Index ch = 0; ch < c; ++ch) (*src)[k++] = inside ? ((b * h + sy) * w + sx) * c + ch : -1;
          }
  std::vector<double> out(src->size());
  const double* px = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*src)[i] >= 0 ? px[(*src)[i]] : 0.0;
  Tensor result({n * h * w, cols}, std::move(out));
  if (should_record({&x})) {
    record(result, {x}, [src](std::span<const double> g, std::span<std::vector<double>* const> gi) {
      double* gx = gi[0]->data();
      for (std::size_t i = 0; i < g.size(); ++i)
        if ((*src)[i] >= 0) gx[(*src)[i]] += g[i];
    });
  }
  return result;
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Index kernel) {
  if (x.rank() != 4) throw ShapeError("conv2d: expected input [N,H,W,C], got " + to_string(x.shape()));
  const Index n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  if (weight.rank() != 2 || weight.dim(1) != kernel * kernel * c) {
    throw ShapeError("conv2d: weight " + to_string(weight.shape()) + " does not match input " + to_string(x.shape()) +
                     " with kernel " + std::to_string(kernel));
  }
  const Index out_ch = weight.dim(0);
  Tensor cols = kernel == 1 ? reshape(x, {n * h * w, c}) : im2col(x, kernel);
  Tensor y = matmul(cols, transpose(weight));
  if (bias.defined()) {
    if (bias.shape() != Shape{out_ch}) throw ShapeError(shape_msg("conv2d bias", y, bias));
    y = add(y, bias);
  }
  return reshape(y, {n, h, w, out_ch});
}

// ---------------------------------------------------------------------------

Tensor logdet_spd(const Tensor& s) {
  if (s.rank() != 2 || s.dim(0) != s.dim(1)) {
    throw ShapeError("logdet_spd: expected a square matrix, got " + to_string(s.shape()));
  }
  const Index d = s.dim(0);
  Eigen::LLT<Eigen::MatrixXd> llt(s.to_matrix());
  if (llt.info() != Eigen::Success) throw DomainError("logdet_spd: matrix is not positive definite");
  const double value = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  Tensor result = Tensor::scalar(value);
  if (should_record({&s})) {
    Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(d, d));
    record(result, {s},
           [inv = std::move(inv), d](std::span<const double> g, std::span<std::vector<double>* const> gi) {
             MatrixMap(gi[0]->data(), d, d) += g[0] * inv.transpose();
           });
  }
  return result;
}

}  // namespace iecl
