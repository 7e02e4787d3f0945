#pragma once

// Small dense linear-algebra helpers on Eigen types.

#include "iecl/rng.hpp"
#include "iecl/tensor.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>

namespace iecl {

struct LogAbsDet {
  double value = 0.0;  // -inf when singular
  bool singular = false;
};

// sum_i log|u_ii| from an LU factorisation with partial pivoting.
// Singular matrices yield the -inf sentinel rather than an error.
template <typename Derived>
LogAbsDet log_abs_det(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  if (m.rows() != m.cols()) {
    throw ShapeError("log_abs_det: matrix must be square, got " + std::to_string(m.rows()) + "x" +
                     std::to_string(m.cols()));
  }
  LogAbsDet out;
  if (m.rows() == 0) return out;
  Eigen::PartialPivLU<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>> lu(m.eval());
  const auto& packed = lu.matrixLU();
  for (Eigen::Index i = 0; i < packed.rows(); ++i) {
    const Scalar pivot = std::abs(packed(i, i));
    if (pivot == Scalar(0) || !std::isfinite(static_cast<double>(pivot))) {
      out.value = -std::numeric_limits<double>::infinity();
      out.singular = true;
      return out;
    }
    out.value += std::log(static_cast<double>(pivot));
  }
  return out;
}

template <typename Derived>
double condition_number(const Eigen::MatrixBase<Derived>& m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m.template cast<double>());
  const auto& s = svd.singularValues();
  if (s.size() == 0) return 1.0;
  const double smin = s(s.size() - 1);
  return smin > 0.0 ? s(0) / smin : std::numeric_limits<double>::infinity();
}

// i.i.d. N(0,1) entries, filled row by row.
Eigen::MatrixXd gaussian_matrix(Index rows, Index cols, Rng& rng);

// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with the
// signs of R's diagonal folded into Q).
Eigen::MatrixXd random_orthogonal(Index d, Rng& rng);

// Gaussian matrix redrawn until its 2-norm condition number is below max_cond.
Eigen::MatrixXd random_well_conditioned(Index d, double max_cond, Rng& rng);

}  // namespace iecl
