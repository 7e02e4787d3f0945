#include "iecl/linalg.hpp"

namespace iecl {

Eigen::MatrixXd gaussian_matrix(Index rows, Index cols, Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

Eigen::MatrixXd random_orthogonal(Index d, Rng& rng) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian_matrix(d, d, rng));
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, d);
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Index j = 0; j < d; ++j) {
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  return q;
}

Eigen::MatrixXd random_well_conditioned(Index d, double max_cond, Rng& rng) {
  for (;;) {
    Eigen::MatrixXd a = gaussian_matrix(d, d, rng);
    if (condition_number(a) < max_cond) return a;
  }
}

}  // namespace iecl
