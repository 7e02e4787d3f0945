#pragma once

// Differential entropy estimators (nats) and incremental-entropy helpers.

#include "iecl/linalg.hpp"
#include "iecl/ops.hpp"
#include "iecl/rng.hpp"

#include <Eigen/Dense>

#include <functional>
#include <string>

namespace iecl::entropy {

enum class Estimator { kGaussianPlugin, kKnn };
Estimator parse_estimator(const std::string& name);
std::string to_string(Estimator e);

inline constexpr double kCovarianceEps = 1e-5;
inline constexpr double kDistanceFloor = 1e-12;
inline constexpr Index kDefaultK = 3;

struct EntropyEstimate {
  double value = 0.0;
  Estimator estimator = Estimator::kKnn;
  Index n_samples = 0;
  Index k = 0;          // knn only
  bool degenerate = false;  // all points identical; value is -inf
};

// d/2 log(2 pi e) + 1/2 log det(S + eps I) with S the (n-1)-normalised
// sample covariance of the rows of samples [n,d]. Differentiable.
Tensor gaussian_plugin_entropy(const Tensor& samples, double eps = kCovarianceEps);
EntropyEstimate gaussian_plugin_entropy(const Eigen::MatrixXd& samples, double eps = kCovarianceEps);

// Kozachenko-Leonenko:
//   psi(n) - psi(k) + log c_d + (d/n) sum_i log max(r_ik, 1e-12)
// with c_d the volume of the Euclidean unit ball and r_ik the distance from
// row i to its k-th nearest other row.
EntropyEstimate knn_entropy(const Eigen::MatrixXd& samples, Index k = kDefaultK);

// Distance from each row to its k-th nearest other row. Uses an R-tree for
// d <= 8 and a brute-force scan otherwise.
Eigen::VectorXd kth_neighbor_distances(const Eigen::MatrixXd& samples, Index k);
Eigen::VectorXd kth_neighbor_distances_brute(const Eigen::MatrixXd& samples, Index k);

EntropyEstimate estimate(const Eigen::MatrixXd& samples, Estimator e, Index k = kDefaultK);

// Row-wise map on a sample matrix [n,d] -> [n,d'].
using BatchMap = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>;

struct IncrementalEntropy {
  double h_before = 0.0;
  double h_after = 0.0;
  double delta = 0.0;
};

// H(g(X)) - H(X) with the same estimator (and k) for both terms.
IncrementalEntropy incremental_entropy(const BatchMap& g, const Eigen::MatrixXd& samples, Estimator e,
                                       Index k = kDefaultK);

// Entropy change of x -> A x + b: log|det A| (-inf when singular).
double linear_delta_h(const Eigen::MatrixXd& a);

using JacobianFn = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;

struct DpiResult {
  double lhs = 0.0;          // H(f(X))
  double rhs = 0.0;          // H(X) + mean log|det J_f(x_i)|
  double h_input = 0.0;      // H(X)
  double mean_logdet = 0.0;
  double standard_error = 0.0;
  double bias_allowance = 0.0;
  // 3 x standard_error + bias_allowance + a rounding slack
  double tolerance = 0.0;
  bool satisfied = false;    // lhs <= rhs + tolerance
};

struct DpiOptions {
  Estimator estimator = Estimator::kKnn;
  Index k = kDefaultK;
  // Disjoint subsets used to estimate the standard error.
  Index n_subsets = 10;
  // Jacobians are averaged over at most this many leading samples.
  Index max_jacobians = 100000;
  Index jacobian_cap = 256;
};

// Checks H(f(X)) <= H(X) + E[log|det J_f|] for a dimension-preserving f.
DpiResult dpi_check(const BatchMap& f, const JacobianFn& jacobian, const Eigen::MatrixXd& samples,
                    const DpiOptions& options = {});

}  // namespace iecl::entropy
