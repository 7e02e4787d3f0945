#include "iecl/entropy.hpp"

#include <boost/geometry.hpp>
#include <boost/geometry/index/rtree.hpp>
#include <boost/math/special_functions/digamma.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <queue>

namespace iecl::entropy {

namespace bg = boost::geometry;
namespace bgi = boost::geometry::index;

Estimator parse_estimator(const std::string& name) {
  if (name == "knn") return Estimator::kKnn;
  if (name == "gaussian" || name == "gaussian_plugin" || name == "gauss") return Estimator::kGaussianPlugin;
  throw std::invalid_argument("unknown estimator '" + name + "' (expected knn or gaussian_plugin)");
}

std::string to_string(Estimator e) { return e == Estimator::kKnn ? "knn" : "gaussian_plugin"; }

Tensor gaussian_plugin_entropy(const Tensor& samples, double eps) {
  if (samples.rank() != 2) throw ShapeError("gaussian_plugin_entropy: expected [n,d], got " + iecl::to_string(samples.shape()));
  const Index n = samples.dim(0), d = samples.dim(1);
  if (n <= d) {
    throw std::invalid_argument("gaussian_plugin_entropy: need n > d samples (n = " + std::to_string(n) +
                                ", d = " + std::to_string(d) + ")");
  }
  const Tensor centered = sub(samples, mean(samples, 0));
  Tensor cov = mul_scalar(matmul(transpose(centered), centered), 1.0 / static_cast<double>(n - 1));
  cov = add(cov, Tensor::from_matrix(eps * Eigen::MatrixXd::Identity(d, d)));
  const double constant = 0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi * std::numbers::e);
  return add_scalar(mul_scalar(logdet_spd(cov), 0.5), constant);
}

EntropyEstimate gaussian_plugin_entropy(const Eigen::MatrixXd& samples, double eps) {
  NoGradGuard guard;
  EntropyEstimate out;
  out.estimator = Estimator::kGaussianPlugin;
  out.n_samples = samples.rows();
  out.value = gaussian_plugin_entropy(Tensor::from_matrix(samples), eps).item();
  return out;
}

// ---------------------------------------------------------------------------

namespace {

template <std::size_t D>
Eigen::VectorXd rtree_kth(const Eigen::MatrixXd& x, Index k) {
  using Point = bg::model::point<double, D, bg::cs::cartesian>;
  std::vector<Point> points(static_cast<std::size_t>(x.rows()));
  for (Index i = 0; i < x.rows(); ++i) {
    Point& p = points[static_cast<std::size_t>(i)];
    [&]<std::size_t... J>(std::index_sequence<J...>) { (bg::set<J>(p, x(i, static_cast<Index>(J))), ...); }
    (std::make_index_sequence<D>{});
  }
  const bgi::rtree<Point, bgi::rstar<16>> tree(points.begin(), points.end());
  Eigen::VectorXd out(x.rows());
  std::vector<Point> hits;
  for (Index i = 0; i < x.rows(); ++i) {
    const Point& q = points[static_cast<std::size_t>(i)];
    hits.clear();
    // k + 1 nearest including the query itself (or one of its duplicates);
    // the k-th other-point distance is the largest of these.
    tree.query(bgi::nearest(q, static_cast<unsigned>(k + 1)), std::back_inserter(hits));
    double worst = 0.0;
    for (const Point& h : hits) worst = std::max(worst, bg::distance(q, h));
    out(i) = worst;
  }
  return out;
}

template <std::size_t... D>
Eigen::VectorXd dispatch_rtree(const Eigen::MatrixXd& x, Index k, std::index_sequence<D...>) {
  Eigen::VectorXd out;
  const Index d = x.cols();
  ((d == static_cast<Index>(D + 1) ? (out = rtree_kth<D + 1>(x, k), true) : false) || ...);
  return out;
}

constexpr Index kMaxTreeDim = 8;

void check_knn_args(const Eigen::MatrixXd& samples, Index k) {
  if (k < 1) throw std::invalid_argument("knn: k must be >= 1");
  if (samples.rows() <= k) {
    throw std::invalid_argument("knn: need more than k = " + std::to_string(k) + " samples, got " +
                                std::to_string(samples.rows()));
  }
  if (samples.cols() < 1) throw std::invalid_argument("knn: samples have no columns");
}

}  // namespace

Eigen::VectorXd kth_neighbor_distances_brute(const Eigen::MatrixXd& samples, Index k) {
  check_knn_args(samples, k);
  const Index n = samples.rows();
  Eigen::VectorXd out(n);
  std::vector<double> dist(static_cast<std::size_t>(n - 1));
  for (Index i = 0; i < n; ++i) {
    std::size_t m = 0;
    for (Index j = 0; j < n; ++j)
      if (j != i) dist[m++] = (samples.row(i) - samples.row(j)).norm();
    std::nth_element(dist.begin(), dist.begin() + (k - 1), dist.end());
    out(i) = dist[static_cast<std::size_t>(k - 1)];
  }
  return out;
}

Eigen::VectorXd kth_neighbor_distances(const Eigen::MatrixXd& samples, Index k) {
  check_knn_args(samples, k);
  if (samples.cols() > kMaxTreeDim || samples.rows() < 64) return kth_neighbor_distances_brute(samples, k);
  return dispatch_rtree(samples, k, std::make_index_sequence<kMaxTreeDim>{});
}

EntropyEstimate knn_entropy(const Eigen::MatrixXd& samples, Index k) {
  const Eigen::VectorXd r = kth_neighbor_distances(samples, k);
  EntropyEstimate out;
  out.estimator = Estimator::kKnn;
  out.n_samples = samples.rows();
  out.k = k;
  if (r.maxCoeff() == 0.0 && (samples.rowwise() - samples.row(0)).cwiseAbs().maxCoeff() == 0.0) {
    out.value = -std::numeric_limits<double>::infinity();
    out.degenerate = true;
    return out;
  }
  const double n = static_cast<double>(samples.rows());
  const double d = static_cast<double>(samples.cols());
  const double log_unit_ball = 0.5 * d * std::log(std::numbers::pi) - std::lgamma(0.5 * d + 1.0);
  double sum_log = 0.0;
  for (double ri : r) sum_log += std::log(std::max(ri, kDistanceFloor));
  out.value = boost::math::digamma(n) - boost::math::digamma(static_cast<double>(k)) + log_unit_ball +
              d / n * sum_log;
  return out;
}

EntropyEstimate estimate(const Eigen::MatrixXd& samples, Estimator e, Index k) {
  return e == Estimator::kKnn ? knn_entropy(samples, k) : gaussian_plugin_entropy(samples);
}

IncrementalEntropy incremental_entropy(const BatchMap& g, const Eigen::MatrixXd& samples, Estimator e, Index k) {
  IncrementalEntropy out;
  out.h_before = estimate(samples, e, k).value;
  out.h_after = estimate(g(samples), e, k).value;
  out.delta = out.h_after - out.h_before;
  return out;
}

double linear_delta_h(const Eigen::MatrixXd& a) { return log_abs_det(a).value; }

DpiResult dpi_check(const BatchMap& f, const JacobianFn& jacobian, const Eigen::MatrixXd& samples,
                    const DpiOptions& options) {
  const Index n = samples.rows(), d = samples.cols();
  if (d > options.jacobian_cap) {
    throw std::invalid_argument("dpi_check: dimension " + std::to_string(d) + " exceeds the Jacobian cap " +
                                std::to_string(options.jacobian_cap));
  }
  const Eigen::MatrixXd mapped = f(samples);
  if (mapped.rows() != n || mapped.cols() != d) {
    throw ShapeError("dpi_check: f must preserve the sample dimension");
  }
  DpiResult out;
  out.h_input = estimate(samples, options.estimator, options.k).value;
  out.lhs = estimate(mapped, options.estimator, options.k).value;

  const Index n_jac = std::min(n, options.max_jacobians);
  std::vector<double> logdets(static_cast<std::size_t>(n_jac));
  for (Index i = 0; i < n_jac; ++i) {
    logdets[static_cast<std::size_t>(i)] = log_abs_det(jacobian(samples.row(i).transpose())).value;
  }
  double total = 0.0;
  for (double v : logdets) total += v;
  out.mean_logdet = total / static_cast<double>(n_jac);
  out.rhs = out.h_input + out.mean_logdet;

  // Standard error of the gap H(f(X)) - H(X) - E[log|det J|] from disjoint
  // subsets of the Jacobian-covered prefix. The estimator variance scales as
  // 1/n, so the spread of subset gaps is divided by sqrt(n_subsets). The kNN
  // estimator is also biased at finite n, differently for X and f(X) when f
  // is nonlinear; how far the mean subset gap drifts from the full-sample gap
  // bounds that bias at the full size.
  const Index b = options.n_subsets;
  const Index m = n_jac / std::max<Index>(b, 1);
  if (b >= 2 && m > options.k + 1 && (options.estimator == Estimator::kKnn || m > d)) {
    std::vector<double> gaps;
    for (Index s = 0; s < b; ++s) {
      double ld = 0.0;
      for (Index i = s * m; i < (s + 1) * m; ++i) ld += logdets[static_cast<std::size_t>(i)];
      gaps.push_back(estimate(mapped.middleRows(s * m, m), options.estimator, options.k).value -
                     estimate(samples.middleRows(s * m, m), options.estimator, options.k).value -
                     ld / static_cast<double>(m));
    }
    double mu = 0.0;
    for (double v : gaps) mu += v;
    mu /= static_cast<double>(b);
    double var = 0.0;
    for (double v : gaps) var += (v - mu) * (v - mu);
    var /= static_cast<double>(b - 1);
    out.standard_error = std::sqrt(var / static_cast<double>(b));
    out.bias_allowance = std::abs(mu - (out.lhs - out.rhs));
  }
  const double rounding = 1e-9 * std::max(1.0, std::abs(out.rhs));
  out.tolerance = 3.0 * out.standard_error + out.bias_allowance + rounding;
  out.satisfied = out.lhs <= out.rhs + out.tolerance;
  return out;
}

}  // namespace iecl::entropy
