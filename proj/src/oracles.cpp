#include "iecl/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace iecl::verify {

void validate(const DiscreteJoint& j) {
  if (j.p.rows() == 0 || j.p.rows() != j.p.cols()) throw std::invalid_argument("joint must be a non-empty square matrix");
  if ((j.p.array() < 0.0).any() || !j.p.allFinite()) throw std::invalid_argument("joint has negative or non-finite entries");
  if (std::abs(j.p.sum() - 1.0) > 1e-9) throw std::invalid_argument("joint does not sum to 1");
}

double brute_force_mi(const DiscreteJoint& j) {
  validate(j);
  const Eigen::VectorXd row = j.p.rowwise().sum();
  const Eigen::RowVectorXd col = j.p.colwise().sum();
  double mi = 0.0;
  for (Eigen::Index a = 0; a < j.p.rows(); ++a)
    for (Eigen::Index b = 0; b < j.p.cols(); ++b) {
      const double pab = j.p(a, b);
      if (pab > 0.0) mi += pab * std::log(pab / (row(a) * col(b)));
    }
  return std::max(mi, 0.0);
}

double discrete_entropy(const Eigen::VectorXd& p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

std::vector<double> central_differences(const std::function<double()>& f, std::span<double> x,
                                        std::span<const std::size_t> coords, double rel_h) {
  std::vector<double> g;
  g.reserve(coords.size());
  for (std::size_t i : coords) {
    const double xi = x[i];
    const double h = rel_h * std::max(1.0, std::abs(xi));
    x[i] = xi + h;
    const double fp = f();
    x[i] = xi - h;
    const double fm = f();
    x[i] = xi;
    g.push_back((fp - fm) / (2.0 * h));
  }
  return g;
}

Eigen::MatrixXd numeric_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                                 const Eigen::VectorXd& x, double h, Eigen::Index cap) {
  if (x.size() > cap) {
    throw std::invalid_argument("numeric_jacobian: dimension " + std::to_string(x.size()) + " exceeds cap " +
                                std::to_string(cap));
  }
  Eigen::VectorXd xp = x;
  Eigen::MatrixXd jac;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    xp(j) = x(j) + h;
    const Eigen::VectorXd fp = f(xp);
    xp(j) = x(j) - h;
    const Eigen::VectorXd fm = f(xp);
    xp(j) = x(j);
    if (j == 0) jac.resize(fp.size(), x.size());
    jac.col(j) = (fp - fm) / (2.0 * h);
  }
  return jac;
}

MonteCarloEstimate mc_kl(const std::function<Eigen::VectorXd(Rng&)>& sample_p,
                         const std::function<double(const Eigen::VectorXd&)>& log_p,
                         const std::function<double(const Eigen::VectorXd&)>& log_q, Eigen::Index n, Rng& rng) {
  if (n < 2) throw std::invalid_argument("mc_kl: need at least 2 draws");
  // Welford running moments.
  double mean = 0.0, m2 = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::VectorXd x = sample_p(rng);
    const double v = log_p(x) - log_q(x);
    const double delta = v - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (v - mean);
  }
  const double var = m2 / static_cast<double>(n - 1);
  return {mean, std::sqrt(var / static_cast<double>(n))};
}

double isotropic_gaussian_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mu, double var) {
  const double d = static_cast<double>(x.size());
  return -0.5 * d * std::log(2.0 * std::numbers::pi * var) - 0.5 * (x - mu).squaredNorm() / var;
}

double power_iter_oracle(const Eigen::MatrixXd& w, double tol, int max_iters) {
  if (w.size() == 0) return 0.0;
  const Eigen::MatrixXd g = w.transpose() * w;
  // Deterministic start with all coordinates active.
  Eigen::VectorXd v(g.cols());
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = 1.0 + 0.1 * static_cast<double>(i);
  v.normalize();
  double lambda = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    const Eigen::VectorXd gv = g * v;
    lambda = v.dot(gv);
    const double norm = gv.norm();
    if (norm == 0.0) return 0.0;
    if ((gv - lambda * v).norm() < tol * std::max(1.0, lambda)) break;
    v = gv / norm;
  }
  return std::sqrt(std::max(lambda, 0.0));
}

EliminationLogDet elimination_log_abs_det(Eigen::MatrixXd a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("elimination_log_abs_det: matrix must be square");
  const Eigen::Index n = a.rows();
  EliminationLogDet out;
  for (Eigen::Index k = 0; k < n; ++k) {
    Eigen::Index pr = k, pc = k;
    double best = 0.0;
    for (Eigen::Index i = k; i < n; ++i)
      for (Eigen::Index j = k; j < n; ++j)
        if (std::abs(a(i, j)) > best) {
          best = std::abs(a(i, j));
          pr = i;
          pc = j;
        }
    if (best == 0.0) {
      out.value = -std::numeric_limits<double>::infinity();
      out.singular = true;
      return out;
    }
    if (pr != k)
      for (Eigen::Index j = 0; j < n; ++j) std::swap(a(k, j), a(pr, j));
    if (pc != k)
      for (Eigen::Index i = 0; i < n; ++i) std::swap(a(i, k), a(i, pc));
    out.value += std::log(best);
    for (Eigen::Index i = k + 1; i < n; ++i) {
      const double factor = a(i, k) / a(k, k);
      for (Eigen::Index j = k + 1; j < n; ++j) a(i, j) -= factor * a(k, j);
      a(i, k) = 0.0;
    }
  }
  return out;
}

Eigen::VectorXd jacobi_singular_values(Eigen::MatrixXd a, double tol, int max_sweeps) {
  const Eigen::Index n = a.cols();
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (Eigen::Index p = 0; p + 1 < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (Eigen::Index i = 0; i < a.rows(); ++i) {
          alpha += a(i, p) * a(i, p);
          beta += a(i, q) * a(i, q);
          gamma += a(i, p) * a(i, q);
        }
        if (std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (Eigen::Index i = 0; i < a.rows(); ++i) {
          const double ap = a(i, p), aq = a(i, q);
          a(i, p) = c * ap - s * aq;
          a(i, q) = s * ap + c * aq;
        }
      }
    if (!rotated) break;
  }
  Eigen::VectorXd sv(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) s += a(i, j) * a(i, j);
    sv(j) = std::sqrt(s);
  }
  std::sort(sv.begin(), sv.end(), std::greater<>());
  return sv;
}

}  // namespace iecl::verify
