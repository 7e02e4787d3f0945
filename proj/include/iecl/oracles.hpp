#pragma once

// Reference computations used to check the main code paths. None of them
// touch the tape or share routines with the code they check: determinants
// come from a hand-rolled full-pivot elimination, singular values from
// one-sided Jacobi rotations, derivatives from central differences.

#include "iecl/rng.hpp"

#include <Eigen/Dense>

#include <functional>
#include <span>
#include <vector>

namespace iecl::verify {

struct DiscreteJoint {
  Eigen::MatrixXd p;  // K x K, entries >= 0, sum 1
};
// Throws std::invalid_argument on negative entries, a non-square matrix or a
// total mass off 1 by more than 1e-9.
void validate(const DiscreteJoint& j);

// sum_ij p_ij log(p_ij / (p_i. p_.j)) with 0 log 0 = 0.
double brute_force_mi(const DiscreteJoint& j);
// Shannon entropy (nats) of a probability vector.
double discrete_entropy(const Eigen::VectorXd& p);

// Central differences of f over the given coordinates of x, which is
// perturbed in place and restored. h = rel_h * max(1, |x_i|).
std::vector<double> central_differences(const std::function<double()>& f, std::span<double> x,
                                        std::span<const std::size_t> coords, double rel_h = 1e-5);

// Central-difference Jacobian, column j = d f / d x_j.
Eigen::MatrixXd numeric_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                                 const Eigen::VectorXd& x, double h = 1e-5, Eigen::Index cap = 256);

struct MonteCarloEstimate {
  double mean = 0.0;
  double stderr_ = 0.0;
};

// mean of log p(x) - log q(x) over n draws x ~ p.
MonteCarloEstimate mc_kl(const std::function<Eigen::VectorXd(Rng&)>& sample_p,
                         const std::function<double(const Eigen::VectorXd&)>& log_p,
                         const std::function<double(const Eigen::VectorXd&)>& log_q, Eigen::Index n, Rng& rng);

// log N(x; mu, var * I)
double isotropic_gaussian_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mu, double var);

// Top singular value by power iteration on W^T W, stopped once the residual
// ||W^T W v - lambda v|| falls below tol (or after max_iters).
double power_iter_oracle(const Eigen::MatrixXd& w, double tol = 1e-10, int max_iters = 1000000);

struct EliminationLogDet {
  double value = 0.0;
  bool singular = false;
};
// Gaussian elimination with complete pivoting.
EliminationLogDet elimination_log_abs_det(Eigen::MatrixXd a);

// Singular values (descending) by one-sided Jacobi rotations.
Eigen::VectorXd jacobi_singular_values(Eigen::MatrixXd a, double tol = 1e-15, int max_sweeps = 100);

}  // namespace iecl::verify
