#include "doctest.h"

#include "iecl/linalg.hpp"
#include "iecl/verify.hpp"

#include <cmath>

using namespace iecl;
using namespace iecl::verify;
using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST_CASE("power iteration oracle: diagonal, orthogonal and constructed spectra") {
  MatrixXd d = MatrixXd::Zero(2, 2);
  d(0, 0) = 3.0;
  d(1, 1) = 1.0;
  CHECK(power_iter_oracle(d) == doctest::Approx(3.0).epsilon(1e-12));

  Rng rng(4);
  CHECK(power_iter_oracle(random_orthogonal(5, rng)) == doctest::Approx(1.0).epsilon(1e-9));

  const MatrixXd q1 = random_orthogonal(3, rng), q2 = random_orthogonal(3, rng);
  const MatrixXd w = q1 * Eigen::Vector3d(5, 2, 1).asDiagonal() * q2.transpose();
  CHECK(std::abs(power_iter_oracle(w) - 5.0) <= 1e-8);
}

TEST_CASE("jacobi singular values agree with a library SVD") {
  Rng rng(5);
  for (int i = 0; i < 5; ++i) {
    const MatrixXd a = gaussian_matrix(6, 4, rng);
    const VectorXd ours = jacobi_singular_values(a);
    const VectorXd ref = Eigen::JacobiSVD<MatrixXd>(a).singularValues();
    REQUIRE(ours.size() == ref.size());
    CHECK((ours - ref).cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("elimination log-determinant") {
  MatrixXd a = MatrixXd::Zero(2, 2);
  a(0, 0) = 2.0;
  a(1, 1) = -3.0;
  CHECK(elimination_log_abs_det(a).value == doctest::Approx(std::log(6.0)));
  MatrixXd perm = MatrixXd::Zero(3, 3);
  perm(0, 2) = perm(1, 0) = perm(2, 1) = 1.0;
  CHECK(elimination_log_abs_det(perm).value == 0.0);
  MatrixXd singular = MatrixXd::Ones(3, 3);
  const auto s = elimination_log_abs_det(singular);
  CHECK(s.singular);
  CHECK(std::isinf(s.value));

  Rng rng(6);
  const MatrixXd g = gaussian_matrix(7, 7, rng);
  CHECK(elimination_log_abs_det(g).value == doctest::Approx(std::log(std::abs(g.determinant()))).epsilon(1e-12));
}

TEST_CASE("brute-force mutual information") {
  const DiscreteJoint independent{MatrixXd::Constant(4, 4, 1.0 / 16.0)};
  CHECK(std::abs(brute_force_mi(independent)) <= 1e-15);

  MatrixXd perm = MatrixXd::Zero(4, 4);
  for (int i = 0; i < 4; ++i) perm(i, (i + 1) % 4) = 0.25;
  CHECK(brute_force_mi({perm}) == doctest::Approx(std::log(4.0)).epsilon(1e-14));

  Rng rng(7);
  for (int t = 0; t < 20; ++t) {
    MatrixXd p(5, 5);
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = rng.uniform() * (rng.bernoulli(0.3) ? 0.0 : 1.0);
    p(0, 0) += 0.1;
    p /= p.sum();
    const double mi = brute_force_mi({p});
    const double h_rows = discrete_entropy(p.rowwise().sum());
    const double h_cols = discrete_entropy(p.colwise().sum().transpose());
    CHECK(mi >= -1e-15);
    CHECK(mi <= std::min(h_rows, h_cols) + 1e-12);
  }

  MatrixXd bad = MatrixXd::Constant(2, 2, 0.25);
  bad(0, 0) = -0.25;
  bad(0, 1) = 0.75;
  CHECK_THROWS_AS(brute_force_mi({bad}), std::invalid_argument);
  CHECK_THROWS_AS(brute_force_mi({MatrixXd::Constant(2, 2, 0.3)}), std::invalid_argument);
  CHECK_THROWS_AS(brute_force_mi({MatrixXd::Constant(2, 3, 1.0 / 6.0)}), std::invalid_argument);
}

TEST_CASE("monte carlo KL: identical and shifted isotropic Gaussians") {
  const VectorXd zero = VectorXd::Zero(2), shift = VectorXd::Constant(2, 1.0);
  const auto sampler = [](const VectorXd& mu) {
    return [mu](Rng& r) {
      VectorXd x(mu.size());
      for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = mu(i) + r.normal();
      return x;
    };
  };
  const auto logpdf = [](const VectorXd& mu) {
    return [mu](const VectorXd& x) { return isotropic_gaussian_logpdf(x, mu, 1.0); };
  };
  Rng rng(8);
  const auto same = mc_kl(sampler(zero), logpdf(zero), logpdf(zero), 1000, rng);
  CHECK(same.mean == 0.0);
  const auto shifted = mc_kl(sampler(shift), logpdf(shift), logpdf(zero), 200000, rng);
  CHECK(std::abs(shifted.mean - 1.0) <= 3.0 * shifted.stderr_ + 1e-12);
  CHECK(shifted.stderr_ > 0.0);

  CHECK(isotropic_gaussian_logpdf(zero, zero, 1.0) == doctest::Approx(-std::log(2.0 * M_PI)));
}

TEST_CASE("numeric jacobian: identity, linear map, cap") {
  const VectorXd x = VectorXd::LinSpaced(4, -2.0, 3.0);
  CHECK((numeric_jacobian([](const VectorXd& v) { return v; }, x) - MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() <=
        1e-10);
  Rng rng(9);
  const MatrixXd a = gaussian_matrix(3, 4, rng);
  CHECK((numeric_jacobian([&](const VectorXd& v) -> VectorXd { return a * v; }, x) - a).cwiseAbs().maxCoeff() <= 1e-8);
  CHECK_THROWS(numeric_jacobian([](const VectorXd& v) { return v; }, VectorXd::Zero(300)));
}

TEST_CASE("central differences restore the perturbed coordinates") {
  std::vector<double> x{1.0, -2.0, 0.5};
  const auto f = [&] { return x[0] * x[0] + 3.0 * x[1] + std::sin(x[2]); };
  const std::size_t coords[] = {0, 1, 2};
  const auto g = central_differences(f, x, coords);
  CHECK(g[0] == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(g[1] == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(g[2] == doctest::Approx(std::cos(0.5)).epsilon(1e-9));
  CHECK(x == std::vector<double>{1.0, -2.0, 0.5});
}

TEST_CASE("dv bound: deterministic coupling approaches log N from below; independent stays near zero") {
  MatrixXd perm = MatrixXd::Zero(4, 4);
  for (int i = 0; i < 4; ++i) perm((i + 1) % 4, i) = 1.0;
  Rng rng(10);
  const auto det = check_dv_bound("det", {perm / 4.0}, MatrixXd::Identity(4, 4), perm.transpose(), 0.05, 4, 400, rng);
  CHECK(det.pass);
  CHECK(det.measured[0] <= std::log(4.0));
  CHECK(det.measured[0] > 0.5);  // sharp critic, few collisions

  const auto ind = check_dv_bound("ind", {MatrixXd::Constant(4, 4, 1.0 / 16.0)}, gaussian_matrix(4, 8, rng),
                                  gaussian_matrix(4, 8, rng), 0.2, 16, 400, rng);
  CHECK(ind.pass);
  CHECK(ind.measured[0] <= 3.0 * ind.measured[1]);
}

TEST_CASE("run_verify: suite selection, report-only checks, JSON shape, determinism") {
  CHECK_THROWS_AS(run_verify("nope", {}), std::invalid_argument);

  const auto a = run_verify("dv-bound", {7, 0});
  const auto b = run_verify("dv-bound", {7, 0});
  CHECK(to_json(a).dump() == to_json(b).dump());
  CHECK(to_json(a).dump() != to_json(run_verify("dv-bound", {8, 0})).dump());
  CHECK(all_hard_pass(a));

  const auto j = to_json(a.front());
  for (const char* key : {"name", "measured", "reference", "tolerance", "pass", "notes"}) CHECK(j.contains(key));

  std::vector<OracleReport> reports(2);
  reports[0].pass = true;
  reports[1].pass = false;
  reports[1].hard = false;
  CHECK(all_hard_pass(reports));
  reports[1].hard = true;
  CHECK_FALSE(all_hard_pass(reports));
  CHECK(format_table(reports).find("FAIL") != std::string::npos);
}

TEST_CASE("expansion-stats is report-only with fraction in [0, 1]") {
  const auto r = run_verify("expansion-stats", {42, 10});
  REQUIRE(r.size() == 2);
  CHECK_FALSE(r[0].hard);
  CHECK(r[0].measured[0] >= 0.0);
  CHECK(r[0].measured[0] <= 1.0);
  CHECK(r[1].hard);
  CHECK(r[1].pass);
}
