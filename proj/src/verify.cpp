#include "iecl/verify.hpp"

#include "iecl/entropy.hpp"
#include "iecl/linalg.hpp"
#include "iecl/losses.hpp"
#include "iecl/saib.hpp"
#include "iecl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>

namespace iecl::verify {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

std::string hex_digest(const std::string& description) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(description)));
  return buf;
}

OracleReport make_report(std::string name, const std::string& inputs, std::vector<double> measured,
                         std::vector<double> reference, double tolerance, bool pass, std::string notes = {}) {
  OracleReport r;
  r.name = std::move(name);
  r.inputs_digest = hex_digest(r.name + "|" + inputs);
  r.measured = std::move(measured);
  r.reference = std::move(reference);
  r.tolerance = tolerance;
  r.pass = pass;
  r.notes = std::move(notes);
  return r;
}

Rng check_rng(const VerifyOptions& opts, std::string_view check) { return Rng(opts.seed).derive(check); }

Index sample_size(const VerifyOptions& opts, Index fallback) { return opts.n > 0 ? opts.n : fallback; }

std::string case_name(const std::string& prefix, int i) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "%02d", i);
  return prefix + "/case-" + buf;
}

// Relative error with a 1e-4 floor on the denominator.
constexpr double kRelFloor = 1e-4;
double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), kRelFloor}); }

// ---------------------------------------------------------------------------
// gradients

struct Coordinate {
  Tensor tensor;
  std::size_t index;
};

// Worst relative error between the recorded gradient and central
// differences of f over the given coordinates.
double worst_gradient_error(const std::function<double()>& f, const std::vector<Coordinate>& coords) {
  NoGradGuard no_grad;
  double worst = 0.0;
  for (const auto& c : coords) {
    Tensor t = c.tensor;
    const double analytic = t.has_grad() ? t.grad()[c.index] : 0.0;
    const std::size_t idx[] = {c.index};
    const double numeric = central_differences(f, t.mutable_data(), idx)[0];
    worst = std::max(worst, rel_err(analytic, numeric));
  }
  return worst;
}

std::vector<Coordinate> all_coordinates(const Tensor& t) {
  std::vector<Coordinate> out;
  for (std::size_t i = 0; i < static_cast<std::size_t>(t.numel()); ++i) out.push_back({t, i});
  return out;
}

// `count` distinct flat coordinates drawn uniformly from a parameter group.
std::vector<Coordinate> sample_coordinates(const std::vector<nn::Param>& group, Index count, Rng& rng) {
  Index total = 0;
  for (const auto& p : group) total += p.value.numel();
  std::vector<Index> flat(static_cast<std::size_t>(total));
  std::iota(flat.begin(), flat.end(), Index{0});
  count = std::min(count, total);
  for (Index i = 0; i < count; ++i) {
    const auto j = i + static_cast<Index>(rng.below(static_cast<std::uint64_t>(total - i)));
    std::swap(flat[static_cast<std::size_t>(i)], flat[static_cast<std::size_t>(j)]);
  }
  std::vector<Coordinate> out;
  for (Index i = 0; i < count; ++i) {
    Index k = flat[static_cast<std::size_t>(i)];
    for (const auto& p : group) {
      if (k < p.value.numel()) {
        out.push_back({p.value, static_cast<std::size_t>(k)});
        break;
      }
      k -= p.value.numel();
    }
  }
  return out;
}

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad) {
  std::vector<double> d(static_cast<std::size_t>(numel(shape)));
  for (double& v : d) v = rng.normal();
  return Tensor(std::move(shape), std::move(d), requires_grad);
}

// The full objective as a pure function of the trainable parameters: state
// frozen, fixed views, stop-gradient inputs held at their base values.
struct ObjectiveFixture {
  IeclConfig cfg;
  std::unique_ptr<IeclModel> model;
  Tensor xa, xq;
  DetachedInputs fixed;

  ObjectiveFixture(IeclConfig c, Index batch, Rng& rng) : cfg(std::move(c)) {
    Rng model_rng = rng.derive("model");
    model = std::make_unique<IeclModel>(cfg, model_rng);
    Rng data_rng = rng.derive("data");
    const data::SyntheticDataset ds(cfg.data, data_rng);
    std::vector<Index> idx(static_cast<std::size_t>(batch));
    for (Index i = 0; i < batch; ++i) idx[static_cast<std::size_t>(i)] = (i * 37) % ds.size();
    const Tensor x = ds.batch(idx);
    Rng ra = rng.derive("view-a"), rq = rng.derive("view-q");
    xa = data::augment(x, cfg.augment, ra);
    xq = data::augment(x, cfg.augment, rq);
    model->set_state_frozen(true);
    NoGradGuard no_grad;
    fixed = compute_objective(*model, xa, xq, cfg).detached;
  }

  double value() { return compute_objective(*model, xa, xq, cfg, &fixed).loss.total.item(); }

  void record_gradients() {
    for (const auto& p : model->trainable()) {
      Tensor t = p.value;
      t.clear_grad();
    }
    TapeScope scope;
    backward(compute_objective(*model, xa, xq, cfg, &fixed).loss.total);
  }
};

IeclConfig gradient_check_config() {
  IeclConfig cfg = preset("desk");
  cfg.encoder.activation = nn::Activation::kSwish;
  cfg.encoder.projector_out = 4;
  cfg.data.n_per_class = 8;
  return cfg;
}

}  // namespace

std::vector<OracleReport> gradients_suite(const VerifyOptions& opts) {
  std::vector<OracleReport> out;
  Rng rng = check_rng(opts, "gradients");

  {
    Tensor x = random_tensor({20}, rng, true);
    {
      TapeScope scope;
      backward(sum(square(x)));
    }
    const double err = worst_gradient_error([&] { return sum(square(x)).item(); }, all_coordinates(x));
    out.push_back(make_report("gradients/quadratic", "x:20", {err}, {0.0}, 1e-9, err <= 1e-9,
                              "max relative error, denominator floor 1e-4"));
  }
  {
    Tensor x = random_tensor({12, 3}, rng, true);
    {
      TapeScope scope;
      backward(entropy::gaussian_plugin_entropy(x));
    }
    const double err =
        worst_gradient_error([&] { return entropy::gaussian_plugin_entropy(x).item(); }, all_coordinates(x));
    out.push_back(make_report("gradients/plugin-entropy", "x:12x3", {err}, {0.0}, 1e-5, err <= 1e-5));
  }
  {
    Tensor a = random_tensor({6, 5}, rng, true), b = random_tensor({6, 5}, rng, true);
    {
      TapeScope scope;
      backward(losses::info_nce(a, b, 0.2));
    }
    auto coords = all_coordinates(a);
    for (auto& c : all_coordinates(b)) coords.push_back(c);
    const double err = worst_gradient_error([&] { return losses::info_nce(a, b, 0.2).item(); }, coords);
    out.push_back(make_report("gradients/info-nce", "a,b:6x5 tau:0.2", {err}, {0.0}, 1e-5, err <= 1e-5));
  }
  {
    Tensor p = random_tensor({7, 3}, rng, true), q = random_tensor({7, 3}, rng, true);
    const auto kl = [&] { return losses::gaussian_kl(losses::fit_moments(p), losses::fit_moments(q)); };
    {
      TapeScope scope;
      backward(kl());
    }
    auto coords = all_coordinates(p);
    for (auto& c : all_coordinates(q)) coords.push_back(c);
    const double err = worst_gradient_error([&] { return kl().item(); }, coords);
    out.push_back(make_report("gradients/gaussian-kl", "p,q:7x3", {err}, {0.0}, 1e-5, err <= 1e-5));
  }
  {
    // Two-sample batch: the plug-in entropy then needs a 1-d projection.
    IeclConfig cfg = gradient_check_config();
    cfg.encoder.projector_out = 1;
    Rng fr = rng.derive("objective-2");
    ObjectiveFixture fx(cfg, 2, fr);
    fx.record_gradients();
    Rng pick = rng.derive("objective-2-coords");
    const auto coords = sample_coordinates(fx.model->trainable(), 20, pick);
    const double err = worst_gradient_error([&] { return fx.value(); }, coords);
    out.push_back(make_report("gradients/objective-2-sample", "batch:2 projector_out:1 coords:20", {err}, {0.0}, 1e-5,
                              err <= 1e-5));
  }
  {
    Rng fr = rng.derive("objective");
    ObjectiveFixture fx(gradient_check_config(), 8, fr);
    fx.record_gradients();
    std::map<std::string, std::vector<nn::Param>> groups;
    for (const auto& p : fx.model->trainable()) {
      const std::string& n = p.name;
      if (n.rfind("q.conv", 0) == 0) groups["encoder"].push_back(p);
      else if (n.rfind("q.fc", 0) == 0) groups["projector"].push_back(p);
      else if (n.rfind("saib.pos.", 0) == 0) groups["positional"].push_back(p);
      else groups["saib"].push_back(p);
    }
    for (const char* g : {"encoder", "projector", "saib", "positional"}) {
      Rng pick = rng.derive(std::string("coords-") + g);
      const auto coords = sample_coordinates(groups[g], 12, pick);
      const double err = worst_gradient_error([&] { return fx.value(); }, coords);
      out.push_back(make_report(std::string("gradients/objective/") + g, "batch:8 projector_out:4 coords:12", {err},
                                {0.0}, 1e-5, err <= 1e-5 && coords.size() >= 10,
                                std::to_string(coords.size()) + " coordinates"));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// jacobian

namespace {

VectorXd flat(const Tensor& t) { return Eigen::Map<const VectorXd>(t.data().data(), t.numel()); }

// Eval-mode SAIB as a plain vector map.
std::function<VectorXd(const VectorXd&)> saib_map(saib::SaibBlock& block) {
  return [&block](const VectorXd& v) {
    NoGradGuard no_grad;
    const auto& c = block.config();
    const Tensor x({1, c.channels, c.height, c.width}, std::vector<double>(v.data(), v.data() + v.size()));
    return flat(block.forward(x));
  };
}

// Kaiming-init block whose BN running statistics come from a few train-mode
// passes, so eval mode is not the trivial affine map.
std::unique_ptr<saib::SaibBlock> warmed_block(const saib::SaibConfig& cfg, Rng& rng) {
  auto block = std::make_unique<saib::SaibBlock>(cfg, rng);
  NoGradGuard no_grad;
  for (int i = 0; i < 3; ++i) block->forward(random_tensor({4, cfg.channels, cfg.height, cfg.width}, rng, false));
  block->set_mode(nn::Mode::kEval);
  return block;
}

}  // namespace

std::vector<OracleReport> jacobian_suite(const VerifyOptions& opts) {
  std::vector<OracleReport> out;
  Rng rng = check_rng(opts, "jacobian");

  {
    const VectorXd x = VectorXd::LinSpaced(5, -1.0, 1.0);
    const MatrixXd j = numeric_jacobian([](const VectorXd& v) { return v; }, x);
    const double err = (j - MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff();
    out.push_back(make_report("jacobian/fd-identity", "d:5", {err}, {0.0}, 1e-10, err <= 1e-10));
    const MatrixXd a = gaussian_matrix(4, 5, rng);
    const MatrixXd ja = numeric_jacobian([&](const VectorXd& v) -> VectorXd { return a * v; }, x);
    const double err_a = (ja - a).cwiseAbs().maxCoeff();
    out.push_back(make_report("jacobian/fd-linear", "A:4x5", {err_a}, {0.0}, 1e-8, err_a <= 1e-8));
  }

  // Autodiff Jacobian of the block against central differences at D = 192.
  for (int i = 0; i < 20; ++i) {
    Rng r = rng.derive(case_name("saib", i));
    saib::SaibConfig cfg;
    auto block = warmed_block(cfg, r);
    const Tensor x = random_tensor({cfg.channels, cfg.height, cfg.width}, r, false);
    const MatrixXd j_auto = saib::jacobian(*block, x);
    const MatrixXd j_fd = numeric_jacobian(saib_map(*block), flat(x), 1e-5, 256);
    const double err = (j_auto - j_fd).cwiseAbs().maxCoeff();
    out.push_back(make_report(case_name("jacobian/saib-autodiff-vs-fd", i), "D:192 seed-case", {err}, {0.0}, 1e-5,
                              err <= 1e-5, "max-abs difference, D = 192"));
  }

  // log|det J| at D = 16 against the elimination and Jacobi-SVD oracles.
  for (int i = 0; i < 10; ++i) {
    Rng r = rng.derive(case_name("logdet", i));
    saib::SaibConfig cfg;
    cfg.channels = 1;
    cfg.height = 4;
    cfg.width = 4;
    auto block = warmed_block(cfg, r);
    const MatrixXd j = saib::jacobian(*block, random_tensor({1, 4, 4}, r, false));
    const double lu = saib::log_abs_det(j).value;
    const auto elim = elimination_log_abs_det(j);
    const double rel = std::abs(lu - elim.value) / std::max(std::abs(elim.value), 1e-300);
    const double exact_zero = lu == 0.0 && elim.value == 0.0 ? 0.0 : rel;
    out.push_back(make_report(case_name("jacobian/logdet-vs-elimination", i), "D:16", {lu}, {elim.value}, 1e-8,
                              !elim.singular && exact_zero <= 1e-8, "relative tolerance"));
    const VectorXd sv = jacobi_singular_values(j);
    const double svd_logdet = sv.array().log().sum();
    out.push_back(make_report(case_name("jacobian/logdet-vs-jacobi-svd", i), "D:16", {lu}, {svd_logdet}, 1e-6,
                              std::abs(lu - svd_logdet) <= 1e-6));
  }
  return out;
}

// ---------------------------------------------------------------------------
// entropy-law

namespace {

// kNN estimate of H(XA^T) - H(X) against log|det A| from elimination.
struct LinearCase {
  double measured;
  double reference;
};

LinearCase linear_case(const MatrixXd& a, Index n, Rng& rng) {
  const MatrixXd x = gaussian_matrix(n, a.cols(), rng);
  const auto inc = entropy::incremental_entropy([&](const MatrixXd& m) -> MatrixXd { return m * a.transpose(); }, x,
                                                entropy::Estimator::kKnn);
  return {inc.delta, elimination_log_abs_det(a).value};
}

}  // namespace

std::vector<OracleReport> entropy_law_suite(const VerifyOptions& opts) {
  std::vector<OracleReport> out;
  Rng rng = check_rng(opts, "entropy-law");
  const Index n = sample_size(opts, 50000);

  int within = 0;
  for (int i = 0; i < 50; ++i) {
    Rng r = rng.derive(case_name("linear", i));
    const Index d = 2 + i % 3;
    const MatrixXd a = random_well_conditioned(d, 20.0, r);
    const auto c = linear_case(a, n, r);
    const bool ok = std::abs(c.measured - c.reference) <= 0.1;
    within += ok ? 1 : 0;
    auto rep = make_report(case_name("entropy-law/linear", i), "d:" + std::to_string(d) + " n:" + std::to_string(n),
                           {c.measured}, {c.reference}, 0.1, ok, "counted by entropy-law/linear");
    rep.hard = false;
    out.push_back(rep);
  }
  out.push_back(make_report("entropy-law/linear", "cases:50 n:" + std::to_string(n), {static_cast<double>(within)},
                            {48.0}, 0.0, within >= 48, "cases within 0.1 nats (need >= 48 of 50)"));

  int null_within = 0;
  for (int i = 0; i < 20; ++i) {
    Rng r = rng.derive(case_name("isometry", i));
    const Index d = 2 + i % 3;
    const auto c = linear_case(random_orthogonal(d, r), n, r);
    const bool ok = std::abs(c.measured) <= 0.05;
    null_within += ok ? 1 : 0;
    auto rep = make_report(case_name("entropy-law/isometry", i), "d:" + std::to_string(d) + " n:" + std::to_string(n),
                           {c.measured}, {0.0}, 0.05, ok, "counted by entropy-law/isometry");
    rep.hard = false;
    out.push_back(rep);
  }
  out.push_back(make_report("entropy-law/isometry", "cases:20 n:" + std::to_string(n),
                            {static_cast<double>(null_within)}, {19.0}, 0.0, null_within >= 19,
                            "cases within 0.05 nats (need >= 19 of 20)"));
  return out;
}

// ---------------------------------------------------------------------------
// dv-bound

OracleReport check_dv_bound(const std::string& name, const DiscreteJoint& joint, const MatrixXd& emb_a,
                            const MatrixXd& emb_b, double tau, Index batch, Index n_batches, Rng& rng) {
  validate(joint);
  const Index k = joint.p.rows();
  if (emb_a.rows() != k || emb_b.rows() != k || emb_a.cols() != emb_b.cols()) {
    throw std::invalid_argument("check_dv_bound: embeddings must have one row per symbol and equal width");
  }
  std::vector<double> cdf;
  double acc = 0.0;
  for (Index i = 0; i < k; ++i)
    for (Index j = 0; j < k; ++j) cdf.push_back(acc += joint.p(i, j));

  const double exact = brute_force_mi(joint);
  const double log_n = std::log(static_cast<double>(batch));
  double mean = 0.0, m2 = 0.0;
  NoGradGuard no_grad;
  for (Index b = 0; b < n_batches; ++b) {
    MatrixXd za(batch, emb_a.cols()), zb(batch, emb_b.cols());
    for (Index s = 0; s < batch; ++s) {
      const double u = rng.uniform() * acc;
      const auto cell = static_cast<Index>(std::min<std::ptrdiff_t>(
          std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin(), static_cast<std::ptrdiff_t>(cdf.size() - 1)));
      za.row(s) = emb_a.row(cell / k);
      zb.row(s) = emb_b.row(cell % k);
    }
    const double bound = log_n - losses::info_nce(Tensor::from_matrix(za), Tensor::from_matrix(zb), tau).item();
    const double delta = bound - mean;
    mean += delta / static_cast<double>(b + 1);
    m2 += delta * (bound - mean);
  }
  const double se = n_batches > 1 ? std::sqrt(m2 / static_cast<double>(n_batches - 1) / static_cast<double>(n_batches))
                                  : 0.0;
  std::ostringstream inputs;
  inputs.precision(17);
  inputs << "K:" << k << " tau:" << tau << " N:" << batch << " batches:" << n_batches << " p:" << joint.p.sum();
  return make_report(name, inputs.str(), {mean, se}, {exact}, 3.0 * se, exact >= mean - 3.0 * se,
                     "measured = [log N - mean InfoNCE, SE]; one-sided: I >= bound - 3 SE");
}

std::vector<OracleReport> dv_bound_suite(const VerifyOptions& opts) {
  std::vector<OracleReport> out;
  Rng rng = check_rng(opts, "dv-bound");
  const Index n_batches = sample_size(opts, 400);
  const double taus[] = {0.1, 0.2, 1.0};

  for (int i = 0; i < 10; ++i) {
    Rng r = rng.derive(case_name("random", i));
    const Index k = 4 + i % 5;
    DiscreteJoint j{MatrixXd(k, k)};
    for (Index a = 0; a < k; ++a)
      for (Index b = 0; b < k; ++b) j.p(a, b) = std::exp(2.0 * r.normal());
    j.p /= j.p.sum();
    const MatrixXd ea = gaussian_matrix(k, 8, r), eb = gaussian_matrix(k, 8, r);
    out.push_back(check_dv_bound(case_name("dv-bound/random", i), j, ea, eb, taus[i % 3], 16, n_batches, r));
  }

  MatrixXd perm = MatrixXd::Zero(4, 4);
  for (Index i = 0; i < 4; ++i) perm((i + 1) % 4, i) = 1.0;
  {
    Rng r = rng.derive("deterministic");
    // z+ = perm(z) and the embeddings follow the coupling, so positives match.
    const DiscreteJoint j{perm / 4.0};
    out.push_back(check_dv_bound("dv-bound/deterministic-one-hot", j, MatrixXd::Identity(4, 4), perm.transpose(), 0.2,
                                 4, n_batches, r));
  }
  {
    Rng r = rng.derive("independent");
    const DiscreteJoint j{MatrixXd::Constant(4, 4, 1.0 / 16.0)};
    out.push_back(check_dv_bound("dv-bound/independent", j, gaussian_matrix(4, 8, r), gaussian_matrix(4, 8, r), 0.2,
                                 16, n_batches, r));
  }
  {
    Rng r = rng.derive("adversarial");
    const DiscreteJoint j{perm / 4.0};
    out.push_back(check_dv_bound("dv-bound/adversarial-embeddings", j, gaussian_matrix(4, 3, r),
                                 gaussian_matrix(4, 3, r), 0.1, 8, n_batches, r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// kl

namespace {

losses::GaussianMoments moments(const VectorXd& mu, double sigma2) {
  return {Tensor::from_vector(mu), Tensor::scalar(sigma2), false};
}

MonteCarloEstimate mc_isotropic(const VectorXd& mu_p, double s_p, const VectorXd& mu_q, double s_q, Index n,
                                Rng& rng) {
  const double sd = std::sqrt(s_p);
  return mc_kl(
      [&](Rng& r) {
        VectorXd x(mu_p.size());
        for (Index i = 0; i < x.size(); ++i) x(i) = mu_p(i) + sd * r.normal();
        return x;
      },
      [&](const VectorXd& x) { return isotropic_gaussian_logpdf(x, mu_p, s_p); },
      [&](const VectorXd& x) { return isotropic_gaussian_logpdf(x, mu_q, s_q); }, n, rng);
}

}  // namespace

std::vector<OracleReport> kl_suite(const VerifyOptions& opts) {
  std::vector<OracleReport> out;
  Rng rng = check_rng(opts, "kl");
  const Index n = sample_size(opts, 1000000);

  {
    const VectorXd mu_p = VectorXd::Constant(2, 1.0), mu_q = VectorXd::Zero(2);
    const double closed = losses::gaussian_kl(moments(mu_p, 1.0), moments(mu_q, 1.0)).item();
    out.push_back(make_report("kl/analytic-closed-form", "d:2 |dmu|^2:2", {closed}, {1.0}, 1e-12,
                              std::abs(closed - 1.0) <= 1e-12));
    Rng r = rng.derive("analytic");
    const auto mc = mc_isotropic(mu_p, 1.0, mu_q, 1.0, n, r);
    out.push_back(make_report("kl/analytic-monte-carlo", "d:2 |dmu|^2:2 n:" + std::to_string(n), {mc.mean, mc.stderr_},
                              {1.0}, 0.02, std::abs(mc.mean - 1.0) <= 0.02, "relative tolerance 2%"));
  }
  {
    Rng r = rng.derive("identical");
    const VectorXd mu = VectorXd::Constant(3, 0.3);
    const auto mc = mc_isotropic(mu, 1.5, mu, 1.5, n, r);
    const double tol = std::max(3.0 * mc.stderr_, 1e-12);
    out.push_back(make_report("kl/identical", "d:3 n:" + std::to_string(n), {mc.mean, mc.stderr_}, {0.0}, tol,
                              std::abs(mc.mean) <= tol));
  }
  for (int i = 0; i < 10; ++i) {
    Rng r = rng.derive(case_name("random", i));
    const Index d = 1 + i % 5;
    VectorXd mu_p(d), mu_q(d);
    for (Index k = 0; k < d; ++k) {
      mu_p(k) = r.normal();
      mu_q(k) = r.normal();
    }
    const double s_p = r.uniform(0.5, 2.0), s_q = r.uniform(0.5, 2.0);
    const double closed = losses::gaussian_kl(moments(mu_p, s_p), moments(mu_q, s_q)).item();
    const auto mc = mc_isotropic(mu_p, s_p, mu_q, s_q, n, r);
    out.push_back(make_report(case_name("kl/random", i), "d:" + std::to_string(d) + " n:" + std::to_string(n),
                              {closed}, {mc.mean, mc.stderr_}, 3.0 * mc.stderr_,
                              std::abs(closed - mc.mean) <= 3.0 * mc.stderr_,
                              "measured = closed form; reference = [Monte Carlo mean, SE]"));
  }
  return out;
}

// ---------------------------------------------------------------------------
// spectral

namespace {

double converged_sigma(const MatrixXd& w, Rng& rng, int iters) {
  NoGradGuard no_grad;
  nn::SpectralNormState state;
  state.u = nn::random_unit_vector(w.rows(), rng);
  state.n_power_iters = iters;
  nn::spectral_normalize(Tensor::from_matrix(w), state);
  return state.last_sigma;
}

}  // namespace

std::vector<OracleReport> spectral_suite(const VerifyOptions& opts) {
  std::vector<OracleReport> out;
  Rng rng = check_rng(opts, "spectral");

  {
    MatrixXd d = MatrixXd::Zero(2, 2);
    d(0, 0) = 3.0;
    d(1, 1) = 1.0;
    const double s = power_iter_oracle(d);
    out.push_back(make_report("spectral/oracle-diag", "diag(3,1)", {s}, {3.0}, 1e-10, std::abs(s - 3.0) <= 1e-10));
    const double o = power_iter_oracle(random_orthogonal(6, rng));
    out.push_back(make_report("spectral/oracle-orthogonal", "d:6", {o}, {1.0}, 1e-8, std::abs(o - 1.0) <= 1e-8));
  }
  {
    const MatrixXd w = gaussian_matrix(8, 8, rng);
    const double sigma = converged_sigma(w, rng, 200);
    const double ref = power_iter_oracle(w);
    out.push_back(make_report("spectral/random-8x8-200-iters", "8x8", {sigma}, {ref}, 1e-4,
                              std::abs(sigma - ref) <= 1e-4 * std::max(1.0, ref), "relative tolerance"));
  }
  // Constructed spectra: W = Q1 diag(s) Q2^T with s_0 known.
  for (int i = 0; i < 20; ++i) {
    Rng r = rng.derive(case_name("constructed", i));
    const Index rows = 2 + static_cast<Index>(r.below(31)), cols = 2 + static_cast<Index>(r.below(31));
    const Index k = std::min(rows, cols);
    VectorXd s(k);
    s(0) = r.uniform(1.0, 10.0);
    for (Index j = 1; j < k; ++j) s(j) = s(0) * r.uniform(0.05, 0.8);
    const MatrixXd q1 = random_orthogonal(rows, r).leftCols(k), q2 = random_orthogonal(cols, r).leftCols(k);
    const MatrixXd w = q1 * s.asDiagonal() * q2.transpose();
    const double sigma = converged_sigma(w, r, 500);
    const double oracle = power_iter_oracle(w);
    const std::string shape = std::to_string(rows) + "x" + std::to_string(cols);
    out.push_back(make_report(case_name("spectral/constructed", i), shape, {sigma, oracle}, {s(0)}, 1e-4,
                              std::abs(sigma - s(0)) <= 1e-4 * s(0) && std::abs(oracle - s(0)) <= 1e-8 * s(0),
                              "measured = [spectral_normalize, oracle]; relative tolerance 1e-4 (oracle 1e-8)"));
  }
  return out;
}

// ---------------------------------------------------------------------------
// dpi

std::vector<OracleReport> dpi_suite(const VerifyOptions& opts) {
  std::vector<OracleReport> out;
  Rng rng = check_rng(opts, "dpi");
  const Index n = sample_size(opts, 50000);

  const MatrixXd x3 = gaussian_matrix(n, 3, rng);
  const entropy::BatchMap half = [](const MatrixXd& m) -> MatrixXd { return 0.5 * m; };
  {
    const auto inc = entropy::incremental_entropy(half, x3, entropy::Estimator::kKnn);
    const double ref = 3.0 * std::log(0.5);
    out.push_back(make_report("dpi/half-identity-delta", "d:3 n:" + std::to_string(n), {inc.delta}, {ref}, 0.1,
                              std::abs(inc.delta - ref) <= 0.1));
  }
  const auto dpi_report = [&](const std::string& name, const std::string& inputs, const entropy::DpiResult& r,
                              bool expect) {
    return make_report(name, inputs, {r.lhs}, {r.rhs}, r.tolerance, r.satisfied == expect,
                       expect ? "one-sided: H(f(X)) <= H(X) + E log|det J| + tol"
                              : "negative control: the check must reject this Jacobian");
  };
  {
    const auto r = entropy::dpi_check(
        half, [](const VectorXd&) -> MatrixXd { return 0.5 * MatrixXd::Identity(3, 3); }, x3);
    out.push_back(dpi_report("dpi/half-identity", "d:3 n:" + std::to_string(n), r, true));
  }
  {
    // Smooth invertible residual maps x + a W2 tanh(W1 x), |a| ||W2|| ||W1|| < 1.
    const Index d = 8;
    const Index m = std::min<Index>(n, 20000);
    for (int i = 0; i < 3; ++i) {
      Rng r = rng.derive(case_name("residual", i));
      const MatrixXd w1 = gaussian_matrix(d, d, r) / std::sqrt(8.0), w2 = gaussian_matrix(d, d, r) / std::sqrt(8.0);
      const double a = 0.4;
      const entropy::BatchMap f = [=](const MatrixXd& x) -> MatrixXd {
        return x + a * ((x * w1.transpose()).array().tanh().matrix() * w2.transpose());
      };
      const entropy::JacobianFn jac = [=](const VectorXd& x) -> MatrixXd {
        const VectorXd t = (w1 * x).array().tanh();
        const VectorXd slope = 1.0 - t.array().square();
        return MatrixXd::Identity(d, d) + a * w2 * slope.asDiagonal() * w1;
      };
      const auto res = entropy::dpi_check(f, jac, gaussian_matrix(m, d, r));
      out.push_back(dpi_report(case_name("dpi/residual-map", i), "d:8 n:" + std::to_string(m), res, true));
    }
  }
  {
    const auto r = entropy::dpi_check([](const MatrixXd& m) { return m; },
                                      [](const VectorXd&) -> MatrixXd { return 0.9 * MatrixXd::Identity(3, 3); }, x3);
    out.push_back(dpi_report("dpi/negative-control", "d:3 understated jacobian", r, false));
  }
  return out;
}

// ---------------------------------------------------------------------------
// expansion-stats

std::vector<OracleReport> expansion_stats_suite(const VerifyOptions& opts) {
  std::vector<OracleReport> out;
  Rng rng = check_rng(opts, "expansion-stats");
  const Index n = sample_size(opts, 100);
  {
    saib::SaibConfig cfg;
    Rng init = rng.derive("kaiming");
    saib::SaibBlock block(cfg, init);
    Rng draws = rng.derive("inputs");
    const auto s = saib::volume_expansion_stats(block, draws, n);
    const bool in_range = s.fraction_expanding >= 0.0 && s.fraction_expanding <= 1.0;
    auto rep = make_report("expansion-stats/kaiming-init", "D:192 n:" + std::to_string(n),
                           {s.fraction_expanding, s.mean_logdet, s.min_logdet, static_cast<double>(s.singular)}, {},
                           0.0, in_range,
                           "measured = [fraction_expanding, mean log|det J|, min log|det J|, singular count]; "
                           "report only");
    rep.hard = false;
    out.push_back(rep);
  }
  {
    saib::SaibConfig cfg;
    Rng init = rng.derive("zero");
    saib::SaibBlock block(cfg, init);
    block.zero_residual();
    Rng draws = rng.derive("zero-inputs");
    const auto s = saib::volume_expansion_stats(block, draws, 5);
    const bool exact = std::all_of(s.logdets.begin(), s.logdets.end(), [](double v) { return v == 0.0; });
    out.push_back(make_report("expansion-stats/zero-init-identity", "D:192 n:5", {s.mean_logdet, s.min_logdet}, {0.0},
                              0.0, exact, "log|det J| must be exactly 0"));
  }
  return out;
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"gradients", "jacobian", "entropy-law", "dv-bound",
                                              "kl",        "spectral", "dpi",         "expansion-stats"};
  return names;
}

std::vector<OracleReport> run_verify(const std::string& suite, const VerifyOptions& opts) {
  using Suite = std::vector<OracleReport> (*)(const VerifyOptions&);
  static const std::map<std::string, Suite> table{
      {"gradients", gradients_suite}, {"jacobian", jacobian_suite}, {"entropy-law", entropy_law_suite},
      {"dv-bound", dv_bound_suite},   {"kl", kl_suite},             {"spectral", spectral_suite},
      {"dpi", dpi_suite},             {"expansion-stats", expansion_stats_suite}};
  if (suite == "all") {
    std::vector<OracleReport> out;
    for (const auto& name : suite_names()) {
      auto part = table.at(name)(opts);
      out.insert(out.end(), part.begin(), part.end());
    }
    return out;
  }
  const auto it = table.find(suite);
  if (it == table.end()) {
    std::string known = "all";
    for (const auto& n : suite_names()) known += ", " + n;
    throw std::invalid_argument("unknown suite '" + suite + "' (expected one of: " + known + ")");
  }
  return it->second(opts);
}

nlohmann::json to_json(const OracleReport& r) {
  const auto values = [](const std::vector<double>& v) {
    return v.size() == 1 ? nlohmann::json(v.front()) : nlohmann::json(v);
  };
  return {{"name", r.name},         {"measured", values(r.measured)}, {"reference", values(r.reference)},
          {"tolerance", r.tolerance}, {"pass", r.pass},               {"notes", r.notes},
          {"hard", r.hard},         {"inputs_digest", r.inputs_digest}};
}

nlohmann::json to_json(const std::vector<OracleReport>& reports) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : reports) arr.push_back(to_json(r));
  return arr;
}

bool all_hard_pass(const std::vector<OracleReport>& reports) {
  return std::all_of(reports.begin(), reports.end(), [](const OracleReport& r) { return r.pass || !r.hard; });
}

std::string format_table(const std::vector<OracleReport>& reports) {
  std::string out;
  char line[256];
  for (const auto& r : reports) {
    const char* status = !r.hard ? (r.pass ? "info" : "INFO") : (r.pass ? "pass" : "FAIL");
    const double m = r.measured.empty() ? std::nan("") : r.measured.front();
    const double ref = r.reference.empty() ? std::nan("") : r.reference.front();
    std::snprintf(line, sizeof(line), "%-4s  %-46s  measured %-12.6g reference %-12.6g tol %.3g\n", status,
                  r.name.c_str(), m, ref, r.tolerance);
    out += line;
  }
  return out;
}

}  // namespace iecl::verify
