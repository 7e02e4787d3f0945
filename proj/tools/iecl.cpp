// iecl: train | verify | entropy | jacobian

#include "iecl/checkpoint.hpp"
#include "iecl/entropy.hpp"
#include "iecl/linalg.hpp"
#include "iecl/oracles.hpp"
#include "iecl/saib.hpp"
#include "iecl/trainer.hpp"
#include "iecl/verify.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iostream>

namespace {

using namespace iecl;

struct TrainArgs {
  std::string config;
  std::string out_dir = "runs/desk";
  std::string preset = "desk";
};

int run_train(const TrainArgs& a) {
  IeclConfig cfg = preset(a.preset);
  if (!a.config.empty()) cfg = load_config(a.config, cfg);
  const auto result = run_training(cfg, a.out_dir);
  for (const auto& r : result.records) std::cout << csv_row(r) << "\n";
  std::cerr << "metrics: " << result.metrics_path.string() << "\ncheckpoint: " << result.checkpoint_path.string()
            << "\n";
  return 0;
}

struct VerifyArgs {
  std::string suite = "all";
  std::uint64_t seed = 42;
  std::string json_out;
  Eigen::Index n = 0;
};

int run_verify_cmd(const VerifyArgs& a) {
  const auto reports = verify::run_verify(a.suite, {a.seed, a.n});
  const std::string json = verify::to_json(reports).dump(2) + "\n";
  if (a.json_out.empty()) {
    std::cout << json;
  } else {
    std::ofstream out(a.json_out);
    if (!(out << json)) throw std::runtime_error("cannot write report: " + a.json_out);
  }
  std::cerr << verify::format_table(reports);
  const bool ok = verify::all_hard_pass(reports);
  std::cerr << (ok ? "all hard checks passed\n" : "hard check failures\n");
  return ok ? 0 : 1;
}

struct EntropyArgs {
  std::string dist = "gaussian";
  std::string transform = "identity";
  Eigen::Index n = 50000;
  Eigen::Index d = 3;
  Eigen::Index k = 3;
  std::string estimator = "knn";
  std::uint64_t seed = 42;
};

// identity | scale:<s> | linear | orthogonal
Eigen::MatrixXd transform_matrix(const std::string& spec, Eigen::Index d, Rng& rng) {
  if (spec == "identity") return Eigen::MatrixXd::Identity(d, d);
  if (spec == "linear") return random_well_conditioned(d, 20.0, rng);
  if (spec == "orthogonal") return random_orthogonal(d, rng);
  if (spec.rfind("scale:", 0) == 0) {
    std::size_t used = 0;
    const std::string num = spec.substr(6);
    const double s = std::stod(num, &used);
    if (used != num.size()) throw std::invalid_argument("bad scale in transform '" + spec + "'");
    return s * Eigen::MatrixXd::Identity(d, d);
  }
  throw std::invalid_argument("unknown transform '" + spec + "' (expected identity, scale:<s>, linear, orthogonal)");
}

int run_entropy(const EntropyArgs& a) {
  if (a.n < 2 || a.d < 1) throw std::invalid_argument("--n must be >= 2 and --d >= 1");
  const auto est = entropy::parse_estimator(a.estimator);
  Rng rng(a.seed);
  Eigen::MatrixXd x;
  double h_true = 0.0;
  if (a.dist == "gaussian") {
    x = gaussian_matrix(a.n, a.d, rng);
    h_true = 0.5 * static_cast<double>(a.d) * std::log(2.0 * M_PI * M_E);
  } else if (a.dist == "uniform") {
    x.resize(a.n, a.d);
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = rng.uniform();
  } else {
    throw std::invalid_argument("unknown distribution '" + a.dist + "' (expected gaussian or uniform)");
  }
  Rng trng = rng.derive("transform");
  const Eigen::MatrixXd m = transform_matrix(a.transform, a.d, trng);
  const auto inc = entropy::incremental_entropy(
      [&](const Eigen::MatrixXd& s) -> Eigen::MatrixXd { return s * m.transpose(); }, x, est, a.k);
  const double reference = entropy::linear_delta_h(m);
  const nlohmann::json report{{"dist", a.dist},
                              {"transform", a.transform},
                              {"n", a.n},
                              {"d", a.d},
                              {"estimator", entropy::to_string(est)},
                              {"k", a.k},
                              {"seed", a.seed},
                              {"h_x", inc.h_before},
                              {"h_x_true", h_true},
                              {"h_gx", inc.h_after},
                              {"delta_h", inc.delta},
                              {"delta_h_reference", reference},
                              {"abs_error", std::abs(inc.delta - reference)}};
  std::cout << report.dump(2) << "\n";
  return 0;
}

struct JacobianArgs {
  std::string checkpoint;
  Eigen::Index n_samples = 100;
  std::uint64_t seed = 42;
  std::string out;
};

int run_jacobian(const JacobianArgs& a) {
  const auto entries = load_checkpoint(a.checkpoint);
  const auto meta = std::find_if(entries.begin(), entries.end(),
                                 [](const nn::Param& p) { return p.name == "meta.saib_config"; });
  if (meta == entries.end() || meta->value.numel() != 6) {
    throw CheckpointError(a.checkpoint + ": missing meta.saib_config entry");
  }
  saib::SaibConfig cfg;
  cfg.channels = static_cast<Index>(meta->value.at(0));
  cfg.height = static_cast<Index>(meta->value.at(1));
  cfg.width = static_cast<Index>(meta->value.at(2));
  cfg.patch = static_cast<Index>(meta->value.at(3));
  const int act = static_cast<int>(meta->value.at(4));
  if (act < 0 || act > static_cast<int>(nn::Activation::kIdentity)) {
    throw CheckpointError(a.checkpoint + ": bad activation id in meta.saib_config");
  }
  cfg.activation = static_cast<nn::Activation>(act);
  Rng init(0);
  saib::SaibBlock block(cfg, init);
  restore(entries, block.state("saib."));

  Rng rng(a.seed);
  const auto stats = saib::volume_expansion_stats(block, rng, a.n_samples);
  const nlohmann::json report{{"checkpoint", a.checkpoint},
                              {"saib_enabled", meta->value.at(5) != 0.0},
                              {"dim", cfg.dim()},
                              {"n_samples", a.n_samples},
                              {"seed", a.seed},
                              {"fraction_expanding", stats.fraction_expanding},
                              {"mean_logdet", stats.mean_logdet},
                              {"min_logdet", stats.min_logdet},
                              {"singular", stats.singular},
                              {"logdets", stats.logdets}};
  const std::string text = report.dump(2) + "\n";
  if (a.out.empty()) {
    std::cout << text;
  } else {
    std::ofstream out(a.out);
    if (!(out << text)) throw std::runtime_error("cannot write " + a.out);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Incremental-entropy contrastive learning: training, oracle checks and diagnostics"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Run the training loop; writes metrics CSV, checkpoint and summary.json");
  t->add_option("--config", train.config, "JSON config applied on top of the preset")->check(CLI::ExistingFile);
  t->add_option("--out-dir", train.out_dir, "Output directory")->capture_default_str();
  t->add_option("--preset", train.preset, "Base preset")
      ->check(CLI::IsMember({"desk", "paper"}))
      ->capture_default_str();

  VerifyArgs ver;
  auto* v = app.add_subcommand("verify", "Run oracle suites; exit status 1 if any hard check fails");
  std::vector<std::string> suites{"all"};
  for (const auto& s : verify::suite_names()) suites.push_back(s);
  v->add_option("--suite", ver.suite, "Suite name")->check(CLI::IsMember(suites))->capture_default_str();
  v->add_option("--seed", ver.seed, "Seed")->capture_default_str();
  v->add_option("--json-out", ver.json_out, "Write the JSON report here instead of stdout");
  v->add_option("--n", ver.n, "Sample-size override for sampling suites (0 keeps defaults)")
      ->check(CLI::NonNegativeNumber);

  EntropyArgs ent;
  auto* e = app.add_subcommand("entropy", "Estimate H(X), H(AX) and the increment for a synthetic distribution");
  e->add_option("--dist", ent.dist, "gaussian | uniform")->capture_default_str();
  e->add_option("--transform", ent.transform, "identity | scale:<s> | linear | orthogonal")->capture_default_str();
  e->add_option("--n", ent.n, "Samples")->capture_default_str();
  e->add_option("--d", ent.d, "Dimension")->capture_default_str();
  e->add_option("--k", ent.k, "Neighbour rank for knn")->capture_default_str();
  e->add_option("--estimator", ent.estimator, "knn | gaussian")->capture_default_str();
  e->add_option("--seed", ent.seed, "Seed")->capture_default_str();

  JacobianArgs jac;
  auto* j = app.add_subcommand("jacobian", "Volume-expansion statistics of the SAIB block stored in a checkpoint");
  j->add_option("--checkpoint", jac.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  j->add_option("--n-samples", jac.n_samples, "Standard-normal inputs")->capture_default_str();
  j->add_option("--seed", jac.seed, "Seed")->capture_default_str();
  j->add_option("--out", jac.out, "Write the JSON report here instead of stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*t) return run_train(train);
    if (*v) return run_verify_cmd(ver);
    if (*e) return run_entropy(ent);
    if (*j) return run_jacobian(jac);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  }
  return 2;
}
