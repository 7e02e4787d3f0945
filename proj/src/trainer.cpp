#include "iecl/trainer.hpp"

#include "iecl/checkpoint.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace iecl {

saib::SaibConfig saib_config(const IeclConfig& cfg) {
  saib::SaibConfig s;
  s.channels = cfg.data.channels;
  s.height = cfg.data.height;
  s.width = cfg.data.width;
  s.patch = cfg.saib.patch;
  s.activation = cfg.saib.activation;
  s.pos_init_std = cfg.saib.pos_init_std;
  s.batch_mixing = cfg.saib.batch_mixing;
  return s;
}

namespace {

Rng stream(const IeclConfig& cfg, std::string_view name) { return Rng(cfg.seed).derive(name); }

Eigen::MatrixXd flat_rows(const Tensor& x) {
  const Index n = x.dim(0);
  return Eigen::Map<const RowMatrixXd>(x.data().data(), n, x.numel() / n);
}

}  // namespace

IeclModel::IeclModel(const IeclConfig& cfg, Rng& rng)
    : pair(cfg.encoder, cfg.data.channels, cfg.loss.eta_mode == EtaMode::kArchitecturalSn, cfg.momentum, rng),
      saib(saib_config(cfg), rng),
      saib_enabled(cfg.saib.enabled),
      eta_mode(cfg.loss.eta_mode) {}

std::vector<nn::Param> IeclModel::trainable() const {
  auto params = pair.q.parameters("q.");
  if (saib_enabled)
    for (auto& p : saib.parameters("saib.")) params.push_back(std::move(p));
  return params;
}

std::vector<nn::Param> IeclModel::checkpoint_state() const {
  auto out = pair.q.state("q.");
  for (auto& p : pair.k.state("k.")) out.push_back(std::move(p));
  for (auto& p : saib.state("saib.")) out.push_back(std::move(p));
  const auto& s = saib.config();
  out.push_back({"meta.saib_config",
                 Tensor({6}, {static_cast<double>(s.channels), static_cast<double>(s.height),
                              static_cast<double>(s.width), static_cast<double>(s.patch),
                              static_cast<double>(static_cast<int>(s.activation)), saib_enabled ? 1.0 : 0.0})});
  return out;
}

void IeclModel::set_mode(nn::Mode mode) {
  pair.q.set_mode(mode);
  pair.k.set_mode(mode);
  saib.set_mode(mode);
}

void IeclModel::set_state_frozen(bool frozen) {
  pair.q.set_state_frozen(frozen);
  pair.k.set_state_frozen(frozen);
  saib.set_state_frozen(frozen);
}

ObjectiveOutputs compute_objective(IeclModel& model, const Tensor& x_anchor, const Tensor& x_query,
                                   const IeclConfig& cfg, const DetachedInputs* fixed) {
  ObjectiveOutputs out;
  out.x_qt = model.saib_enabled ? model.saib.forward(x_query) : x_query;
  out.q_anchor = model.pair.q.forward(x_anchor).projection;
  out.q_qt = model.pair.q.forward(out.x_qt).projection;
  if (fixed) {
    out.detached = *fixed;
  } else {
    NoGradGuard no_grad;
    out.detached.k_query = model.pair.k.forward(out.x_qt.detach()).projection;
    out.detached.q_qt = out.q_qt.detach();
  }

  const auto& w = cfg.loss.weights;
  losses::LossTerms terms;
  terms.infonce = losses::info_nce(out.q_anchor, out.detached.k_query, w.tau);
  out.p = losses::fit_moments(out.detached.q_qt);
  out.q = losses::fit_moments(out.q_anchor);
  terms.kl = losses::gaussian_kl(out.p, out.q);
  terms.entropy = entropy::gaussian_plugin_entropy(out.q_qt);
  terms.reg_encoder =
      model.eta_mode == EtaMode::kLipschitzPenalty ? model.pair.q.lipschitz_penalty() : Tensor::scalar(0.0);
  terms.saib_decay = model.saib_enabled ? model.saib.l2_penalty() : Tensor::scalar(0.0);
  out.loss = losses::final_objective(terms, w);
  return out;
}

namespace {

std::string describe(const losses::LossBreakdown& b) {
  std::ostringstream os;
  os.precision(17);
  os << "total=" << b.total.item() << " infonce=" << b.infonce.item() << " kl=" << b.kl.item()
     << " neg_entropy=" << b.neg_entropy.item() << " reg_encoder=" << b.reg_encoder.item()
     << " saib_decay=" << b.saib_decay.item();
  return os.str();
}

}  // namespace

StepMetrics train_step(IeclModel& model, Optimizer& optimizer, const Tensor& batch, const IeclConfig& cfg,
                       Index step, double lr) {
  Rng rng_anchor = stream(cfg, "augment-anchor").derive(static_cast<std::uint64_t>(step));
  Rng rng_query = stream(cfg, "augment-query").derive(static_cast<std::uint64_t>(step));
  const Tensor x_anchor = data::augment(batch, cfg.augment, rng_anchor);
  const Tensor x_query = data::augment(batch, cfg.augment, rng_query);

  const auto params = model.trainable();
  StepMetrics m;
  {
    TapeScope scope;
    const ObjectiveOutputs out = compute_objective(model, x_anchor, x_query, cfg);
    const double total = out.loss.total.item();
    if (!std::isfinite(total)) {
      throw TrainingError("non-finite objective at step " + std::to_string(step) + ": " + describe(out.loss));
    }
    backward(out.loss.total);
    m.loss_total = total;
    m.loss_infonce = out.loss.infonce.item();
    m.loss_kl = out.loss.kl.item();
    m.entropy_hat = -out.loss.neg_entropy.item();
    double drift2 = 0.0;
    for (Index i = 0; i < out.p.mu.numel(); ++i) drift2 += std::pow(out.p.mu.at(i) - out.q.mu.at(i), 2);
    m.mu_drift = std::sqrt(drift2);
    m.delta_h_query = model.saib_enabled
                          ? entropy::incremental_entropy([&](const Eigen::MatrixXd&) { return flat_rows(out.x_qt); },
                                                         flat_rows(x_query), cfg.monitor_estimator, cfg.knn_k)
                                .delta
                          : 0.0;
  }
  optimizer.step(params, lr);
  for (const auto& p : params) {
    Tensor t = p.value;
    t.clear_grad();
  }
  momentum_update(model.pair);
  return m;
}

ProbeResult linear_probe(const Eigen::MatrixXd& features, const std::vector<int>& labels, std::uint64_t seed,
                         Index iters, double lr) {
  const Index n = features.rows(), f = features.cols();
  if (static_cast<Index>(labels.size()) != n) throw std::invalid_argument("linear_probe: label count mismatch");
  if (n < 5) throw std::invalid_argument("linear_probe: need at least 5 samples");
  const int n_classes = *std::max_element(labels.begin(), labels.end()) + 1;
  if (std::all_of(labels.begin(), labels.end(), [&](int l) { return l == labels.front(); })) {
    throw std::invalid_argument("linear_probe: labels contain a single class");
  }

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  Rng rng = Rng(seed).derive("probe-split");
  for (Index i = n - 1; i > 0; --i) std::swap(order[static_cast<std::size_t>(i)], order[rng.below(i + 1)]);
  const Index n_train = (4 * n) / 5;

  Eigen::MatrixXd x_train(n_train, f), x_test(n - n_train, f);
  Eigen::MatrixXd y_train = Eigen::MatrixXd::Zero(n_train, n_classes);
  std::vector<int> test_labels;
  for (Index i = 0; i < n; ++i) {
    const Index src = order[static_cast<std::size_t>(i)];
    if (i < n_train) {
      x_train.row(i) = features.row(src);
      y_train(i, labels[static_cast<std::size_t>(src)]) = 1.0;
    } else {
      x_test.row(i - n_train) = features.row(src);
      test_labels.push_back(labels[static_cast<std::size_t>(src)]);
    }
  }
  const Eigen::RowVectorXd mu = x_train.colwise().mean();
  Eigen::RowVectorXd sd = ((x_train.rowwise() - mu).array().square().colwise().sum() / static_cast<double>(n_train))
                              .sqrt()
                              .matrix();
  sd = sd.cwiseMax(1e-8);
  const auto standardise = [&](const Eigen::MatrixXd& x) -> Eigen::MatrixXd {
    return (x.rowwise() - mu).array().rowwise() / sd.array();
  };
  x_train = standardise(x_train);
  x_test = standardise(x_test);

  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(f, n_classes);
  Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(n_classes);
  const auto softmax = [](Eigen::MatrixXd logits) {
    for (Index i = 0; i < logits.rows(); ++i) {
      logits.row(i).array() -= logits.row(i).maxCoeff();
      logits.row(i) = logits.row(i).array().exp().matrix();
      logits.row(i) /= logits.row(i).sum();
    }
    return logits;
  };
  for (Index it = 0; it < iters; ++it) {
    const Eigen::MatrixXd p = softmax((x_train * w).rowwise() + b);
    const Eigen::MatrixXd g = (p - y_train) / static_cast<double>(n_train);
    w -= lr * x_train.transpose() * g;
    b -= lr * g.colwise().sum();
  }
  const auto accuracy = [&](const Eigen::MatrixXd& x, const auto& truth) {
    const Eigen::MatrixXd logits = (x * w).rowwise() + b;
    Index correct = 0;
    for (Index i = 0; i < x.rows(); ++i) {
      Index arg = 0;
      logits.row(i).maxCoeff(&arg);
      correct += arg == truth(i) ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(x.rows());
  };
  ProbeResult r;
  r.train_acc = accuracy(x_train, [&](Index i) {
    Index arg = 0;
    y_train.row(i).maxCoeff(&arg);
    return arg;
  });
  r.test_acc = accuracy(x_test, [&](Index i) { return static_cast<Index>(test_labels[static_cast<std::size_t>(i)]); });
  return r;
}

Eigen::MatrixXd encode_dataset(IeclModel& model, const data::SyntheticDataset& dataset) {
  NoGradGuard no_grad;
  model.pair.q.set_mode(nn::Mode::kEval);
  model.pair.q.set_state_frozen(true);
  const Tensor feats = model.pair.q.forward(dataset.images()).features;
  model.pair.q.set_state_frozen(false);
  model.pair.q.set_mode(nn::Mode::kTrain);
  return flat_rows(feats);
}

std::string csv_header() {
  return "epoch,step,loss_total,loss_infonce,loss_kl,entropy_hat,delta_h_query,logdet_mean,probe_acc";
}

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::string csv_row(const MetricsRecord& r) {
  return std::to_string(r.epoch) + "," + std::to_string(r.step) + "," + fmt(r.loss_total) + "," +
         fmt(r.loss_infonce) + "," + fmt(r.loss_kl) + "," + fmt(r.entropy_hat) + "," + fmt(r.delta_h_query) + "," +
         fmt(r.logdet_mean) + "," + fmt(r.probe_acc);
}

TrainingResult run_training(const IeclConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + out_dir.string() + ": " + ec.message());

  TrainingResult result;
  result.metrics_path = out_dir / cfg.metrics_csv;
  result.checkpoint_path = out_dir / cfg.checkpoint;

  Rng data_rng = stream(cfg, "data");
  const data::SyntheticDataset dataset(cfg.data, data_rng);
  Rng model_rng = stream(cfg, "model");
  IeclModel model(cfg, model_rng);
  auto optimizer = make_optimizer(cfg.optimizer);

  std::ofstream csv(result.metrics_path, std::ios::trunc);
  if (!csv) throw std::runtime_error("cannot write metrics CSV: " + result.metrics_path.string());
  csv << csv_header() << "\n";

  const Index steps_per_epoch = dataset.size() / cfg.batch_size;
  const Index total_steps = steps_per_epoch * cfg.epochs;
  Index step = 0;
  for (Index epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng shuffle = stream(cfg, "shuffle").derive(static_cast<std::uint64_t>(epoch));
    const auto batches = data::epoch_batches(dataset.size(), cfg.batch_size, shuffle);
    StepMetrics acc;
    for (const auto& idx : batches) {
      const StepMetrics m = train_step(model, *optimizer, dataset.batch(idx), cfg, step,
                                       scheduled_lr(cfg.optimizer, step, total_steps));
      ++step;
      acc.loss_total += m.loss_total;
      acc.loss_infonce += m.loss_infonce;
      acc.loss_kl += m.loss_kl;
      acc.entropy_hat += m.entropy_hat;
      acc.delta_h_query += m.delta_h_query;
      acc.mu_drift += m.mu_drift;
    }
    const double nb = static_cast<double>(batches.size());
    MetricsRecord rec;
    rec.epoch = epoch;
    rec.step = step;
    rec.loss_total = acc.loss_total / nb;
    rec.loss_infonce = acc.loss_infonce / nb;
    rec.loss_kl = acc.loss_kl / nb;
    rec.entropy_hat = acc.entropy_hat / nb;
    rec.delta_h_query = acc.delta_h_query / nb;
    result.mu_drift.push_back(acc.mu_drift / nb);

    if (model.saib_enabled && cfg.eval.logdet_every > 0 && epoch % cfg.eval.logdet_every == 0) {
      const Index n = std::min(cfg.eval.logdet_samples, dataset.size());
      std::vector<Index> first(static_cast<std::size_t>(n));
      std::iota(first.begin(), first.end(), Index{0});
      const Tensor imgs = dataset.batch(first);
      const Index d = dataset.dim();
      double total = 0.0;
      for (Index i = 0; i < n; ++i) {
        const Tensor one({cfg.data.channels, cfg.data.height, cfg.data.width},
                         std::vector<double>(imgs.data().begin() + i * d, imgs.data().begin() + (i + 1) * d));
        total += saib::log_abs_det(saib::jacobian(model.saib, one)).value;
      }
      rec.logdet_mean = total / static_cast<double>(n);
    }
    const bool probe_now = epoch == cfg.epochs || (cfg.eval.probe_every > 0 && epoch % cfg.eval.probe_every == 0);
    if (probe_now) {
      rec.probe_acc = linear_probe(encode_dataset(model, dataset), dataset.labels(), cfg.seed, cfg.eval.probe_iters,
                                   cfg.eval.probe_lr)
                          .test_acc;
      result.final_probe_acc = rec.probe_acc;
    }
    csv << csv_row(rec) << "\n";
    csv.flush();
    result.records.push_back(rec);
  }
  if (!csv) throw std::runtime_error("failed writing metrics CSV: " + result.metrics_path.string());

  save_checkpoint(result.checkpoint_path, model.checkpoint_state());

  nlohmann::json summary{{"config", to_json(cfg)},
                         {"epochs_run", cfg.epochs},
                         {"steps", step},
                         {"final_probe_acc", std::isnan(result.final_probe_acc) ? nlohmann::json(nullptr)
                                                                                 : nlohmann::json(result.final_probe_acc)},
                         {"mu_drift", result.mu_drift}};
  std::ofstream(out_dir / "summary.json") << summary.dump(2) << "\n";
  return result;
}

}  // namespace iecl
