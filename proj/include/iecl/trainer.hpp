#pragma once

// The dual-encoder training loop: SAIB on the query view, anchor encoder Q
// trained by backprop together with SAIB, query encoder K updated by
// momentum.

#include "iecl/config.hpp"
#include "iecl/data.hpp"
#include "iecl/encoder.hpp"
#include "iecl/losses.hpp"
#include "iecl/optim.hpp"
#include "iecl/saib.hpp"

#include <filesystem>
#include <limits>
#include <string>
#include <vector>

namespace iecl {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

saib::SaibConfig saib_config(const IeclConfig& cfg);

class IeclModel {
 public:
  IeclModel(const IeclConfig& cfg, Rng& rng);

  // Q parameters, then SAIB parameters when SAIB is enabled.
  std::vector<nn::Param> trainable() const;
  // q.*, k.*, saib.* (parameters and buffers) and meta.saib_config
  // = [C, H, W, p, activation, enabled].
  std::vector<nn::Param> checkpoint_state() const;
  void set_mode(nn::Mode mode);
  void set_state_frozen(bool frozen);

  EncoderPair pair;
  saib::SaibBlock saib;
  bool saib_enabled;
  EtaMode eta_mode;
};

// Values the objective treats as constants: K's output on the transformed
// query and the detached transformed-query projection.
struct DetachedInputs {
  Tensor k_query;
  Tensor q_qt;
};

struct ObjectiveOutputs {
  losses::LossBreakdown loss;
  Tensor x_qt;      // SAIB(x_query)
  Tensor q_anchor;  // Q projections
  Tensor q_qt;
  DetachedInputs detached;
  losses::GaussianMoments p, q;  // transformed-query (detached) and anchor moments
};

// One evaluation of the objective on fixed views:
//   x_qt = SAIB(x_query); q_anchor = Q(x_anchor); q_qt = Q(x_qt); k = K(x_qt)
//   infonce(q_anchor, k) + beta KL(moments(detach q_qt) || moments(q_anchor))
//   - lambda H(q_qt) + eta reg + gamma ||phi||^2
// When `fixed` is given its tensors replace k and detach(q_qt).
ObjectiveOutputs compute_objective(IeclModel& model, const Tensor& x_anchor, const Tensor& x_query,
                                   const IeclConfig& cfg, const DetachedInputs* fixed = nullptr);

struct StepMetrics {
  double loss_total = 0.0;
  double loss_infonce = 0.0;
  double loss_kl = 0.0;
  double entropy_hat = 0.0;
  double delta_h_query = 0.0;
  double mu_drift = 0.0;  // ||mu_phi - mu||
};

// Augments both views with streams keyed by (seed, step), evaluates the
// objective, takes one optimizer step on Q and SAIB, clears gradients and
// applies the momentum update to K.
StepMetrics train_step(IeclModel& model, Optimizer& optimizer, const Tensor& batch, const IeclConfig& cfg,
                       Index step, double lr);

struct ProbeResult {
  double train_acc = 0.0;
  double test_acc = 0.0;
};

// Multinomial logistic regression on standardised features: deterministic
// 80/20 split, full-batch gradient descent from zero weights.
ProbeResult linear_probe(const Eigen::MatrixXd& features, const std::vector<int>& labels, std::uint64_t seed,
                         Index iters = 500, double lr = 0.1);

// Backbone features of Q in eval mode for every dataset image.
Eigen::MatrixXd encode_dataset(IeclModel& model, const data::SyntheticDataset& dataset);

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

struct MetricsRecord {
  Index epoch = 0;
  Index step = 0;
  double loss_total = kMissing;
  double loss_infonce = kMissing;
  double loss_kl = kMissing;
  double entropy_hat = kMissing;
  double delta_h_query = kMissing;
  double logdet_mean = kMissing;
  double probe_acc = kMissing;
};

std::string csv_header();
// Shortest round-trip formatting; missing values print as "nan".
std::string csv_row(const MetricsRecord& r);

struct TrainingResult {
  std::vector<MetricsRecord> records;
  std::vector<double> mu_drift;  // epoch means of ||mu_phi - mu||
  double final_probe_acc = kMissing;
  std::filesystem::path metrics_path;
  std::filesystem::path checkpoint_path;
};

// Epoch-averaged metrics (one CSV row per epoch), probes every
// eval.probe_every epochs and at the last epoch, then the checkpoint.
// Also writes summary.json next to the CSV.
TrainingResult run_training(const IeclConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace iecl
