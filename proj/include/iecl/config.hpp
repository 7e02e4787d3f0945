#pragma once

// Run configuration. JSON keys mirror the struct fields; a config file only
// needs the keys it overrides, and unknown keys are rejected.

#include "iecl/entropy.hpp"
#include "iecl/losses.hpp"
#include "iecl/nn.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace iecl {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct DataConfig {
  Index n_classes = 4;
  Index n_per_class = 128;
  Index channels = 3;
  Index height = 8;
  Index width = 8;
  double noise_sigma = 0.3;
};

struct SaibSettings {
  bool enabled = true;
  Index patch = 2;
  nn::Activation activation = nn::Activation::kSwish;
  double pos_init_std = 0.02;
  bool batch_mixing = false;
};

// The full-scale architecture uses 4096 hidden and 512 output projector
// units; these defaults are the desk-scale reduction.
struct EncoderSettings {
  std::vector<Index> stem_channels{16, 32};  // last entry is the feature dim
  Index projector_hidden = 64;
  Index projector_out = 16;
  nn::Activation activation = nn::Activation::kRelu;
  int n_power_iters = 1;
};

enum class EtaMode { kArchitecturalSn, kLipschitzPenalty, kNone };
EtaMode parse_eta_mode(const std::string& name);
std::string to_string(EtaMode mode);

struct OptimizerSettings {
  std::string name = "adamw";  // adamw | sgd
  double lr = 3e-3;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum = 0.9;  // sgd only
  std::string schedule = "cosine";  // cosine | constant
};

struct LossSettings {
  losses::LossWeights weights;
  EtaMode eta_mode = EtaMode::kArchitecturalSn;
  // Permits zero term weights (baseline and verification runs).
  bool allow_zero_weights = false;
};

struct AugmentSettings {
  bool flip = true;
  Index crop_pad = 1;
  double noise_sigma = 0.05;
};

struct EvalSettings {
  Index probe_every = 10;  // epochs; the final epoch is always probed
  Index probe_iters = 500;
  double probe_lr = 0.1;
  // Mean SAIB log|det J| over this many samples every logdet_every epochs
  // (0 disables). Only for small D.
  Index logdet_every = 0;
  Index logdet_samples = 4;
};

struct IeclConfig {
  std::uint64_t seed = 42;
  Index batch_size = 64;
  Index epochs = 50;
  double momentum = 0.9;  // momentum-encoder coefficient m
  DataConfig data;
  SaibSettings saib;
  EncoderSettings encoder;
  OptimizerSettings optimizer;
  LossSettings loss;
  AugmentSettings augment;
  EvalSettings eval;
  entropy::Estimator monitor_estimator = entropy::Estimator::kKnn;
  Index knn_k = 3;
  std::string metrics_csv = "metrics.csv";
  std::string checkpoint = "checkpoint.bin";

  // Throws ConfigError on any violated constraint.
  void validate() const;
};

// "desk": the defaults above. "paper": the full-scale optimisation settings
// (batch 256, AdamW lr 0.3) on desk-scale data and dims.
IeclConfig preset(const std::string& name);
// The A/B baseline: SAIB off, beta = lambda = 0.
IeclConfig baseline_config(IeclConfig cfg);

nlohmann::json to_json(const IeclConfig& cfg);
// Overlays `j` on `base`.
IeclConfig from_json(const nlohmann::json& j, IeclConfig base = {});
IeclConfig load_config(const std::filesystem::path& path, IeclConfig base = {});

}  // namespace iecl
