#include "iecl/config.hpp"

#include <fstream>
#include <set>

namespace iecl {

using nlohmann::json;

EtaMode parse_eta_mode(const std::string& name) {
  if (name == "architectural_sn") return EtaMode::kArchitecturalSn;
  if (name == "lipschitz_penalty") return EtaMode::kLipschitzPenalty;
  if (name == "none") return EtaMode::kNone;
  throw ConfigError("unknown eta_mode '" + name + "' (expected architectural_sn, lipschitz_penalty or none)");
}

std::string to_string(EtaMode mode) {
  switch (mode) {
    case EtaMode::kArchitecturalSn:
      return "architectural_sn";
    case EtaMode::kLipschitzPenalty:
      return "lipschitz_penalty";
    case EtaMode::kNone:
      return "none";
  }
  return "none";
}

void IeclConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid config: " + what);
  };
  require(batch_size >= 2, "batch_size must be >= 2");
  require(epochs >= 0, "epochs must be >= 0");
  require(momentum > 0.0 && momentum < 1.0, "momentum must be in (0,1)");
  require(data.n_classes >= 2, "data.n_classes must be >= 2");
  require(data.n_per_class >= 1, "data.n_per_class must be >= 1");
  require(data.channels >= 1 && data.height >= 1 && data.width >= 1, "data dims must be positive");
  require(data.noise_sigma >= 0.0, "data.noise_sigma must be >= 0");
  require(data.n_classes * data.n_per_class >= batch_size, "dataset smaller than one batch");
  require(saib.patch >= 1 && data.height % saib.patch == 0 && data.width % saib.patch == 0,
          "saib.patch must divide data.height and data.width");
  require(!encoder.stem_channels.empty() && encoder.stem_channels.size() <= 3, "encoder.stem_channels needs 1-3 entries");
  for (Index c : encoder.stem_channels) require(c >= 1, "encoder.stem_channels entries must be positive");
  require(encoder.projector_hidden >= 1 && encoder.projector_out >= 1, "projector sizes must be positive");
  require(encoder.n_power_iters >= 1, "encoder.n_power_iters must be >= 1");
  require(batch_size > encoder.projector_out, "batch_size must exceed encoder.projector_out (plug-in entropy needs n > d)");
  require(optimizer.name == "adamw" || optimizer.name == "sgd", "optimizer.name must be adamw or sgd");
  require(optimizer.schedule == "cosine" || optimizer.schedule == "constant", "optimizer.schedule must be cosine or constant");
  require(optimizer.lr >= 0.0 && optimizer.weight_decay >= 0.0, "optimizer lr and weight_decay must be >= 0");
  require(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0 && optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0,
          "optimizer betas must be in [0,1)");
  require(optimizer.eps > 0.0, "optimizer.eps must be > 0");
  require(optimizer.momentum >= 0.0 && optimizer.momentum < 1.0, "optimizer.momentum must be in [0,1)");
  try {
    loss.weights.validate(loss.allow_zero_weights);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  require(augment.crop_pad >= 0 && augment.noise_sigma >= 0.0, "augment settings must be >= 0");
  require(eval.probe_every >= 0 && eval.probe_iters >= 1 && eval.probe_lr > 0.0, "eval probe settings invalid");
  require(eval.logdet_every >= 0 && eval.logdet_samples >= 1, "eval logdet settings invalid");
  require(knn_k >= 1 && knn_k < batch_size, "knn_k must be in [1, batch_size)");
  require(!metrics_csv.empty() && !checkpoint.empty(), "output paths must be non-empty");
}

IeclConfig preset(const std::string& name) {
  IeclConfig cfg;
  if (name == "desk") return cfg;
  if (name == "paper") {
    cfg.batch_size = 256;
    cfg.data.n_per_class = 256;
    cfg.optimizer.lr = 0.3;
    return cfg;
  }
  throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
}

IeclConfig baseline_config(IeclConfig cfg) {
  cfg.saib.enabled = false;
  cfg.loss.weights.beta = 0.0;
  cfg.loss.weights.lambda = 0.0;
  cfg.loss.allow_zero_weights = true;
  return cfg;
}

json to_json(const IeclConfig& c) {
  return json{
      {"seed", c.seed},
      {"batch_size", c.batch_size},
      {"epochs", c.epochs},
      {"momentum", c.momentum},
      {"data",
       {{"n_classes", c.data.n_classes},
        {"n_per_class", c.data.n_per_class},
        {"channels", c.data.channels},
        {"height", c.data.height},
        {"width", c.data.width},
        {"noise_sigma", c.data.noise_sigma}}},
      {"saib",
       {{"enabled", c.saib.enabled},
        {"patch", c.saib.patch},
        {"activation", nn::to_string(c.saib.activation)},
        {"pos_init_std", c.saib.pos_init_std},
        {"batch_mixing", c.saib.batch_mixing}}},
      {"encoder",
       {{"stem_channels", c.encoder.stem_channels},
        {"projector_hidden", c.encoder.projector_hidden},
        {"projector_out", c.encoder.projector_out},
        {"activation", nn::to_string(c.encoder.activation)},
        {"n_power_iters", c.encoder.n_power_iters}}},
      {"optimizer",
       {{"name", c.optimizer.name},
        {"lr", c.optimizer.lr},
        {"weight_decay", c.optimizer.weight_decay},
        {"beta1", c.optimizer.beta1},
        {"beta2", c.optimizer.beta2},
        {"eps", c.optimizer.eps},
        {"momentum", c.optimizer.momentum},
        {"schedule", c.optimizer.schedule}}},
      {"loss",
       {{"tau", c.loss.weights.tau},
        {"lambda", c.loss.weights.lambda},
        {"beta", c.loss.weights.beta},
        {"gamma", c.loss.weights.gamma},
        {"eta", c.loss.weights.eta},
        {"eta_mode", to_string(c.loss.eta_mode)},
        {"allow_zero_weights", c.loss.allow_zero_weights}}},
      {"augment", {{"flip", c.augment.flip}, {"crop_pad", c.augment.crop_pad}, {"noise_sigma", c.augment.noise_sigma}}},
      {"eval",
       {{"probe_every", c.eval.probe_every},
        {"probe_iters", c.eval.probe_iters},
        {"probe_lr", c.eval.probe_lr},
        {"logdet_every", c.eval.logdet_every},
        {"logdet_samples", c.eval.logdet_samples}}},
      {"entropy", {{"estimator", entropy::to_string(c.monitor_estimator)}, {"k", c.knn_k}}},
      {"output", {{"metrics_csv", c.metrics_csv}, {"checkpoint", c.checkpoint}}},
  };
}

namespace {

// Reads the keys present in `j`, rejecting any key not listed in `known`.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: '" + label() + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config: '" + qualified(key) + "' has the wrong type");
    }
  }

  void get_activation(const char* key, nn::Activation& out) {
    std::string name = nn::to_string(out);
    get(key, name);
    try {
      out = nn::parse_activation(name);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("config: '" + qualified(key) + "': " + e.what());
    }
  }

  Reader child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    static const json empty = json::object();
    return Reader(it == j_.end() ? empty : *it, qualified(key));
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("config: unknown key '" + qualified(it.key()) + "'");
    }
  }

 private:
  std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  std::string label() const { return path_.empty() ? "<root>" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

IeclConfig from_json(const json& j, IeclConfig c) {
  Reader root(j, "");
  root.get("seed", c.seed);
  root.get("batch_size", c.batch_size);
  root.get("epochs", c.epochs);
  root.get("momentum", c.momentum);

  Reader data = root.child("data");
  data.get("n_classes", c.data.n_classes);
  data.get("n_per_class", c.data.n_per_class);
  data.get("channels", c.data.channels);
  data.get("height", c.data.height);
  data.get("width", c.data.width);
  data.get("noise_sigma", c.data.noise_sigma);
  data.finish();

  Reader saib = root.child("saib");
  saib.get("enabled", c.saib.enabled);
  saib.get("patch", c.saib.patch);
  saib.get_activation("activation", c.saib.activation);
  saib.get("pos_init_std", c.saib.pos_init_std);
  saib.get("batch_mixing", c.saib.batch_mixing);
  saib.finish();

  Reader enc = root.child("encoder");
  enc.get("stem_channels", c.encoder.stem_channels);
  enc.get("projector_hidden", c.encoder.projector_hidden);
  enc.get("projector_out", c.encoder.projector_out);
  enc.get_activation("activation", c.encoder.activation);
  enc.get("n_power_iters", c.encoder.n_power_iters);
  enc.finish();

  Reader opt = root.child("optimizer");
  opt.get("name", c.optimizer.name);
  opt.get("lr", c.optimizer.lr);
  opt.get("weight_decay", c.optimizer.weight_decay);
  opt.get("beta1", c.optimizer.beta1);
  opt.get("beta2", c.optimizer.beta2);
  opt.get("eps", c.optimizer.eps);
  opt.get("momentum", c.optimizer.momentum);
  opt.get("schedule", c.optimizer.schedule);
  opt.finish();

  Reader loss = root.child("loss");
  loss.get("tau", c.loss.weights.tau);
  loss.get("lambda", c.loss.weights.lambda);
  loss.get("beta", c.loss.weights.beta);
  loss.get("gamma", c.loss.weights.gamma);
  loss.get("eta", c.loss.weights.eta);
  std::string eta_mode = to_string(c.loss.eta_mode);
  loss.get("eta_mode", eta_mode);
  c.loss.eta_mode = parse_eta_mode(eta_mode);
  loss.get("allow_zero_weights", c.loss.allow_zero_weights);
  loss.finish();

  Reader aug = root.child("augment");
  aug.get("flip", c.augment.flip);
  aug.get("crop_pad", c.augment.crop_pad);
  aug.get("noise_sigma", c.augment.noise_sigma);
  aug.finish();

  Reader ev = root.child("eval");
  ev.get("probe_every", c.eval.probe_every);
  ev.get("probe_iters", c.eval.probe_iters);
  ev.get("probe_lr", c.eval.probe_lr);
  ev.get("logdet_every", c.eval.logdet_every);
  ev.get("logdet_samples", c.eval.logdet_samples);
  ev.finish();

  Reader ent = root.child("entropy");
  std::string estimator = entropy::to_string(c.monitor_estimator);
  ent.get("estimator", estimator);
  try {
    c.monitor_estimator = entropy::parse_estimator(estimator);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: entropy.estimator: ") + e.what());
  }
  ent.get("k", c.knn_k);
  ent.finish();

  Reader out = root.child("output");
  out.get("metrics_csv", c.metrics_csv);
  out.get("checkpoint", c.checkpoint);
  out.finish();

  root.finish();
  c.validate();
  return c;
}

IeclConfig load_config(const std::filesystem::path& path, IeclConfig base) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j, std::move(base));
}

}  // namespace iecl
