#pragma once

// Oracle suites behind the `verify` subcommand. Every check compares a main
// code path with an independent reference and records the tolerance it was
// held to.

#include "iecl/oracles.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace iecl::verify {

struct OracleReport {
  std::string name;
  std::string inputs_digest;  // fnv1a64 of the inputs description, hex
  std::vector<double> measured;
  std::vector<double> reference;
  double tolerance = 0.0;
  bool pass = false;
  // Report-only checks never fail the run.
  bool hard = true;
  std::string notes;
};

nlohmann::json to_json(const OracleReport& r);
nlohmann::json to_json(const std::vector<OracleReport>& reports);
// Fixed-width human-readable summary.
std::string format_table(const std::vector<OracleReport>& reports);
bool all_hard_pass(const std::vector<OracleReport>& reports);

struct VerifyOptions {
  std::uint64_t seed = 42;
  // Sample-size override for the sampling-based suites; 0 keeps each
  // suite's default.
  Eigen::Index n = 0;
};

const std::vector<std::string>& suite_names();  // without "all"
// Throws std::invalid_argument for an unknown suite.
std::vector<OracleReport> run_verify(const std::string& suite, const VerifyOptions& opts);

// Individual suites.
std::vector<OracleReport> gradients_suite(const VerifyOptions& opts);
std::vector<OracleReport> jacobian_suite(const VerifyOptions& opts);
std::vector<OracleReport> entropy_law_suite(const VerifyOptions& opts);
std::vector<OracleReport> dv_bound_suite(const VerifyOptions& opts);
std::vector<OracleReport> kl_suite(const VerifyOptions& opts);
std::vector<OracleReport> spectral_suite(const VerifyOptions& opts);
std::vector<OracleReport> dpi_suite(const VerifyOptions& opts);
std::vector<OracleReport> expansion_stats_suite(const VerifyOptions& opts);

// Exact I(Z;Z+) against log N - mean InfoNCE over sampled batches with the
// critic sim(emb_a[i], emb_b[j]) / tau. Pass iff I >= bound - 3 SE.
OracleReport check_dv_bound(const std::string& name, const DiscreteJoint& joint, const Eigen::MatrixXd& emb_a,
                            const Eigen::MatrixXd& emb_b, double tau, Eigen::Index batch, Eigen::Index n_batches,
                            Rng& rng);

}  // namespace iecl::verify
