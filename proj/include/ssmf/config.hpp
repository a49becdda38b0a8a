#pragma once

// Declarative run configuration (YAML) shared by every CLI command.
//
//   seeds:      { data, test, probe, model }
//   model:      obs_dim embed_dim state_dim blocks conv_width norm_eps
//   systems:    n m radius sigma_w2 sigma_v2 noise window sigma_eta2 sigma_nu2
//   train:      M T epochs batch_size learning_rate beta1 beta2 eps clip divergence_factor
//   experiment: N T train_T methods burn_in identical_switch
//   probe:      tau max_lag pairs min_pairs w_bar_sigmas v_bar_sigmas zero_perturbation
//               delta epsilon mu_samples
//   output:     root directory for run folders
//   threads, deterministic
//
// Every key is optional; unknown keys are rejected with their line number.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssmf/dataset.hpp"
#include "ssmf/eval.hpp"
#include "ssmf/model.hpp"
#include "ssmf/theory.hpp"
#include "ssmf/train.hpp"

namespace ssmf {

struct Seeds {
  std::uint64_t data = 1;
  std::uint64_t test = 2;
  std::uint64_t probe = 3;
  std::uint64_t model = 0;
};

struct ProbeSettings {
  ProbeConfig decay;
  double delta = 0.05;
  double epsilon = 0.1;
  int mu_samples = 64;
};

struct RunConfig {
  Seeds seeds;
  ModelConfig model;
  DistributionConfig systems;
  TrainConfig train;
  ExperimentSpec experiment;
  ProbeSettings probe;
  std::string output;       // empty: environment variable or ./runs
  int threads = 1;
  bool deterministic = true;  // forces threads = 1

  /// Copies the seeds and thread count into the per-module configs.
  void propagate();
};

/// Parses YAML text. `source` names the text in diagnostics.
RunConfig parse_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_config(const std::string& path);

/// Applies "section.key=value" (or "key=value" for top-level keys).
void apply_override(RunConfig& cfg, const std::string& assignment);

/// Throws ConfigError on inconsistent settings (dimension mismatch, seed collision, ranges).
void validate_config(const RunConfig& cfg);

/// Canonical JSON of every setting that affects results (output and threads excluded).
nlohmann::json canonical_json(const RunConfig& cfg);
/// Lowercase hex SHA-256 of canonical_json(cfg).dump().
std::string config_digest(const RunConfig& cfg);

std::string sha256_hex(const std::string& bytes);

}  // namespace ssmf
