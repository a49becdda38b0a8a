#pragma once

// RMS error curves and the four evaluation protocols.
//
//   RMS(t) = sqrt( (1/N) sum_i ||y_{t+1}^i - yhat_{t+1}^i||^2 ),  t = 0..T-1
//
// Each test trajectory is simulated with T+1 outputs so that every t in
// 0..T-1 has a target.

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssmf/dataset.hpp"
#include "ssmf/model.hpp"

namespace ssmf {

struct RmsCurve {
  std::string method;
  Eigen::VectorXd values;   // length T
  int n_systems = 0;
  std::string config_digest;
  // Per-system mean squared error over the burn-in window, for standard errors.
  Eigen::VectorXd system_mse;
};

/// preds[i].col(t) is the prediction of truths[i].col(t). All m x T.
RmsCurve rms_curve(const std::string& method, const std::vector<Eigen::MatrixXd>& preds,
                   const std::vector<Eigen::MatrixXd>& truths, int burn_in = 10);

/// Mean of values over [lo, hi) clipped to the curve.
double window_mean(const RmsCurve& curve, int lo, int hi);

enum class ExperimentKind { linear_gaussian, switching, colored, length_gen };

std::string to_string(ExperimentKind kind);
/// Accepts both "linear-gaussian" and "linear_gaussian" spellings.
ExperimentKind parse_experiment_kind(const std::string& name);

struct ExperimentSpec {
  ExperimentKind kind = ExperimentKind::linear_gaussian;
  int N = 200;
  int T = 50;
  std::optional<int> train_T;          // length_gen only
  std::uint64_t seed = 2;              // test-system pool
  std::vector<std::string> methods;    // empty: kind default
  DistributionConfig dist;             // colored kind overrides dist.noise
  bool identical_switch = false;       // switching: sys2 = sys1
  int burn_in = 10;
  int threads = 1;
  std::string config_digest;
};

/// Methods run when spec.methods is empty.
std::vector<std::string> default_methods(ExperimentKind kind);

struct ExperimentResult {
  ExperimentSpec spec;
  std::vector<RmsCurve> curves;

  const RmsCurve& curve(const std::string& method) const;
};

/// Draws N fresh systems from (spec.seed, test stream), simulates T+1 outputs
/// each and evaluates every method on the same trajectories. net may be null
/// when "ssm" is not requested. train_seed (the training dataset's seed) must
/// differ from spec.seed.
ExperimentResult run_experiment(const ExperimentSpec& spec, const FilterNet* net,
                                std::optional<std::uint64_t> train_seed = std::nullopt);

/// Columns t,method,rms,n_systems,config_digest (+ past_train_horizon for length_gen).
std::string curves_csv(const ExperimentResult& result);
nlohmann::json summary_json(const ExperimentResult& result);

}  // namespace ssmf
