#pragma once

// Dataset construction and empirical-risk minimization of the filter network.
//
// Objective: mean over systems and supervised time steps of ||y_{t+1} - yhat_t||^2.
// A length-T trajectory supplies T-1 supervised pairs.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "ssmf/dataset.hpp"
#include "ssmf/model.hpp"

namespace ssmf {

/// M systems with one length-T trajectory each. System k is generated from
/// stream_rng(seed, stream, k), so the batch is deterministic per seed and
/// independent of generation order.
TrajectoryBatch make_dataset(const DistributionConfig& dist, int M, int T, std::uint64_t seed,
                             SeedStream stream = SeedStream::train, int threads = 1);

struct TrainConfig {
  int M = 500;                     // desk scale; the reference setting uses 10000
  int T = 50;
  int epochs = 50;
  int batch_size = 64;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip = 1.0;               // global gradient-norm clip; <= 0 disables
  std::uint64_t seed = 0;          // shuffling seed
  int threads = 1;
  double divergence_factor = 1e3;  // abort when a batch loss exceeds this times the first
};

struct TrainReport {
  std::vector<int> epochs;             // epoch numbers (1-based) run in this call
  std::vector<double> epoch_loss;      // mean loss per epoch
  std::vector<double> grad_norm;       // mean pre-clip gradient norm per epoch
  std::vector<double> wall_ms;
  std::vector<double> param_norm;
  double final_loss = 0.0;
};

class Adam {
 public:
  Adam(const TrainConfig& cfg, Eigen::Index size);
  Adam(const TrainConfig& cfg, OptimizerState state);

  void update(Eigen::VectorXd& theta, const Eigen::VectorXd& grad);
  const OptimizerState& state() const { return state_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  OptimizerState state_;
};

struct BatchGradient {
  double loss = 0.0;          // mean squared error over the batch's supervised pairs
  Eigen::VectorXd grad;       // gradient of `loss` in to_flat() order
};

/// Exact mean loss and flat gradient over the trajectories selected by indices.
/// Summation order is fixed, so the result is independent of `threads`.
BatchGradient batch_gradient(const FilterNet& net, std::span<const Eigen::MatrixXd> data,
                             std::span<const std::size_t> indices, int threads = 1);

/// Scales grad in place so its norm is <= clip; returns the pre-clip norm.
double clip_gradient(Eigen::VectorXd& grad, double clip);

struct FitState {
  std::uint64_t epoch = 0;  // completed epochs
  std::optional<OptimizerState> optimizer;
};

using EpochCallback = std::function<void(int epoch, double loss, double grad_norm, double wall_ms)>;

/// Trains from state.epoch up to cfg.epochs (total), updating net and state.
TrainReport fit(FilterNet& net, const TrajectoryBatch& batch, const TrainConfig& cfg, FitState& state,
                const EpochCallback& on_epoch = {});

/// Mean squared one-step error of a network over a batch (no gradient).
double mean_loss(const FilterNet& net, const TrajectoryBatch& batch, int threads = 1);

}  // namespace ssmf
