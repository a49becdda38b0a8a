#include "ssmf/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ssmf/parallel.hpp"

namespace ssmf {

TrajectoryBatch make_dataset(const DistributionConfig& dist, int M, int T, std::uint64_t seed, SeedStream stream,
                             int threads) {
  require(M >= 1 && T >= 1, "make_dataset: M and T must be >= 1");
  TrajectoryBatch batch;
  batch.dist = dist;
  batch.horizon = T;
  batch.seed = seed;
  batch.items.resize(static_cast<std::size_t>(M));
  batch.systems.resize(static_cast<std::size_t>(M));
  parallel_for(static_cast<std::size_t>(M), threads, [&](std::size_t k) {
    Rng rng = stream_rng(seed, static_cast<std::uint64_t>(stream), k);
    batch.systems[k] = sample_linear_system(rng, dist.n, dist.m, dist.radius, dist.sigma_w2, dist.sigma_v2);
    batch.items[k] = simulate(batch.systems[k], dist.noise, T, rng);
  });
  return batch;
}

Adam::Adam(const TrainConfig& cfg, Eigen::Index size)
    : lr_(cfg.learning_rate), beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.eps) {
  state_.first_moment = Eigen::VectorXd::Zero(size);
  state_.second_moment = Eigen::VectorXd::Zero(size);
}

Adam::Adam(const TrainConfig& cfg, OptimizerState state)
    : lr_(cfg.learning_rate), beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.eps), state_(std::move(state)) {}

void Adam::update(Eigen::VectorXd& theta, const Eigen::VectorXd& grad) {
  require(grad.size() == theta.size() && grad.size() == state_.first_moment.size(), "Adam: size mismatch");
  ++state_.step;
  state_.first_moment = beta1_ * state_.first_moment + (1.0 - beta1_) * grad;
  state_.second_moment = beta2_ * state_.second_moment + (1.0 - beta2_) * grad.cwiseAbs2();
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(state_.step));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(state_.step));
  theta.array() -= lr_ * (state_.first_moment.array() / bc1) /
                   ((state_.second_moment.array() / bc2).sqrt() + eps_);
}

BatchGradient batch_gradient(const FilterNet& net, std::span<const Eigen::MatrixXd> data,
                             std::span<const std::size_t> indices, int threads) {
  require(!indices.empty(), "batch_gradient: empty batch");
  std::vector<LossGradient> parts(indices.size());
  parallel_for(indices.size(), threads, [&](std::size_t i) { parts[i] = loss_and_gradient(net, data[indices[i]]); });

  BatchGradient out;
  out.grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(param_count(net)));
  std::size_t terms = 0;
  for (const LossGradient& p : parts) {
    out.loss += p.loss_sum;
    out.grad += to_flat(p.grad);
    terms += p.terms;
  }
  out.loss /= static_cast<double>(terms);
  out.grad /= static_cast<double>(terms);
  return out;
}

double clip_gradient(Eigen::VectorXd& grad, double clip) {
  const double norm = grad.norm();
  if (clip > 0.0 && norm > clip) grad *= clip / norm;
  return norm;
}

TrainReport fit(FilterNet& net, const TrajectoryBatch& batch, const TrainConfig& cfg, FitState& state,
                const EpochCallback& on_epoch) {
  require(cfg.epochs >= 1 && cfg.batch_size >= 1, "fit: epochs and batch_size must be >= 1");
  require(cfg.learning_rate > 0.0, "fit: learning_rate must be > 0");
  require(!batch.items.empty(), "fit: empty dataset");
  require(batch.dist.m == net.config().obs_dim, "fit: dataset observation width does not match the network");
  require(batch.horizon >= 2, "fit: trajectories need at least two observations");

  std::vector<Eigen::MatrixXd> data;
  data.reserve(batch.items.size());
  for (const Trajectory& tr : batch.items) data.push_back(tr.ys);

  Eigen::VectorXd theta = to_flat(net);
  Adam adam = state.optimizer ? Adam(cfg, *state.optimizer) : Adam(cfg, theta.size());

  TrainReport report;
  std::vector<std::size_t> order(data.size());
  double first_loss = -1.0;
  for (int epoch = static_cast<int>(state.epoch) + 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng = stream_rng(cfg.seed, static_cast<std::uint64_t>(SeedStream::shuffle),
                                 static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_acc = 0.0, norm_acc = 0.0;
    std::size_t n_batches = 0, n_samples = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(cfg.batch_size));
      std::span<const std::size_t> idx(order.data() + lo, hi - lo);
      BatchGradient bg;
      try {
        bg = batch_gradient(net, data, idx, cfg.threads);
      } catch (const NumericError& e) {
        std::ostringstream os;
        os << "fit: epoch " << epoch << ", batch " << n_batches << ": " << e.what();
        throw NumericError(os.str());
      }
      if (!std::isfinite(bg.loss) || !bg.grad.allFinite()) {
        std::ostringstream os;
        os << "fit: non-finite loss at epoch " << epoch << ", batch " << n_batches;
        throw NumericError(os.str());
      }
      if (first_loss < 0.0) {
        first_loss = bg.loss;
      } else if (first_loss > 0.0 && bg.loss > cfg.divergence_factor * first_loss) {
        std::ostringstream os;
        os << "fit: diverged at epoch " << epoch << ", batch " << n_batches << " (loss " << bg.loss
           << " vs initial " << first_loss << ")";
        throw NumericError(os.str());
      }
      norm_acc += clip_gradient(bg.grad, cfg.clip);
      adam.update(theta, bg.grad);
      from_flat(net, theta);
      loss_acc += bg.loss * static_cast<double>(hi - lo);
      n_samples += hi - lo;
      ++n_batches;
    }
    const double wall = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    report.epochs.push_back(epoch);
    report.epoch_loss.push_back(loss_acc / static_cast<double>(n_samples));
    report.grad_norm.push_back(norm_acc / static_cast<double>(n_batches));
    report.wall_ms.push_back(wall);
    report.param_norm.push_back(theta.norm());
    state.epoch = static_cast<std::uint64_t>(epoch);
    if (on_epoch) on_epoch(epoch, report.epoch_loss.back(), report.grad_norm.back(), wall);
  }
  state.optimizer = adam.state();
  report.final_loss = report.epoch_loss.empty() ? 0.0 : report.epoch_loss.back();
  return report;
}

double mean_loss(const FilterNet& net, const TrajectoryBatch& batch, int threads) {
  std::vector<double> sums(batch.items.size());
  std::vector<std::size_t> terms(batch.items.size());
  parallel_for(batch.items.size(), threads, [&](std::size_t k) {
    const Eigen::MatrixXd& ys = batch.items[k].ys;
    const Eigen::Index T = ys.cols() - 1;
    const Eigen::MatrixXd preds = predict_sequence(net, ys.leftCols(T));
    sums[k] = (ys.rightCols(T) - preds).squaredNorm();
    terms[k] = static_cast<std::size_t>(T);
  });
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < sums.size(); ++k) {
    s += sums[k];
    n += terms[k];
  }
  return s / static_cast<double>(n);
}

}  // namespace ssmf
