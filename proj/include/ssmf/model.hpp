#pragma once

// Stacked selective-SSM filter network.
//
//   e_0     = input_proj * y_t
//   n       = gain .* layer_norm(e)            (no bias)
//   x_t     = sum_j conv[:, j] .* n_{t-j}      (causal, depthwise, optional)
//   e_{b+1} = e_b + ssm_b(x)
//   yhat    = output_proj * e_last
//
// Prediction t is the estimate of y_{t+1} from y_0..y_t.

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "ssmf/ssm_core.hpp"

namespace ssmf {

struct ModelConfig {
  int obs_dim = 3;       // m
  int embed_dim = 512;   // d_e
  int state_dim = 256;   // l
  int blocks = 2;
  int conv_width = 2;    // 0 disables the convolution (pure selective scan)
  std::uint64_t seed = 0;
  double norm_eps = 1e-5;
};

struct SsmBlock {
  Eigen::VectorXd norm_gain;   // d
  Eigen::MatrixXd conv;        // d x conv_width; column j multiplies the input lagged by j
  Eigen::MatrixXd a_log;       // d x l; ssm.a_diag = -exp(a_log)
  SsmParams<double> ssm;

  void sync() { ssm.a_diag = -a_log.array().exp(); }
};

class FilterNet {
 public:
  FilterNet() = default;
  explicit FilterNet(const ModelConfig& config);  // random init from config.seed

  /// All-zero parameters with the right shapes (gradient accumulator).
  static FilterNet zeros(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }

  Eigen::MatrixXd input_proj;    // d x m
  std::vector<SsmBlock> blocks;
  Eigen::MatrixXd output_proj;   // m x d

  /// Recomputes each block's a_diag from a_log. Call after editing a_log.
  void sync();

 private:
  ModelConfig config_;
};

/// Visits every trainable tensor in the fixed serialization order:
/// input_proj, then per block {norm_gain, conv, a_log, w_b, w_c, p, q},
/// then output_proj. f(name, data, rows, cols); data is column-major.
template <typename Net, typename F>
void for_each_tensor(Net& net, F&& f) {
  f(std::string_view("input_proj"), net.input_proj.data(), net.input_proj.rows(), net.input_proj.cols());
  for (auto& b : net.blocks) {
    f(std::string_view("norm_gain"), b.norm_gain.data(), b.norm_gain.rows(), Eigen::Index(1));
    f(std::string_view("conv"), b.conv.data(), b.conv.rows(), b.conv.cols());
    f(std::string_view("a_log"), b.a_log.data(), b.a_log.rows(), b.a_log.cols());
    f(std::string_view("w_b"), b.ssm.w_b.data(), b.ssm.w_b.rows(), b.ssm.w_b.cols());
    f(std::string_view("w_c"), b.ssm.w_c.data(), b.ssm.w_c.rows(), b.ssm.w_c.cols());
    f(std::string_view("p"), &b.ssm.p, Eigen::Index(1), Eigen::Index(1));
    f(std::string_view("q"), b.ssm.q.data(), b.ssm.q.rows(), Eigen::Index(1));
  }
  f(std::string_view("output_proj"), net.output_proj.data(), net.output_proj.rows(), net.output_proj.cols());
}

/// Exact count of scalar trainable parameters.
std::size_t param_count(const FilterNet& net);
/// Count implied by a config without building the network.
std::size_t param_count(const ModelConfig& config);

Eigen::VectorXd to_flat(const FilterNet& net);
void from_flat(FilterNet& net, const Eigen::Ref<const Eigen::VectorXd>& flat);

/// Streaming evaluator: O(blocks * d * (l + conv_width)) memory regardless of
/// sequence length.
class FilterStream {
 public:
  explicit FilterStream(const FilterNet& net);
  /// Feeds y_t and returns the prediction of y_{t+1}.
  Eigen::VectorXd push(const Eigen::Ref<const Eigen::VectorXd>& y);
  void reset();

 private:
  const FilterNet* net_;
  std::vector<Eigen::MatrixXd> states_;
  std::vector<Eigen::MatrixXd> history_;  // d x conv_width ring of normalized inputs
  Eigen::Index t_ = 0;
};

/// Column t of the result predicts ys.col(t + 1). ys is m x T.
Eigen::MatrixXd predict_sequence(const FilterNet& net, const Eigen::Ref<const Eigen::MatrixXd>& ys);

struct LossGradient {
  double loss_sum = 0.0;     // sum_t ||y_{t+1} - yhat_t||^2
  std::size_t terms = 0;     // number of supervised pairs (T - 1)
  FilterNet grad;            // d(loss_sum)/d(parameter); a_log holds the chain-ruled gradient
};

/// One trajectory (m x T): predictions of y_1..y_{T-1} and the exact gradient of
/// their summed squared error.
LossGradient loss_and_gradient(const FilterNet& net, const Eigen::Ref<const Eigen::MatrixXd>& ys);

/// Gradient of sum_t upstream.col(t) . yhat_t for inputs ys (m x T).
FilterNet output_gradient(const FilterNet& net, const Eigen::Ref<const Eigen::MatrixXd>& ys,
                          const Eigen::Ref<const Eigen::MatrixXd>& upstream);

// ---------------------------------------------------------------------------
// Checkpoints

struct OptimizerState {
  std::uint64_t step = 0;
  Eigen::VectorXd first_moment;
  Eigen::VectorXd second_moment;
};

struct Checkpoint {
  FilterNet net;
  std::uint64_t epoch = 0;
  std::uint64_t data_seed = 0;     // seed of the training dataset (for test-set isolation)
  int train_horizon = 0;           // T used in training
  std::string config_digest;
  std::string tool_version;
  std::optional<OptimizerState> optimizer;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace ssmf
