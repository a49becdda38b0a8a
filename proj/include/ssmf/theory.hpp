#pragma once

// Concrete constants of the robustness and generalization bounds, and the
// paired-perturbation probe of the robustness decay rate.
//
// Robustness statement being probed, for trajectories that differ only in
// the noise at time tau and with bounded noise (||w|| <= w_bar, ||v|| <= v_bar):
//
//   E'|l(y_t, yhat_t) - l(y'_t, yhat'_t)|
//       <= 2 L_l K_SSM (t-tau)^5 max(alpha, rho)^(t-tau) y_tilde
//
//   alpha   = exp(lambda_max(A))^softplus(p - ||q|| y_bar)
//   L_rho   = C_rho / (1 - rho)
//   y_bar   = L_g L_rho w_bar + v_bar
//   y_tilde = L_g C_rho w_bar + v_bar

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssmf/dataset.hpp"
#include "ssmf/model.hpp"

namespace ssmf {

/// exp(max a_diag)^softplus(p - ||q||_2 y_bar). StabilityError if any a_diag >= 0.
double compute_alpha(const SsmParams<double>& params, double y_bar);

/// Bound on the norm of the scan input of a block. The layer norm output has
/// norm <= sqrt(d), so the bound is sum_j max|conv_j| * max|gain| * sqrt(d)
/// (max|gain| * sqrt(d) without convolution), whatever the observations.
double block_input_bound(const SsmBlock& block);

/// alpha of every block evaluated at its own input bound.
std::vector<double> block_alphas(const FilterNet& net);

struct IssConstants {
  double rho = 0.0;    // spectral radius
  double c_rho = 0.0;  // sup_t ||A^t||_2 / rho^t
  double l_g = 0.0;    // ||C||_2
  double k = 0.0;      // c_rho / (1 - rho)
  int horizon = 0;     // last power examined (||A^t|| < 1e-12 beyond it)
};

IssConstants linear_system_iss_constants(const LinearSystem& sys);

/// Squared error with both arguments projected onto the ball of radius
/// y_bar. Lipschitz in each argument with constant 4 y_bar, bounded by (2 y_bar)^2.
struct ClippedLoss {
  double y_bar = 1.0;

  double operator()(const Eigen::Ref<const Eigen::VectorXd>& y, const Eigen::Ref<const Eigen::VectorXd>& yhat) const;
  double lipschitz() const { return 4.0 * y_bar; }
  double bound() const { return 4.0 * y_bar * y_bar; }
};

struct BoundConstants {
  double alpha = 0.0;
  std::vector<double> block_alpha;
  double rho = 0.0;
  double l_g = 0.0;
  double c_rho = 0.0;
  double l_rho = 0.0;
  double w_bar = 0.0;
  double v_bar = 0.0;
  double y_bar = 0.0;
  double y_tilde = 0.0;
  double l_ell = 0.0;
  double loss_bound = 0.0;  // B
  std::size_t n_theta = 0;
  int theta_blocks = 5;
};

BoundConstants bound_constants(const FilterNet& net, const LinearSystem& sys, double w_bar, double v_bar);

struct ProbeConfig {
  int tau = 10;
  int max_lag = 30;
  int pairs = 2000;
  int min_pairs = 2000;     // StatisticalPowerError below this
  double w_bar_sigmas = 4.0;  // w_bar = w_bar_sigmas * sigma_w
  double v_bar_sigmas = 4.0;
  std::uint64_t seed = 3;
  int threads = 1;
  bool zero_perturbation = false;
};

struct EnvelopeFit {
  int exponent = 5;
  double k_dominating = 0.0;  // smallest prefactor with every point past the peak on or below
  double k_least_squares = 0.0;
  double log_residual = 0.0;  // RMS of log(e_k) - log(K_ls s_k) over the fitted lags
  std::vector<double> envelope;  // k_dominating * s_k for every lag
};

struct DecayProbe {
  std::vector<int> lags;
  std::vector<double> mean_abs_loss_diff;
  std::vector<double> stderr_;
  std::vector<int> n_samples;
  int peak_lag = 0;
  double rate = 0.0;  // max(alpha, rho)
  EnvelopeFit fit5;
  EnvelopeFit fit3;
  std::string tighter;          // "exponent_3" or "exponent_5" by least-squares residual
  bool dominated = false;       // every point past the peak <= fit5 envelope
  double decay_factor = 0.0;    // peak / value at the last lag
  double log_slope = 0.0;       // least-squares slope of log(e_k) past the peak
  bool decay_ok = false;        // decay_factor >= 10
  bool slope_ok = false;        // log_slope <= log(rate) + 0.1
  bool pass() const { return dominated && decay_ok && slope_ok; }
};

/// The seeded system probed by the CLI and the acceptance run (probe_system stream, index 0).
LinearSystem seeded_probe_system(const DistributionConfig& dist, std::uint64_t seed);

/// Predicts column t of the result as the estimate of ys.col(t+1).
using Predictor = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>;

/// Pairs of trajectories of length tau + max_lag + 1 that differ only in
/// (w_tau, v_tau); for lag k the loss at t = tau + k compares y_t with the
/// prediction made from y_0..y_{t-1}. Every pair contributes one sample to
/// every lag.
DecayProbe robustness_decay(const Predictor& predictor, const LinearSystem& sys, double alpha,
                            const ProbeConfig& cfg, const ClippedLoss& loss);
DecayProbe robustness_decay(const FilterNet& net, const LinearSystem& sys, const ProbeConfig& cfg);

/// Fits K * k^p * rate^k to (lags, values) over lags >= first_lag.
EnvelopeFit fit_envelope(const std::vector<int>& lags, const std::vector<double>& values, double rate,
                         int exponent, int first_lag);

struct BoundInputs {
  double loss_bound = 0.0;  // B
  double l_ell = 0.0;
  double k_ssm = 1.0;
  double l_g = 0.0;
  double c_rho = 0.0;
  double rho = 0.0;
  std::size_t n_theta = 0;
  int theta_blocks = 5;
  int n = 5;
  int m = 3;
};

struct BoundTerms {
  double term_confidence = 0.0;     // 12 B delta
  double term_resolution = 0.0;     // 4 L_l epsilon
  double b_bar = 0.0;
  double b_bar_signed = 0.0;        // with the printed T^4 rho^T / log(rho) factor as is
  bool b_bar_sign_flag = false;     // printed factor was negative
  double epsilon_prime = 0.0;
  double log_covering_bound = 0.0;  // n_theta log(|Theta| sqrt(n_theta) eps')
  double term_complexity = 0.0;     // b_bar sqrt((log 4 + log E - log delta) / (c M T))
  bool complexity_clamped = false;  // radicand was negative and replaced by 0
  double total = 0.0;
  double c = 1.0;
  bool c_unidentified = true;
  bool epsilon_prime_flag = true;   // formula evaluated verbatim
};

BoundTerms generalization_bound_terms(const BoundInputs& in, long M, long T, double delta, double epsilon,
                                double sigma_w, double sigma_v, double c = 1.0);

struct MuSampleConfig {
  int samples = 64;
  int T = 50;
  DistributionConfig dist;
  std::uint64_t seed = 5;
};

/// max over sampled noise sequences and t of ||yhat_t - yhat'_t|| /
/// (max_i ||w_i|| + max_i ||v_i||). A lower bound on the supremum.
double empirical_mu_lower_bound(const FilterNet& a, const FilterNet& b, const MuSampleConfig& cfg);
/// Same sampler, max_t ||yhat_t|| / (max_i ||w_i|| + max_i ||v_i||).
double empirical_output_scale(const FilterNet& net, const MuSampleConfig& cfg);

std::string probe_csv(const DecayProbe& probe);
nlohmann::json probe_json(const DecayProbe& probe, const BoundConstants& consts, const IssConstants& iss,
                          const BoundTerms& bounds);

}  // namespace ssmf
