#pragma once

// Random linear (and contractive nonlinear) systems and their simulation.
//
// Noise indexing: ws.col(t) is the process noise that enters x_{t+1} and
// vs.col(t) the measurement noise on y_t:
//   x_0 = x0 (zero by default)
//   x_{t+1} = f(x_t) + ws.col(t)
//   y_t     = g(x_t) + vs.col(t)

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <random>
#include <utility>

namespace ssmf {

using Rng = std::mt19937_64;

/// Independent generator for (seed, stream, index); used so that system k of a
/// dataset does not depend on how many draws systems 0..k-1 consumed.
Rng stream_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

/// Stream tags separating the seed pools of different consumers.
enum class SeedStream : std::uint64_t {
  train = 1,
  test = 2,
  probe = 3,
  model = 4,
  shuffle = 5,
  probe_system = 6,
  mu = 7,
};

struct LinearSystem {
  Eigen::MatrixXd a_mat;  // n x n
  Eigen::MatrixXd c_mat;  // m x n
  double sigma_w2 = 0.01;
  double sigma_v2 = 0.01;
  double spectral_radius = 0.0;
  bool observable = false;

  Eigen::Index n() const { return a_mat.rows(); }
  Eigen::Index m() const { return c_mat.rows(); }

  Eigen::VectorXd advance(const Eigen::VectorXd& x) const { return a_mat * x; }
  Eigen::VectorXd output(const Eigen::VectorXd& x) const { return c_mat * x; }
};

/// x_{t+1} = gamma * tanh(x_t) + w, y = C x + v, with ||gamma||_2 <= 0.9.
struct NonlinearSystem {
  Eigen::MatrixXd gamma;
  Eigen::MatrixXd c_mat;
  double sigma_w2 = 0.01;
  double sigma_v2 = 0.01;
  double contraction = 0.0;  // ||gamma||_2, per-step incremental contraction factor
  double output_lipschitz = 0.0;  // ||C||_2

  Eigen::Index n() const { return gamma.rows(); }
  Eigen::Index m() const { return c_mat.rows(); }

  Eigen::VectorXd advance(const Eigen::VectorXd& x) const { return gamma * x.array().tanh().matrix(); }
  Eigen::VectorXd output(const Eigen::VectorXd& x) const { return c_mat * x; }
};

struct SwitchingSystem {
  LinearSystem sys1;
  LinearSystem sys2;
  int switch_time = -1;  // first index using sys2; negative means T/2 (T must then be even)
};

enum class NoiseKind { white, colored };

struct NoiseModel {
  NoiseKind kind = NoiseKind::white;
  int window = 15;
  // Variances of the underlying i.i.d. sequences for colored noise. White
  // noise uses the system's own sigma_w2 / sigma_v2.
  double sigma_eta2 = 0.01;
  double sigma_nu2 = 0.01;

  static NoiseModel white() { return {}; }
  static NoiseModel colored(int window = 15, double sigma_eta2 = 0.01, double sigma_nu2 = 0.01) {
    return {NoiseKind::colored, window, sigma_eta2, sigma_nu2};
  }
};

struct Trajectory {
  Eigen::MatrixXd ys;  // m x T
  Eigen::MatrixXd xs;  // n x T
  Eigen::MatrixXd ws;  // n x T
  Eigen::MatrixXd vs;  // m x T
};

double spectral_radius(const Eigen::MatrixXd& a);
double spectral_norm(const Eigen::MatrixXd& a);

Eigen::MatrixXd observability_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& c);
/// Rank test on the stacked observability matrix: smallest singular value must
/// exceed rel_tol times the largest.
bool is_observable(const Eigen::MatrixXd& a, const Eigen::MatrixXd& c, double rel_tol = 1e-8);

/// a * (target / rho(a)).
Eigen::MatrixXd rescale_to_radius(const Eigen::MatrixXd& a, double target);

/// Wraps given matrices and fills in the certificates without rescaling.
LinearSystem make_linear_system(Eigen::MatrixXd a, Eigen::MatrixXd c, double sigma_w2 = 0.01,
                                double sigma_v2 = 0.01);

/// Entries i.i.d. U[-1,1], A rescaled to target_radius, redrawn until the
/// pair is observable (GenerationError after 100 rejections).
LinearSystem sample_linear_system(Rng& rng, int n, int m, double target_radius = 0.95,
                                  double sigma_w2 = 0.01, double sigma_v2 = 0.01);

NonlinearSystem sample_nonlinear_system(Rng& rng, int n, int m, double sigma_w2 = 0.01,
                                        double sigma_v2 = 0.01);

/// Draws (ws, vs) for T steps. Colored noise draws window-1 warm-up samples of
/// the underlying sequences so every entry averages a full window.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> draw_noise(const NoiseModel& noise, Eigen::Index n,
                                                        Eigen::Index m, int T, double sigma_w2,
                                                        double sigma_v2, Rng& rng);

template <typename System>
Trajectory simulate_from_noise(const System& sys, const Eigen::MatrixXd& ws, const Eigen::MatrixXd& vs,
                               const std::optional<Eigen::VectorXd>& x0 = std::nullopt) {
  const Eigen::Index T = ws.cols();
  Trajectory tr;
  tr.ws = ws;
  tr.vs = vs;
  tr.xs.resize(sys.n(), T);
  tr.ys.resize(sys.m(), T);
  Eigen::VectorXd x = x0 ? *x0 : Eigen::VectorXd::Zero(sys.n());
  for (Eigen::Index t = 0; t < T; ++t) {
    tr.xs.col(t) = x;
    tr.ys.col(t) = sys.output(x) + vs.col(t);
    x = sys.advance(x) + ws.col(t);
  }
  return tr;
}

Trajectory simulate(const LinearSystem& sys, const NoiseModel& noise, int T, Rng& rng);
Trajectory simulate(const NonlinearSystem& sys, const NoiseModel& noise, int T, Rng& rng);

/// (A1, C1) for t < switch time, (A2, C2) afterwards; the state carries over. Draws
/// noise exactly like simulate() so prefixes match a non-switching run.
Trajectory simulate_switching(const SwitchingSystem& sw, int T, Rng& rng,
                              const NoiseModel& noise = NoiseModel::white());

struct PerturbedPair {
  Trajectory nominal;
  Trajectory perturbed;
};

/// Two trajectories sharing every noise sample except (w_tau, v_tau). All
/// samples satisfy ||w|| <= w_bar and ||v|| <= v_bar (drawn by rejection).
/// With zero_perturbation the replacement equals the original sample.
PerturbedPair simulate_perturbed_pair(const LinearSystem& sys, int T, int tau, Rng& rng, double w_bar,
                                      double v_bar, bool zero_perturbation = false);

}  // namespace ssmf
