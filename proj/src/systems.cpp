#include "ssmf/systems.hpp"

#include <cmath>
#include <sstream>

#include "ssmf/errors.hpp"

namespace ssmf {

Rng stream_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

double spectral_radius(const Eigen::MatrixXd& a) {
  require(a.rows() == a.cols() && a.rows() > 0, "spectral_radius: matrix must be square");
  Eigen::EigenSolver<Eigen::MatrixXd> es(a, /*computeEigenvectors=*/false);
  if (es.info() != Eigen::Success) throw NumericError("spectral_radius: eigenvalue solver failed");
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

double spectral_norm(const Eigen::MatrixXd& a) {
  if (a.size() == 0) return 0.0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  return svd.singularValues()(0);
}

Eigen::MatrixXd observability_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& c) {
  const Eigen::Index n = a.rows(), m = c.rows();
  Eigen::MatrixXd obs(n * m, n);
  Eigen::MatrixXd block = c;
  for (Eigen::Index k = 0; k < n; ++k) {
    obs.middleRows(k * m, m) = block;
    block = block * a;
  }
  return obs;
}

bool is_observable(const Eigen::MatrixXd& a, const Eigen::MatrixXd& c, double rel_tol) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(observability_matrix(a, c));
  const auto& s = svd.singularValues();
  if (s.size() < a.rows() || s(0) <= 0.0) return false;
  return s(a.rows() - 1) > rel_tol * s(0);
}

Eigen::MatrixXd rescale_to_radius(const Eigen::MatrixXd& a, double target) {
  const double rho = spectral_radius(a);
  if (!(rho > 0.0)) throw GenerationError("rescale_to_radius: matrix has zero spectral radius");
  return a * (target / rho);
}

LinearSystem make_linear_system(Eigen::MatrixXd a, Eigen::MatrixXd c, double sigma_w2, double sigma_v2) {
  require(a.rows() == a.cols(), "make_linear_system: A must be square");
  require(c.cols() == a.rows(), "make_linear_system: C must have n columns");
  LinearSystem sys;
  sys.a_mat = std::move(a);
  sys.c_mat = std::move(c);
  sys.sigma_w2 = sigma_w2;
  sys.sigma_v2 = sigma_v2;
  sys.spectral_radius = spectral_radius(sys.a_mat);
  sys.observable = is_observable(sys.a_mat, sys.c_mat);
  return sys;
}

LinearSystem sample_linear_system(Rng& rng, int n, int m, double target_radius, double sigma_w2,
                                  double sigma_v2) {
  require(n >= 1 && m >= 1, "sample_linear_system: n and m must be >= 1");
  require(target_radius > 0.0, "sample_linear_system: target radius must be positive");
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  for (int attempt = 0; attempt < 100; ++attempt) {
    Eigen::MatrixXd a(n, n), c(m, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) a(i, j) = unif(rng);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) c(i, j) = unif(rng);
    const double rho = spectral_radius(a);
    if (!(rho > 0.0)) continue;
    a *= target_radius / rho;
    LinearSystem sys = make_linear_system(std::move(a), std::move(c), sigma_w2, sigma_v2);
    if (sys.observable) return sys;
  }
  throw GenerationError("sample_linear_system: 100 consecutive unobservable draws");
}

NonlinearSystem sample_nonlinear_system(Rng& rng, int n, int m, double sigma_w2, double sigma_v2) {
  require(n >= 1 && m >= 1, "sample_nonlinear_system: n and m must be >= 1");
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  NonlinearSystem sys;
  sys.gamma.resize(n, n);
  sys.c_mat.resize(m, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) sys.gamma(i, j) = unif(rng);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) sys.c_mat(i, j) = unif(rng);
  const double norm = spectral_norm(sys.gamma);
  if (norm > 0.0) sys.gamma *= 0.9 / norm;
  sys.sigma_w2 = sigma_w2;
  sys.sigma_v2 = sigma_v2;
  sys.contraction = spectral_norm(sys.gamma);
  sys.output_lipschitz = spectral_norm(sys.c_mat);
  return sys;
}

namespace {

Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double variance, Rng& rng) {
  Eigen::MatrixXd out(rows, cols);
  std::normal_distribution<double> nd(0.0, std::sqrt(variance));
  for (Eigen::Index t = 0; t < cols; ++t)
    for (Eigen::Index i = 0; i < rows; ++i) out(i, t) = nd(rng);
  return out;
}

Eigen::MatrixXd moving_average(const Eigen::MatrixXd& base, int window, int T) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(base.rows(), T);
  const double scale = 1.0 / std::sqrt(static_cast<double>(window));
  // base column (t + window - 1) holds index t of the underlying sequence
  for (int t = 0; t < T; ++t) {
    for (int j = 0; j < window; ++j) out.col(t) += base.col(t + j);
    out.col(t) *= scale;
  }
  return out;
}

Eigen::VectorXd bounded_gaussian(Eigen::Index dim, double variance, double bound, Rng& rng) {
  std::normal_distribution<double> nd(0.0, std::sqrt(variance));
  Eigen::VectorXd v(dim);
  for (int attempt = 0; attempt < 100000; ++attempt) {
    for (Eigen::Index i = 0; i < dim; ++i) v(i) = nd(rng);
    if (v.norm() <= bound) return v;
  }
  std::ostringstream os;
  os << "bounded noise: bound " << bound << " too tight for variance " << variance
     << " (1e5 rejections)";
  throw GenerationError(os.str());
}

}  // namespace

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> draw_noise(const NoiseModel& noise, Eigen::Index n, Eigen::Index m,
                                                        int T, double sigma_w2, double sigma_v2, Rng& rng) {
  require(T >= 1, "draw_noise: T must be >= 1");
  if (noise.kind == NoiseKind::white) {
    Eigen::MatrixXd ws = gaussian_matrix(n, T, sigma_w2, rng);
    Eigen::MatrixXd vs = gaussian_matrix(m, T, sigma_v2, rng);
    return {std::move(ws), std::move(vs)};
  }
  require(noise.window >= 1, "draw_noise: colored window must be >= 1");
  const int len = T + noise.window - 1;
  const Eigen::MatrixXd eta = gaussian_matrix(n, len, noise.sigma_eta2, rng);
  const Eigen::MatrixXd nu = gaussian_matrix(m, len, noise.sigma_nu2, rng);
  return {moving_average(eta, noise.window, T), moving_average(nu, noise.window, T)};
}

Trajectory simulate(const LinearSystem& sys, const NoiseModel& noise, int T, Rng& rng) {
  auto [ws, vs] = draw_noise(noise, sys.n(), sys.m(), T, sys.sigma_w2, sys.sigma_v2, rng);
  return simulate_from_noise(sys, ws, vs);
}

Trajectory simulate(const NonlinearSystem& sys, const NoiseModel& noise, int T, Rng& rng) {
  auto [ws, vs] = draw_noise(noise, sys.n(), sys.m(), T, sys.sigma_w2, sys.sigma_v2, rng);
  return simulate_from_noise(sys, ws, vs);
}

Trajectory simulate_switching(const SwitchingSystem& sw, int T, Rng& rng, const NoiseModel& noise) {
  require(T >= 1, "simulate_switching: T must be >= 1");
  require(sw.switch_time >= 0 || T % 2 == 0, "simulate_switching: T must be even when switching at T/2");
  require(sw.switch_time <= T, "simulate_switching: switch time beyond the horizon");
  require(sw.sys1.n() == sw.sys2.n() && sw.sys1.m() == sw.sys2.m(),
          "simulate_switching: subsystems must share dimensions");
  auto [ws, vs] = draw_noise(noise, sw.sys1.n(), sw.sys1.m(), T, sw.sys1.sigma_w2, sw.sys1.sigma_v2, rng);
  const int half = sw.switch_time >= 0 ? sw.switch_time : T / 2;
  Trajectory tr;
  tr.ws = ws;
  tr.vs = vs;
  tr.xs.resize(sw.sys1.n(), T);
  tr.ys.resize(sw.sys1.m(), T);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(sw.sys1.n());
  for (int t = 0; t < T; ++t) {
    const LinearSystem& s = t < half ? sw.sys1 : sw.sys2;
    tr.xs.col(t) = x;
    tr.ys.col(t) = s.output(x) + vs.col(t);
    x = s.advance(x) + ws.col(t);
  }
  return tr;
}

PerturbedPair simulate_perturbed_pair(const LinearSystem& sys, int T, int tau, Rng& rng, double w_bar,
                                      double v_bar, bool zero_perturbation) {
  require(T >= 1, "simulate_perturbed_pair: T must be >= 1");
  require(tau >= 0 && tau < T, "simulate_perturbed_pair: need 0 <= tau < T");
  require(w_bar >= 0.0 && v_bar >= 0.0, "simulate_perturbed_pair: bounds must be non-negative");
  Eigen::MatrixXd ws(sys.n(), T), vs(sys.m(), T);
  for (int t = 0; t < T; ++t) ws.col(t) = bounded_gaussian(sys.n(), sys.sigma_w2, w_bar, rng);
  for (int t = 0; t < T; ++t) vs.col(t) = bounded_gaussian(sys.m(), sys.sigma_v2, v_bar, rng);
  Eigen::MatrixXd ws2 = ws, vs2 = vs;
  if (!zero_perturbation) {
    ws2.col(tau) = bounded_gaussian(sys.n(), sys.sigma_w2, w_bar, rng);
    vs2.col(tau) = bounded_gaussian(sys.m(), sys.sigma_v2, v_bar, rng);
  }
  return {simulate_from_noise(sys, ws, vs), simulate_from_noise(sys, ws2, vs2)};
}

}  // namespace ssmf
