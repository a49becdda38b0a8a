#include "ssmf/theory.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "ssmf/errors.hpp"
#include "ssmf/parallel.hpp"
#include "ssmf/version.hpp"

namespace ssmf {

double compute_alpha(const SsmParams<double>& params, double y_bar) {
  require(y_bar >= 0.0, "compute_alpha: y_bar must be non-negative");
  require(params.a_diag.size() > 0, "compute_alpha: empty a_diag");
  const double lambda_max = params.a_diag.maxCoeff();
  if (!(lambda_max < 0.0)) {
    std::ostringstream os;
    os << "compute_alpha: a_diag has an entry " << lambda_max << " >= 0";
    throw StabilityError(os.str());
  }
  const double exponent = softplus(params.p - params.q.norm() * y_bar);
  return std::exp(lambda_max * exponent);
}

double block_input_bound(const SsmBlock& block) {
  const double d = static_cast<double>(block.norm_gain.size());
  const double gain = block.norm_gain.cwiseAbs().maxCoeff();
  double taps = 1.0;
  if (block.conv.cols() > 0) {
    taps = 0.0;
    for (Eigen::Index j = 0; j < block.conv.cols(); ++j) taps += block.conv.col(j).cwiseAbs().maxCoeff();
  }
  return taps * gain * std::sqrt(d);
}

std::vector<double> block_alphas(const FilterNet& net) {
  std::vector<double> out;
  out.reserve(net.blocks.size());
  for (const SsmBlock& b : net.blocks) out.push_back(compute_alpha(b.ssm, block_input_bound(b)));
  return out;
}

IssConstants linear_system_iss_constants(const LinearSystem& sys) {
  const Eigen::MatrixXd& a = sys.a_mat;
  require(a.rows() == a.cols() && a.rows() > 0, "linear_system_iss_constants: A must be square");
  IssConstants c;
  c.rho = spectral_radius(a);
  if (!(c.rho < 1.0)) {
    std::ostringstream os;
    os << "linear_system_iss_constants: spectral radius " << c.rho << " is not below 1";
    throw ContractViolation(os.str());
  }
  c.l_g = spectral_norm(sys.c_mat);
  const double log_rho = std::log(c.rho);
  constexpr int kMaxPowers = 10'000'000;
  Eigen::MatrixXd power = Eigen::MatrixXd::Identity(a.rows(), a.cols());
  c.c_rho = 1.0;
  int t = 0;
  for (;;) {
    ++t;
    power = power * a;
    const double norm = spectral_norm(power);
    if (norm < 1e-12) break;
    c.c_rho = std::max(c.c_rho, std::exp(std::log(norm) - t * log_rho));
    if (t >= kMaxPowers) throw ContractViolation("linear_system_iss_constants: powers of A did not decay");
  }
  c.horizon = t;
  c.k = c.c_rho / (1.0 - c.rho);
  return c;
}

namespace {

Eigen::VectorXd project_ball(const Eigen::Ref<const Eigen::VectorXd>& v, double radius) {
  const double norm = v.norm();
  if (norm <= radius) return v;
  return v * (radius / norm);
}

}  // namespace

double ClippedLoss::operator()(const Eigen::Ref<const Eigen::VectorXd>& y,
                               const Eigen::Ref<const Eigen::VectorXd>& yhat) const {
  return (project_ball(y, y_bar) - project_ball(yhat, y_bar)).squaredNorm();
}

BoundConstants bound_constants(const FilterNet& net, const LinearSystem& sys, double w_bar, double v_bar) {
  require(w_bar >= 0.0 && v_bar >= 0.0, "bound_constants: noise bounds must be non-negative");
  const IssConstants iss = linear_system_iss_constants(sys);
  BoundConstants k;
  k.block_alpha = block_alphas(net);
  k.alpha = k.block_alpha.empty() ? 0.0 : *std::max_element(k.block_alpha.begin(), k.block_alpha.end());
  k.rho = iss.rho;
  k.l_g = iss.l_g;
  k.c_rho = iss.c_rho;
  k.l_rho = iss.k;
  k.w_bar = w_bar;
  k.v_bar = v_bar;
  k.y_bar = k.l_g * k.l_rho * w_bar + v_bar;
  k.y_tilde = k.l_g * k.c_rho * w_bar + v_bar;
  const ClippedLoss loss{k.y_bar};
  k.l_ell = loss.lipschitz();
  k.loss_bound = loss.bound();
  k.n_theta = param_count(net);
  k.theta_blocks = 5;
  return k;
}

EnvelopeFit fit_envelope(const std::vector<int>& lags, const std::vector<double>& values, double rate,
                         int exponent, int first_lag) {
  require(lags.size() == values.size(), "fit_envelope: lags and values differ in length");
  require(rate > 0.0, "fit_envelope: rate must be positive");
  EnvelopeFit fit;
  fit.exponent = exponent;
  auto shape = [&](int k) { return std::pow(static_cast<double>(k), exponent) * std::pow(rate, k); };

  std::vector<double> r;
  for (std::size_t i = 0; i < lags.size(); ++i)
    if (lags[i] >= first_lag && values[i] > 0.0) r.push_back(std::log(values[i]) - std::log(shape(lags[i])));
  if (!r.empty()) {
    double mean = 0.0;
    for (double x : r) mean += x;
    mean /= static_cast<double>(r.size());
    double ss = 0.0;
    for (double x : r) ss += (x - mean) * (x - mean);
    fit.k_least_squares = std::exp(mean);
    fit.log_residual = std::sqrt(ss / static_cast<double>(r.size()));
    fit.k_dominating = std::exp(*std::max_element(r.begin(), r.end()));
  }
  fit.envelope.reserve(lags.size());
  for (int k : lags) fit.envelope.push_back(fit.k_dominating * shape(k));
  return fit;
}

LinearSystem seeded_probe_system(const DistributionConfig& dist, std::uint64_t seed) {
  Rng rng = stream_rng(seed, static_cast<std::uint64_t>(SeedStream::probe_system), 0);
  return sample_linear_system(rng, dist.n, dist.m, dist.radius, dist.sigma_w2, dist.sigma_v2);
}

DecayProbe robustness_decay(const Predictor& predictor, const LinearSystem& sys, double alpha,
                            const ProbeConfig& cfg, const ClippedLoss& loss) {
  require(cfg.tau >= 0, "robustness_decay: tau must be non-negative");
  require(cfg.max_lag >= 1, "robustness_decay: max_lag must be at least 1");
  require(cfg.pairs >= 1, "robustness_decay: pairs must be at least 1");
  if (cfg.pairs < cfg.min_pairs) {
    std::ostringstream os;
    os << "robustness_decay: " << cfg.pairs << " pairs per lag is below the minimum " << cfg.min_pairs;
    throw StatisticalPowerError(os.str());
  }
  const double w_bar = cfg.w_bar_sigmas * std::sqrt(sys.sigma_w2);
  const double v_bar = cfg.v_bar_sigmas * std::sqrt(sys.sigma_v2);
  const int T = cfg.tau + cfg.max_lag + 1;
  const auto pairs = static_cast<std::size_t>(cfg.pairs);

  // diffs(k-1, i): |l - l'| of pair i at lag k.
  Eigen::MatrixXd diffs(cfg.max_lag, cfg.pairs);
  parallel_for(pairs, cfg.threads, [&](std::size_t i) {
    Rng rng = stream_rng(cfg.seed, static_cast<std::uint64_t>(SeedStream::probe), i);
    const PerturbedPair pp = simulate_perturbed_pair(sys, T, cfg.tau, rng, w_bar, v_bar, cfg.zero_perturbation);
    const Eigen::MatrixXd p0 = predictor(pp.nominal.ys);
    const Eigen::MatrixXd p1 = predictor(pp.perturbed.ys);
    require(p0.rows() == sys.m() && p0.cols() >= T - 1 && p1.rows() == p0.rows() && p1.cols() == p0.cols(),
            "robustness_decay: predictor returned the wrong shape");
    for (int k = 1; k <= cfg.max_lag; ++k) {
      const int t = cfg.tau + k;
      const double l0 = loss(pp.nominal.ys.col(t), p0.col(t - 1));
      const double l1 = loss(pp.perturbed.ys.col(t), p1.col(t - 1));
      diffs(k - 1, static_cast<Eigen::Index>(i)) = std::abs(l0 - l1);
    }
  });

  DecayProbe probe;
  for (int k = 1; k <= cfg.max_lag; ++k) {
    const Eigen::VectorXd row = diffs.row(k - 1).transpose();
    double mean = 0.0;
    for (Eigen::Index i = 0; i < row.size(); ++i) mean += row(i);
    mean /= static_cast<double>(row.size());
    double ss = 0.0;
    for (Eigen::Index i = 0; i < row.size(); ++i) ss += (row(i) - mean) * (row(i) - mean);
    const double sd = row.size() > 1 ? std::sqrt(ss / static_cast<double>(row.size() - 1)) : 0.0;
    if (!std::isfinite(mean)) throw NumericError("robustness_decay: non-finite loss difference");
    probe.lags.push_back(k);
    probe.mean_abs_loss_diff.push_back(mean);
    probe.stderr_.push_back(sd / std::sqrt(static_cast<double>(row.size())));
    probe.n_samples.push_back(cfg.pairs);
  }

  const auto& e = probe.mean_abs_loss_diff;
  const auto peak = static_cast<std::size_t>(std::max_element(e.begin(), e.end()) - e.begin());
  probe.peak_lag = probe.lags[peak];
  probe.rate = std::max(alpha, linear_system_iss_constants(sys).rho);
  probe.fit5 = fit_envelope(probe.lags, e, probe.rate, 5, probe.peak_lag);
  probe.fit3 = fit_envelope(probe.lags, e, probe.rate, 3, probe.peak_lag);
  probe.tighter = probe.fit3.log_residual < probe.fit5.log_residual ? "exponent_3" : "exponent_5";

  // The dominating prefactor reproduces its own tightest point only up to rounding.
  probe.dominated = true;
  for (std::size_t i = peak; i < e.size(); ++i)
    if (e[i] > probe.fit5.envelope[i] * (1.0 + 1e-12)) probe.dominated = false;

  probe.decay_factor = e[peak] > 0.0 ? e[peak] / e.back() : 0.0;
  probe.decay_ok = probe.decay_factor >= 10.0;

  // Least-squares slope of log e_k against k over the lags past the peak.
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  int n = 0;
  for (std::size_t i = peak; i < e.size(); ++i) {
    if (!(e[i] > 0.0)) continue;
    const double x = probe.lags[i], y = std::log(e[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++n;
  }
  if (n >= 2) probe.log_slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  probe.slope_ok = n >= 2 && probe.log_slope <= std::log(probe.rate) + 0.1;
  return probe;
}

DecayProbe robustness_decay(const FilterNet& net, const LinearSystem& sys, const ProbeConfig& cfg) {
  require(net.config().obs_dim == sys.m(), "robustness_decay: net and system output dimensions differ");
  const double w_bar = cfg.w_bar_sigmas * std::sqrt(sys.sigma_w2);
  const double v_bar = cfg.v_bar_sigmas * std::sqrt(sys.sigma_v2);
  const BoundConstants k = bound_constants(net, sys, w_bar, v_bar);
  Predictor predictor = [&net](const Eigen::MatrixXd& ys) { return predict_sequence(net, ys); };
  return robustness_decay(predictor, sys, k.alpha, cfg, ClippedLoss{k.y_bar});
}

BoundTerms generalization_bound_terms(const BoundInputs& in, long M, long T, double delta, double epsilon,
                                double sigma_w, double sigma_v, double c) {
  require(M >= 1 && T >= 1, "generalization_bound_terms: M and T must be positive");
  const double mt = static_cast<double>(M) * static_cast<double>(T);
  require(mt >= 3.0 * std::max(std::sqrt(static_cast<double>(in.n)), std::sqrt(static_cast<double>(in.m))),
          "generalization_bound_terms: need M T >= 3 max(sqrt(n), sqrt(m))");
  require(delta > 0.0 && delta < 1.0, "generalization_bound_terms: delta must lie in (0, 1)");
  require(epsilon > 0.0, "generalization_bound_terms: epsilon must be positive");
  require(c > 0.0, "generalization_bound_terms: c must be positive");
  require(in.rho >= 0.0 && in.rho < 1.0, "generalization_bound_terms: rho must lie in [0, 1)");
  require(sigma_w >= 0.0 && sigma_v >= 0.0 && sigma_w + sigma_v > 0.0,
          "generalization_bound_terms: noise scales must be non-negative and not both zero");
  require(in.n_theta > 0, "generalization_bound_terms: n_theta must be positive");

  BoundTerms b;
  b.c = c;
  b.term_confidence = 12.0 * in.loss_bound * delta;
  b.term_resolution = 4.0 * in.l_ell * epsilon;

  const double td = static_cast<double>(T);
  // T^4 rho^T / log(rho); zero in the rho -> 0 limit.
  const double factor = in.rho > 0.0 ? std::pow(td, 4) * std::pow(in.rho, td) / std::log(in.rho) : 0.0;
  const double scale = 7.0 * in.k_ssm * in.l_ell * (in.l_g * in.c_rho * sigma_w + sigma_v) *
                       std::sqrt(std::log(4.0 * mt / delta));
  b.b_bar_signed = 2.0 * in.loss_bound + scale * factor;
  b.b_bar = 2.0 * in.loss_bound + scale * std::abs(factor);
  b.b_bar_sign_flag = factor < 0.0;

  b.epsilon_prime = epsilon / ((sigma_w + sigma_v) * std::sqrt(std::log(4.0 * mt) - std::log(delta)));
  const double nt = static_cast<double>(in.n_theta);
  b.log_covering_bound = nt * std::log(in.theta_blocks * std::sqrt(nt) * b.epsilon_prime);
  const double numerator = std::log(4.0) + b.log_covering_bound - std::log(delta);
  b.complexity_clamped = numerator < 0.0;
  b.term_complexity = b.b_bar * std::sqrt(std::max(numerator, 0.0) / (c * mt));
  b.total = b.term_confidence + b.term_resolution + b.term_complexity;
  return b;
}

namespace {

template <typename F>
double sampled_max(const MuSampleConfig& cfg, F&& ratio) {
  require(cfg.samples >= 1 && cfg.T >= 1, "mu sampler: samples and T must be positive");
  double best = 0.0;
  for (int k = 0; k < cfg.samples; ++k) {
    Rng rng = stream_rng(cfg.seed, static_cast<std::uint64_t>(SeedStream::mu), static_cast<std::uint64_t>(k));
    const LinearSystem sys =
        sample_linear_system(rng, cfg.dist.n, cfg.dist.m, cfg.dist.radius, cfg.dist.sigma_w2, cfg.dist.sigma_v2);
    const Trajectory tr = simulate(sys, cfg.dist.noise, cfg.T, rng);
    const double noise = tr.ws.colwise().norm().maxCoeff() + tr.vs.colwise().norm().maxCoeff();
    if (!(noise > 0.0)) continue;
    best = std::max(best, ratio(tr.ys) / noise);
  }
  return best;
}

}  // namespace

double empirical_mu_lower_bound(const FilterNet& a, const FilterNet& b, const MuSampleConfig& cfg) {
  require(a.config().obs_dim == b.config().obs_dim && a.config().obs_dim == cfg.dist.m,
          "empirical_mu_lower_bound: nets and sampler must share the output dimension");
  return sampled_max(cfg, [&](const Eigen::MatrixXd& ys) {
    return (predict_sequence(a, ys) - predict_sequence(b, ys)).colwise().norm().maxCoeff();
  });
}

double empirical_output_scale(const FilterNet& net, const MuSampleConfig& cfg) {
  require(net.config().obs_dim == cfg.dist.m, "empirical_output_scale: net and sampler output dimensions differ");
  return sampled_max(cfg, [&](const Eigen::MatrixXd& ys) {
    return predict_sequence(net, ys).colwise().norm().maxCoeff();
  });
}

std::string probe_csv(const DecayProbe& probe) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "lag,mean_abs_loss_diff,envelope,stderr,n_samples\n";
  for (std::size_t i = 0; i < probe.lags.size(); ++i)
    os << probe.lags[i] << ',' << probe.mean_abs_loss_diff[i] << ',' << probe.fit5.envelope[i] << ','
       << probe.stderr_[i] << ',' << probe.n_samples[i] << '\n';
  return os.str();
}

namespace {

nlohmann::json fit_json(const EnvelopeFit& f) {
  return {{"exponent", f.exponent},
          {"k_ssm_dominating", f.k_dominating},
          {"k_ssm_least_squares", f.k_least_squares},
          {"log_residual", f.log_residual}};
}

}  // namespace

nlohmann::json probe_json(const DecayProbe& probe, const BoundConstants& k, const IssConstants& iss,
                          const BoundTerms& b) {
  nlohmann::json j;
  j["tool_version"] = kToolVersion;
  j["constants"] = {{"alpha", k.alpha},       {"block_alpha", k.block_alpha}, {"rho", k.rho},
                    {"l_g", k.l_g},           {"c_rho", k.c_rho},             {"l_rho", k.l_rho},
                    {"w_bar", k.w_bar},       {"v_bar", k.v_bar},             {"y_bar", k.y_bar},
                    {"y_tilde", k.y_tilde},   {"l_ell", k.l_ell},             {"loss_bound", k.loss_bound},
                    {"n_theta", k.n_theta},   {"theta_blocks", k.theta_blocks}};
  j["iss"] = {{"rho", iss.rho}, {"c_rho", iss.c_rho}, {"l_g", iss.l_g}, {"k", iss.k}, {"horizon", iss.horizon}};
  j["probe"] = {{"peak_lag", probe.peak_lag},
                {"rate", probe.rate},
                {"fit_exponent_5", fit_json(probe.fit5)},
                {"fit_exponent_3", fit_json(probe.fit3)},
                {"tighter", probe.tighter},
                {"dominated", probe.dominated},
                {"decay_factor", probe.decay_factor},
                {"log_slope", probe.log_slope},
                {"decay_ok", probe.decay_ok},
                {"slope_ok", probe.slope_ok},
                {"pass", probe.pass()}};
  j["generalization_bound"] = {{"term_confidence", b.term_confidence},
                               {"term_resolution", b.term_resolution},
                               {"b_bar", b.b_bar},
                               {"b_bar_signed", b.b_bar_signed},
                               {"b_bar_sign_flag", b.b_bar_sign_flag},
                               {"epsilon_prime", b.epsilon_prime},
                               {"epsilon_prime_flag", b.epsilon_prime_flag},
                               {"log_covering_bound", b.log_covering_bound},
                               {"term_complexity", b.term_complexity},
                               {"complexity_clamped", b.complexity_clamped},
                               {"total", b.total},
                               {"c", b.c},
                               {"c_unidentified", b.c_unidentified}};
  return j;
}

}  // namespace ssmf
