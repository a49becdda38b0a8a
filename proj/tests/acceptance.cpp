// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Criteria 4-9 train desk-scale networks (a few minutes on one core).

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ssmf/config.hpp"
#include "ssmf/eval.hpp"
#include "ssmf/kalman.hpp"
#include "ssmf/model.hpp"
#include "ssmf/ssm_core.hpp"
#include "ssmf/systems.hpp"
#include "ssmf/theory.hpp"
#include "ssmf/train.hpp"
#include "test_util.hpp"

using namespace ssmf;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double x, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << x;
  return os.str();
}

RunConfig desk_config(const std::string& name) {
  RunConfig cfg = load_config(std::string(SSMF_SOURCE_DIR) + "/configs/" + name + ".yaml");
  cfg.propagate();
  validate_config(cfg);
  return cfg;
}

struct Trained {
  RunConfig cfg;
  FilterNet net;
  std::uint64_t data_seed = 0;
  double train_seconds = 0.0;
};

Trained train_desk(const std::string& name) {
  const auto t0 = Clock::now();
  Trained t{desk_config(name), FilterNet(ModelConfig{}), 0, 0.0};
  t.net = FilterNet(t.cfg.model);
  const TrajectoryBatch batch = make_dataset(t.cfg.systems, t.cfg.train.M, t.cfg.train.T, t.cfg.seeds.data,
                                             SeedStream::train, t.cfg.train.threads);
  t.data_seed = batch.seed;
  FitState state;
  fit(t.net, batch, t.cfg.train, state);
  t.train_seconds = seconds_since(t0);
  std::fprintf(stderr, "[trained %s in %.0f s]\n", name.c_str(), t.train_seconds);
  return t;
}

ExperimentResult evaluate(const Trained& t, ExperimentKind kind) {
  ExperimentSpec spec = t.cfg.experiment;
  spec.kind = kind;
  return run_experiment(spec, &t.net, t.data_seed);
}

// ---------------------------------------------------------------------------

Eigen::MatrixXd run_steps(const SsmParams<double>& p, const Eigen::MatrixXd& ys) {
  Eigen::MatrixXd out(p.channels(), ys.cols());
  SsmState<double> s = SsmState<double>::zeros(p);
  for (Eigen::Index t = 0; t < ys.cols(); ++t) {
    auto r = step(p, std::move(s), ys.col(t));
    s = std::move(r.state);
    out.col(t) = r.prediction;
  }
  return out;
}

Outcome scan_equivalence() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    std::mt19937_64 rng(1000 + k);
    const Eigen::Index d = 1 + k % 5, l = 1 + (k * 7) % 6, T = 1 + (k * 29) % 64;
    const auto p = testutil::random_params(rng, d, l);
    const Eigen::MatrixXd ys = testutil::gaussian(rng, d, T);
    const Eigen::MatrixXd rec = run_steps(p, ys);
    for (Eigen::Index t = 1; t <= T; ++t) worst = std::max(worst, testutil::rel_err(rec.col(t - 1), forward_unrolled(p, ys, t)));
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-10 && secs < 10.0, "max rel err " + num(worst) + ", " + num(secs, 3) + " s"};
}

Outcome gradient_fidelity() {
  const auto t0 = Clock::now();
  constexpr double h = 1e-5;
  double worst = 0.0;
  for (int k = 0; k < 20; ++k) {
    std::mt19937_64 rng(2000 + k);
    const Eigen::Index d = 1 + k % 4, l = 1 + k % 5, T = 3 + 3 * k;
    auto p = testutil::random_params(rng, d, l);
    Eigen::MatrixXd ys = testutil::gaussian(rng, d, T);
    const Eigen::MatrixXd up = testutil::gaussian(rng, d, T);
    const auto g = backward(p, ys, up);
    auto objective = [&] { return run_steps(p, ys).cwiseProduct(up).sum(); };
    auto probe = [&](double& x, double analytic) {
      const double keep = x;
      x = keep + h;
      const double fp = objective();
      x = keep - h;
      const double fm = objective();
      x = keep;
      const double fd = (fp - fm) / (2 * h);
      // Relative error with an absolute floor for coordinates at roundoff level.
      worst = std::max(worst, std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-4}));
    };
    for (Eigen::Index i = 0; i < p.a_diag.size(); ++i) probe(p.a_diag.data()[i], g.params.a_diag.data()[i]);
    for (Eigen::Index i = 0; i < p.w_b.size(); ++i) probe(p.w_b.data()[i], g.params.w_b.data()[i]);
    for (Eigen::Index i = 0; i < p.w_c.size(); ++i) probe(p.w_c.data()[i], g.params.w_c.data()[i]);
    for (Eigen::Index i = 0; i < p.q.size(); ++i) probe(p.q(i), g.params.q(i));
    probe(p.p, g.params.p);
    for (Eigen::Index i = 0; i < ys.size(); ++i) probe(ys.data()[i], g.inputs.data()[i]);
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-4 && secs < 60.0, "max rel err " + num(worst) + ", " + num(secs, 3) + " s"};
}

Eigen::MatrixXd riccati_fixed_point(const LinearSystem& sys) {
  const Eigen::Index n = sys.n(), m = sys.m();
  const Eigen::MatrixXd& a = sys.a_mat;
  const Eigen::MatrixXd& c = sys.c_mat;
  Eigen::MatrixXd p = Eigen::MatrixXd::Identity(n, n);
  for (int it = 0; it < 200000; ++it) {
    const Eigen::MatrixXd s = c * p * c.transpose() + sys.sigma_v2 * Eigen::MatrixXd::Identity(m, m);
    Eigen::MatrixXd next = a * p * a.transpose() - a * p * c.transpose() * s.inverse() * c * p * a.transpose() +
                           sys.sigma_w2 * Eigen::MatrixXd::Identity(n, n);
    next = 0.5 * (next + next.transpose());
    const double change = (next - p).cwiseAbs().maxCoeff();
    p = next;
    if (change < 1e-13) break;
  }
  return p;
}

Outcome kalman_correctness() {
  const auto t0 = Clock::now();
  double worst = 0.0, worst_rate = 0.0;
  for (std::uint64_t k = 0; k < 50; ++k) {
    // Default test pool (seed 0), alternating scalar and five-state systems.
    Rng rng = stream_rng(0, static_cast<std::uint64_t>(SeedStream::test), k);
    const bool scalar = k % 2 == 0;
    const LinearSystem sys = sample_linear_system(rng, scalar ? 1 : 5, scalar ? 1 : 3);
    const Trajectory tr = simulate(sys, NoiseModel::white(), 200, rng);
    auto state = KalmanState<double>::initial(sys.n());
    for (Eigen::Index t = 0; t < tr.ys.cols(); ++t) state = kf_predict_next_output(std::move(state), sys, tr.ys.col(t)).first;
    const Eigen::MatrixXd p_inf = riccati_fixed_point(sys);
    const double err = (state.p_cov - p_inf).cwiseAbs().maxCoeff();
    if (err > worst) {
      // Covariance error contracts like the squared closed-loop rate.
      const Eigen::MatrixXd s = sys.c_mat * p_inf * sys.c_mat.transpose() +
                                sys.sigma_v2 * Eigen::MatrixXd::Identity(sys.m(), sys.m());
      const Eigen::MatrixXd gain = sys.a_mat * p_inf * sys.c_mat.transpose() * s.inverse();
      worst = err;
      worst_rate = spectral_radius(sys.a_mat - gain * sys.c_mat);
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-9 && secs < 30.0, "max |P_200 - P_inf| " + num(worst) + " (closed-loop rate " +
                                            num(worst_rate, 4) + ", rate^400 " + num(std::pow(worst_rate, 400)) +
                                            "), " + num(secs, 3) + " s"};
}

Outcome linear_gaussian_run(const Trained& white, double& alpha_max) {
  const auto t0 = Clock::now();
  const ExperimentResult r = evaluate(white, ExperimentKind::linear_gaussian);
  const int b = white.cfg.experiment.burn_in, T = white.cfg.experiment.T;
  const double ssm = window_mean(r.curve("ssm"), b, T);
  const double kf = window_mean(r.curve("kf"), b, T);
  const double naive = window_mean(r.curve("naive"), b, T);
  const double total = white.train_seconds + seconds_since(t0);
  alpha_max = 0.0;
  for (double a : block_alphas(white.net)) alpha_max = std::max(alpha_max, a);
  return {ssm < naive && ssm <= 2.0 * kf && total < 1800.0,
          "ssm " + num(ssm) + ", kf " + num(kf) + " (ratio " + num(ssm / kf, 3) + "), naive " + num(naive) + ", " +
              num(total, 3) + " s"};
}

Outcome switching_run(const Trained& white) {
  const ExperimentResult r = evaluate(white, ExperimentKind::switching);
  const int T = white.cfg.experiment.T, b = white.cfg.experiment.burn_in;
  const double kf_pre = window_mean(r.curve("kf_mismatched"), b, T / 2 - 1);
  const double kf_post = window_mean(r.curve("kf_mismatched"), T / 2 + 5, T);
  const double ssm_post = window_mean(r.curve("ssm"), T / 2 + 5, T);
  return {kf_post >= 1.5 * kf_pre && ssm_post < kf_post,
          "mismatched kf pre " + num(kf_pre) + " post " + num(kf_post) + " (x" + num(kf_post / kf_pre, 3) +
              "), ssm post " + num(ssm_post)};
}

Outcome colored_run(const Trained& colored) {
  const ExperimentResult r = evaluate(colored, ExperimentKind::colored);
  const int b = colored.cfg.experiment.burn_in, T = colored.cfg.experiment.T;
  const double ssm = window_mean(r.curve("ssm"), b, T);
  const double kf = window_mean(r.curve("kf_mismatched"), b, T);
  return {ssm < kf, "ssm " + num(ssm) + ", white-noise kf " + num(kf)};
}

Outcome length_gen_run(const Trained& short_horizon) {
  ExperimentSpec spec = short_horizon.cfg.experiment;
  spec.kind = ExperimentKind::length_gen;
  const int train_T = short_horizon.cfg.train.T;
  spec.train_T = train_T;
  const ExperimentResult r = run_experiment(spec, &short_horizon.net, short_horizon.data_seed);
  const double inside = window_mean(r.curve("ssm"), spec.burn_in, train_T);
  const double beyond = window_mean(r.curve("ssm"), train_T, spec.T);
  return {beyond <= 1.5 * inside, "ssm [10,30) " + num(inside) + ", [30,50) " + num(beyond) + " (x" +
                                      num(beyond / inside, 3) + ")"};
}

Outcome decay_probe_run(const Trained& white) {
  const auto t0 = Clock::now();
  const LinearSystem sys = seeded_probe_system(white.cfg.systems, white.cfg.seeds.probe);
  const ProbeConfig& pc = white.cfg.probe.decay;
  const DecayProbe p = robustness_decay(white.net, sys, pc);
  const double secs = seconds_since(t0);
  const bool pairs_ok = pc.pairs >= 2000 && pc.max_lag == 30 && pc.w_bar_sigmas == 4.0 && pc.v_bar_sigmas == 4.0;
  return {pairs_ok && p.dominated && p.decay_ok && secs < 900.0,
          std::string("dominated ") + (p.dominated ? "yes" : "no") + ", peak lag " + std::to_string(p.peak_lag) +
              ", decay " + num(p.decay_factor, 3) + "x (need 10x), log slope " + num(p.log_slope, 3) + " vs log rate " +
              num(std::log(p.rate), 3) + ", " + num(secs, 3) + " s"};
}

Outcome constants_sanity(double alpha_max) {
  bool iss_ok = true;
  double worst = 0.0;
  for (std::uint64_t k = 0; k < 50; ++k) {
    Rng rng = stream_rng(13, static_cast<std::uint64_t>(SeedStream::test), k);
    const LinearSystem sys = sample_linear_system(rng, 5, 3);
    const IssConstants iss = linear_system_iss_constants(sys);
    Eigen::MatrixXd power = Eigen::MatrixXd::Identity(5, 5);
    for (int t = 0; t <= 500; ++t) {
      const double ratio = spectral_norm(power) / (iss.c_rho * std::pow(iss.rho, t));
      worst = std::max(worst, ratio);
      if (ratio > 1.0 + 1e-9) iss_ok = false;
      power = sys.a_mat * power;
    }
  }
  return {alpha_max < 1.0 && iss_ok, "max block alpha " + num(alpha_max, 8) + ", max ||A^t|| / (C rho^t) " + num(worst, 6)};
}

double autocorr(const Eigen::RowVectorXd& s, int k) {
  const Eigen::Index n = s.size();
  const Eigen::RowVectorXd c = s.array() - s.mean();
  return (c.head(n - k).dot(c.tail(n - k)) / static_cast<double>(n - k)) / (c.squaredNorm() / static_cast<double>(n));
}

Outcome colored_generator() {
  Rng rng = stream_rng(17, static_cast<std::uint64_t>(SeedStream::test), 0);
  const auto [ws, vs] = draw_noise(NoiseModel::colored(15, 0.01, 0.01), 1, 1, 1000000, 0.5, 0.5, rng);
  const Eigen::RowVectorXd w = ws.row(0);
  const double var = w.squaredNorm() / static_cast<double>(w.size());
  double worst = 0.0;
  for (int k = 0; k < 15; ++k) worst = std::max(worst, std::abs(autocorr(w, k) - (15.0 - k) / 15.0));
  const double var_err = std::abs(var - 0.01) / 0.01;
  return {worst <= 0.02 && var_err <= 0.02,
          "max autocorr err " + num(worst, 3) + ", variance " + num(var, 5) + " (" + num(100 * var_err, 3) + "% off)"};
}

// ---------------------------------------------------------------------------

std::string cli_binary() {
  const char* env = std::getenv("SSMF_CLI");
  return env && *env ? env : SSMF_CLI_PATH;
}

int run_cli(const std::string& args) {
  const std::string cmd = "'" + cli_binary() + "' " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = testutil::read_file(e.path().string());
  return files;
}

Outcome determinism() {
  if (!fs::exists(cli_binary())) return {false, "ssmf binary not found at " + cli_binary()};
  testutil::TempDir tmp("acceptance");
  const std::string smoke = std::string(SSMF_SOURCE_DIR) + "/configs/smoke.yaml";
  const std::string ck = tmp.file("run0/train/checkpoint.bin");
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"gen-data", "gen-data --config " + smoke},
      {"train", "train --config " + smoke},
      {"linear-gaussian", "experiment linear-gaussian --config " + smoke + " --checkpoint " + ck},
      {"switching", "experiment switching --config " + smoke + " --checkpoint " + ck},
      {"colored", "experiment colored --config " + smoke + " --checkpoint " + ck},
      {"length-gen", "experiment length-gen --config " + smoke + " --checkpoint " + ck},
      {"probe", "probe --config " + smoke + " --checkpoint " + ck},
  };
  int artifacts = 0;
  std::string mismatch;
  for (int rep = 0; rep < 2; ++rep)
    for (const auto& [name, args] : commands) {
      const std::string out = tmp.file("run" + std::to_string(rep) + "/" + name);
      if (run_cli(args + " --threads 1 --out " + out) != 0) return {false, name + " exited with an error"};
    }
  for (const auto& [name, args] : commands) {
    const auto a = snapshot(tmp.file("run0/" + name));
    const auto b = snapshot(tmp.file("run1/" + name));
    artifacts += static_cast<int>(a.size());
    if (a != b) mismatch += " " + name;
  }
  return {mismatch.empty(), mismatch.empty() ? std::to_string(artifacts) + " artifacts from " +
                                                   std::to_string(commands.size()) + " commands byte-identical"
                                             : "differs:" + mismatch};
}

}  // namespace

int main() {
  std::vector<std::pair<std::string, Outcome>> results;
  auto record = [&](const std::string& name, const std::function<Outcome()>& f) {
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    std::printf("criterion %-2zu %-24s %s  %s\n", results.size() + 1, name.c_str(), o.pass ? "PASS" : "FAIL",
                o.detail.c_str());
    std::fflush(stdout);
    results.emplace_back(name, o);
  };

  record("scan equivalence", scan_equivalence);
  record("gradient fidelity", gradient_fidelity);
  record("kalman correctness", kalman_correctness);

  const Trained white = train_desk("desk");
  double alpha_max = 1.0;
  record("linear-gaussian", [&] { return linear_gaussian_run(white, alpha_max); });
  record("switching", [&] { return switching_run(white); });
  const Trained colored = train_desk("colored");
  record("colored noise", [&] { return colored_run(colored); });
  const Trained short_horizon = train_desk("length-gen");
  record("length generalization", [&] { return length_gen_run(short_horizon); });
  record("robustness decay probe", [&] { return decay_probe_run(white); });
  record("constants sanity", [&] { return constants_sanity(alpha_max); });
  record("colored generator", colored_generator);
  record("determinism", determinism);

  int failed = 0;
  for (const auto& r : results) failed += !r.second.pass;
  std::printf("%zu/%zu criteria passed\n", results.size() - failed, results.size());
  return failed == 0 ? 0 : 1;
}
