#include <doctest.h>

#include <cmath>
#include <sstream>

#include "ssmf/eval.hpp"
#include "test_util.hpp"

using namespace ssmf;

namespace {

ExperimentSpec small_spec(ExperimentKind kind, int N = 40) {
  ExperimentSpec s;
  s.kind = kind;
  s.N = N;
  s.T = 50;
  return s;
}


}  // namespace

TEST_CASE("rms curve examples") {
  std::mt19937_64 rng(4);
  std::vector<Eigen::MatrixXd> truth{testutil::gaussian(rng, 3, 6)};
  RmsCurve zero = rms_curve("x", truth, truth);
  CHECK(zero.values.size() == 6);
  CHECK(zero.values.isZero(0.0));

  std::vector<Eigen::MatrixXd> ones{truth[0] + Eigen::MatrixXd::Ones(3, 6)};
  RmsCurve c = rms_curve("x", ones, truth);
  for (Eigen::Index t = 0; t < 6; ++t) CHECK(c.values(t) == doctest::Approx(1.7320508075688772).epsilon(1e-14));

  // Squared norms 0, 1, 4, 9 at t = 0.
  std::vector<Eigen::MatrixXd> p4, t4;
  for (int i = 0; i < 4; ++i) {
    Eigen::MatrixXd e = Eigen::MatrixXd::Zero(3, 2);
    e(0, 0) = i;
    p4.push_back(e);
    t4.push_back(Eigen::MatrixXd::Zero(3, 2));
  }
  RmsCurve four = rms_curve("x", p4, t4);
  CHECK(four.values(0) == doctest::Approx(std::sqrt(14.0 / 4.0)).epsilon(1e-14));
  CHECK(four.values(1) == 0.0);

  std::vector<Eigen::MatrixXd> wrong{Eigen::MatrixXd::Zero(3, 5)};
  CHECK_THROWS_AS(rms_curve("x", wrong, truth), ContractViolation);
  CHECK_THROWS_AS(rms_curve("x", {}, {}), ContractViolation);
}

TEST_CASE("injected error of variance s^2 raises RMS^2 by s^2 m") {
  std::mt19937_64 rng(8);
  const int N = 20000, m = 3, T = 4;
  const double s = 0.3;
  std::vector<Eigen::MatrixXd> truth, base, noisy;
  for (int i = 0; i < N; ++i) {
    truth.push_back(testutil::gaussian(rng, m, T));
    base.push_back(truth.back() + testutil::gaussian(rng, m, T, 0.5));
    noisy.push_back(base.back() + testutil::gaussian(rng, m, T, s));
  }
  const RmsCurve a = rms_curve("a", base, truth), b = rms_curve("b", noisy, truth);
  for (Eigen::Index t = 0; t < T; ++t) {
    const double gain = b.values(t) * b.values(t) - a.values(t) * a.values(t);
    // Sum of m squared N(0, s^2) has sd s^2 sqrt(2m); cross term adds 2*0.5*s*sqrt(m).
    const double sd = (s * s * std::sqrt(2.0 * m) + 2 * 0.5 * s * std::sqrt(static_cast<double>(m))) / std::sqrt(N);
    CHECK(std::abs(gain - s * s * m) < 4 * sd);
  }
}

TEST_CASE("window mean clips to the curve") {
  RmsCurve c;
  c.values = Eigen::VectorXd::LinSpaced(10, 0.0, 9.0);
  CHECK(window_mean(c, 2, 5) == doctest::Approx(3.0));
  CHECK(window_mean(c, 8, 100) == doctest::Approx(8.5));
  CHECK_THROWS_AS(window_mean(c, 12, 20), ContractViolation);
}

TEST_CASE("experiment kinds parse with either separator") {
  CHECK(parse_experiment_kind("linear-gaussian") == ExperimentKind::linear_gaussian);
  CHECK(parse_experiment_kind("length_gen") == ExperimentKind::length_gen);
  CHECK(parse_experiment_kind("colored") == ExperimentKind::colored);
  CHECK_THROWS_AS(parse_experiment_kind("bogus"), ConfigError);
}

TEST_CASE("Kalman curve is below naive after t = 5 at desk scale") {
  ExperimentSpec s = small_spec(ExperimentKind::linear_gaussian, 200);
  ExperimentResult r = run_experiment(s, nullptr);
  REQUIRE(r.spec.methods == std::vector<std::string>{"kf", "naive"});
  const RmsCurve& kf = r.curve("kf");
  const RmsCurve& naive = r.curve("naive");
  CHECK(kf.values.size() == 50);
  CHECK(kf.n_systems == 200);
  for (Eigen::Index t = 5; t < 50; ++t) CHECK(kf.values(t) <= naive.values(t));
  CHECK(kf.values.allFinite());
  CHECK((kf.values.array() >= 0.0).all());
}

TEST_CASE("every method sees the same trajectories and threads do not matter") {
  ExperimentSpec s = small_spec(ExperimentKind::colored, 30);
  ExperimentResult both = run_experiment(s, nullptr);
  s.methods = {"naive"};
  ExperimentResult one = run_experiment(s, nullptr);
  CHECK(one.curve("naive").values == both.curve("naive").values);
  s.methods = {};
  s.threads = 4;
  ExperimentResult threaded = run_experiment(s, nullptr);
  CHECK(threaded.curve("kf_mismatched").values == both.curve("kf_mismatched").values);
  CHECK(curves_csv(threaded) == curves_csv(both));
}

TEST_CASE("degenerate switch matches the linear-gaussian protocol") {
  ExperimentSpec sw = small_spec(ExperimentKind::switching, 300);
  sw.identical_switch = true;
  sw.seed = 7;
  sw.methods = {"kf", "kf_mismatched"};
  ExperimentSpec lg = small_spec(ExperimentKind::linear_gaussian, 300);
  lg.methods = {"kf"};
  const ExperimentResult a = run_experiment(sw, nullptr), b = run_experiment(lg, nullptr);
  // With sys2 = sys1 the clairvoyant and the mismatched filter coincide.
  CHECK(a.curve("kf").values == a.curve("kf_mismatched").values);
  const auto ja = summary_json(a)["methods"]["kf"], jb = summary_json(b)["methods"]["kf"];
  const double diff = ja["burn_in_mse"].get<double>() - jb["burn_in_mse"].get<double>();
  const double se = std::hypot(ja["burn_in_mse_stderr"].get<double>(), jb["burn_in_mse_stderr"].get<double>());
  CHECK(std::abs(diff) <= 3.0 * se);
}

TEST_CASE("switching summary reports both windows and the mismatched filter degrades") {
  ExperimentSpec s = small_spec(ExperimentKind::switching, 100);
  s.methods = {"kf", "kf_mismatched", "naive"};
  const ExperimentResult r = run_experiment(s, nullptr);
  const auto j = summary_json(r);
  CHECK(j["switch_time"] == 25);
  const auto& km = j["methods"]["kf_mismatched"];
  CHECK(km["post_switch_mean_rms"].get<double>() > km["pre_switch_mean_rms"].get<double>());
  CHECK(window_mean(r.curve("kf"), 30, 50) < window_mean(r.curve("kf_mismatched"), 30, 50));
  s.T = 51;
  CHECK_THROWS_AS(run_experiment(s, nullptr), ConfigError);
}

TEST_CASE("length generalization csv marks the training horizon") {
  ExperimentSpec s = small_spec(ExperimentKind::length_gen, 10);
  s.train_T = 30;
  s.methods = {"kf"};
  s.config_digest = "abc123";
  const ExperimentResult r = run_experiment(s, nullptr);
  const std::string csv = curves_csv(r);
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);
  CHECK(line == "t,method,rms,n_systems,config_digest,past_train_horizon");
  int rows = 0, marked = 0;
  while (std::getline(is, line)) {
    ++rows;
    const bool past = line.back() == '1';
    marked += past;
    const int t = std::stoi(line.substr(0, line.find(',')));
    CHECK(past == (t >= 30));
    CHECK(line.find(",kf,") != std::string::npos);
    CHECK(line.find(",10,abc123,") != std::string::npos);
  }
  CHECK(rows == 50);
  CHECK(marked == 20);
  const auto j = summary_json(r);
  CHECK(j["train_T"] == 30);
  CHECK(j["methods"]["kf"].contains("past_train_horizon_mean_rms"));
}

TEST_CASE("experiment configuration errors") {
  ExperimentSpec s = small_spec(ExperimentKind::linear_gaussian, 5);
  CHECK_THROWS_AS(run_experiment(s, nullptr, s.seed), ConfigError);
  CHECK_NOTHROW(run_experiment(s, nullptr, s.seed + 1));
  s.methods = {"ssm"};
  CHECK_THROWS_AS(run_experiment(s, nullptr), ConfigError);
  s.methods = {"kf_mismatched"};
  CHECK_THROWS_AS(run_experiment(s, nullptr), ConfigError);
  s.methods = {"oracle"};
  CHECK_THROWS_AS(run_experiment(s, nullptr), ConfigError);
  s.methods = {};
  s.train_T = 20;
  CHECK_THROWS_AS(run_experiment(s, nullptr), ConfigError);
  s.kind = ExperimentKind::length_gen;
  s.train_T = 60;
  CHECK_THROWS_AS(run_experiment(s, nullptr), ConfigError);

  ModelConfig mc;
  mc.embed_dim = 4;
  mc.state_dim = 2;
  mc.obs_dim = 2;
  FilterNet net(mc);
  ExperimentSpec bad = small_spec(ExperimentKind::linear_gaussian, 5);
  CHECK_THROWS_AS(run_experiment(bad, &net), ConfigError);
}

TEST_CASE("colored summary documents the generator") {
  ExperimentSpec s = small_spec(ExperimentKind::colored, 5);
  const auto j = summary_json(run_experiment(s, nullptr));
  CHECK(j["generator"]["noise"] == "colored");
  CHECK(j["generator"]["window"] == 15);
  CHECK(j["generator"]["normalization"] == "1/sqrt(15)");
  CHECK(j["generator"]["normalization_value"].get<double>() == doctest::Approx(1.0 / std::sqrt(15.0)));
}
