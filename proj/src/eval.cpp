#include "ssmf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ssmf/kalman.hpp"
#include "ssmf/parallel.hpp"
#include "ssmf/version.hpp"

namespace ssmf {

RmsCurve rms_curve(const std::string& method, const std::vector<Eigen::MatrixXd>& preds,
                   const std::vector<Eigen::MatrixXd>& truths, int burn_in) {
  require(!preds.empty(), "rms_curve: no systems");
  require(preds.size() == truths.size(), "rms_curve: prediction and truth counts differ");
  const Eigen::Index m = truths[0].rows(), T = truths[0].cols();
  RmsCurve c;
  c.method = method;
  c.n_systems = static_cast<int>(preds.size());
  c.values = Eigen::VectorXd::Zero(T);
  c.system_mse = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(preds.size()));
  const Eigen::Index lo = std::min<Eigen::Index>(burn_in, T);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    require(preds[i].rows() == m && preds[i].cols() == T && truths[i].rows() == m && truths[i].cols() == T,
            "rms_curve: shape mismatch");
    const Eigen::VectorXd sq = (truths[i] - preds[i]).colwise().squaredNorm().transpose();
    c.values += sq;
    if (T > lo) c.system_mse(static_cast<Eigen::Index>(i)) = sq.tail(T - lo).mean();
  }
  c.values = (c.values / static_cast<double>(preds.size())).cwiseSqrt();
  return c;
}

double window_mean(const RmsCurve& curve, int lo, int hi) {
  const int n = static_cast<int>(curve.values.size());
  lo = std::clamp(lo, 0, n);
  hi = std::clamp(hi, lo, n);
  require(hi > lo, "window_mean: empty window");
  return curve.values.segment(lo, hi - lo).mean();
}

std::string to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::linear_gaussian: return "linear_gaussian";
    case ExperimentKind::switching: return "switching";
    case ExperimentKind::colored: return "colored";
    case ExperimentKind::length_gen: return "length_gen";
  }
  return "unknown";
}

ExperimentKind parse_experiment_kind(const std::string& name) {
  std::string s = name;
  std::replace(s.begin(), s.end(), '-', '_');
  for (auto k : {ExperimentKind::linear_gaussian, ExperimentKind::switching, ExperimentKind::colored,
                 ExperimentKind::length_gen})
    if (s == to_string(k)) return k;
  throw ConfigError("unknown experiment kind '" + name +
                    "' (expected linear-gaussian, switching, colored or length-gen)");
}

std::vector<std::string> default_methods(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::switching:
    case ExperimentKind::colored: return {"ssm", "kf_mismatched", "naive"};
    default: return {"ssm", "kf", "naive"};
  }
}

const RmsCurve& ExperimentResult::curve(const std::string& method) const {
  for (const RmsCurve& c : curves)
    if (c.method == method) return c;
  throw ContractViolation("no curve for method " + method);
}

namespace {

struct TestCase {
  LinearSystem sys;
  SwitchingSystem sw;
  Eigen::MatrixXd ys;  // m x (T+1)
};

void check_spec(const ExperimentSpec& spec, const std::vector<std::string>& methods, const FilterNet* net,
                std::optional<std::uint64_t> train_seed) {
  if (spec.N < 1) throw ConfigError("experiment: N must be >= 1");
  if (spec.T < 1) throw ConfigError("experiment: T must be >= 1");
  if (spec.kind == ExperimentKind::switching && spec.T % 2 != 0)
    throw ConfigError("experiment: switching needs an even T");
  if (spec.kind == ExperimentKind::length_gen) {
    if (!spec.train_T) throw ConfigError("experiment: length_gen needs train_T");
    if (*spec.train_T < 1 || *spec.train_T > spec.T)
      throw ConfigError("experiment: train_T must lie in [1, T]");
  } else if (spec.train_T) {
    throw ConfigError("experiment: train_T only applies to length_gen");
  }
  if (train_seed && *train_seed == spec.seed)
    throw ConfigError("experiment: test seed " + std::to_string(spec.seed) +
                      " collides with the training dataset seed");
  for (const std::string& m : methods) {
    const bool known = m == "ssm" || m == "kf" || m == "naive" || m == "kf_mismatched";
    if (!known) throw ConfigError("experiment: unknown method '" + m + "'");
    if (m == "kf_mismatched" && spec.kind != ExperimentKind::switching && spec.kind != ExperimentKind::colored)
      throw ConfigError("experiment: kf_mismatched applies to switching and colored only");
    if (m == "ssm") {
      if (!net) throw ConfigError("experiment: method ssm needs a checkpoint");
      if (net->config().obs_dim != spec.dist.m)
        throw ConfigError("experiment: checkpoint obs_dim " + std::to_string(net->config().obs_dim) +
                          " does not match m = " + std::to_string(spec.dist.m));
    }
  }
}

Eigen::MatrixXd predict(const std::string& method, const ExperimentSpec& spec, const TestCase& tc,
                        const FilterNet* net, const NoiseModel& noise) {
  const Eigen::Ref<const Eigen::MatrixXd> inputs = tc.ys.leftCols(spec.T);
  if (method == "ssm") return predict_sequence(*net, inputs);
  if (method == "naive") return naive_predictor(inputs);
  if (method == "kf") {
    // Matched filter. For switching this is the clairvoyant reference that
    // knows both models and the switch time.
    if (spec.kind == ExperimentKind::switching) {
      Eigen::MatrixXd out(inputs.rows(), spec.T);
      auto state = KalmanState<double>::initial(tc.sw.sys1.n());
      const int half = spec.T / 2;
      for (int t = 0; t < spec.T; ++t) {
        // prediction at t targets y_{t+1}, produced by the model active at t+1
        const LinearSystem& meas = t < half ? tc.sw.sys1 : tc.sw.sys2;
        const LinearSystem& next = t + 1 < half ? tc.sw.sys1 : tc.sw.sys2;
        auto r = kf_predict_next_output(std::move(state), meas, inputs.col(t));
        state = std::move(r.first);
        out.col(t) = next.c_mat * state.x_hat;
      }
      return out;
    }
    return kf_filter(tc.sys, inputs);
  }
  // kf_mismatched
  if (spec.kind == ExperimentKind::switching) return kf_mismatched_switching(tc.sw, inputs);
  return kf_mismatched_colored(tc.sys, noise, inputs);
}

}  // namespace

ExperimentResult run_experiment(const ExperimentSpec& spec, const FilterNet* net,
                                std::optional<std::uint64_t> train_seed) {
  ExperimentResult result;
  result.spec = spec;
  std::vector<std::string> methods = spec.methods.empty() ? default_methods(spec.kind) : spec.methods;
  // Defaults without a network fall back to the model-based methods only.
  if (!net && spec.methods.empty()) methods.erase(std::remove(methods.begin(), methods.end(), "ssm"), methods.end());
  check_spec(spec, methods, net, train_seed);
  result.spec.methods = methods;

  NoiseModel noise = spec.dist.noise;
  if (spec.kind == ExperimentKind::colored) {
    if (noise.kind != NoiseKind::colored) noise = NoiseModel::colored();
  }
  const int horizon = spec.T + 1;

  std::vector<TestCase> cases(static_cast<std::size_t>(spec.N));
  parallel_for(cases.size(), spec.threads, [&](std::size_t i) {
    Rng rng = stream_rng(spec.seed, static_cast<std::uint64_t>(SeedStream::test), i);
    const auto& d = spec.dist;
    TestCase& tc = cases[i];
    tc.sys = sample_linear_system(rng, d.n, d.m, d.radius, d.sigma_w2, d.sigma_v2);
    if (spec.kind == ExperimentKind::switching) {
      tc.sw.sys1 = tc.sys;
      tc.sw.sys2 = spec.identical_switch ? tc.sys : sample_linear_system(rng, d.n, d.m, d.radius, d.sigma_w2, d.sigma_v2);
      tc.sw.switch_time = spec.T / 2;
      tc.ys = simulate_switching(tc.sw, horizon, rng, noise).ys;
    } else {
      tc.ys = simulate(tc.sys, noise, horizon, rng).ys;
    }
  });

  for (const std::string& method : methods) {
    std::vector<Eigen::MatrixXd> preds(cases.size()), truths(cases.size());
    parallel_for(cases.size(), spec.threads, [&](std::size_t i) {
      preds[i] = predict(method, spec, cases[i], net, noise);
      truths[i] = cases[i].ys.rightCols(spec.T);
    });
    RmsCurve c = rms_curve(method, preds, truths, spec.burn_in);
    c.config_digest = spec.config_digest;
    result.curves.push_back(std::move(c));
  }
  return result;
}

std::string curves_csv(const ExperimentResult& result) {
  const bool lg = result.spec.kind == ExperimentKind::length_gen;
  std::ostringstream os;
  os.precision(17);
  os << "t,method,rms,n_systems,config_digest";
  if (lg) os << ",past_train_horizon";
  os << "\n";
  for (const RmsCurve& c : result.curves) {
    for (Eigen::Index t = 0; t < c.values.size(); ++t) {
      os << t << ',' << c.method << ',' << c.values(t) << ',' << c.n_systems << ',' << c.config_digest;
      if (lg) os << ',' << (t >= *result.spec.train_T ? 1 : 0);
      os << "\n";
    }
  }
  return os.str();
}

nlohmann::json summary_json(const ExperimentResult& result) {
  using nlohmann::json;
  const ExperimentSpec& s = result.spec;
  json j;
  j["kind"] = to_string(s.kind);
  j["n_systems"] = s.N;
  j["T"] = s.T;
  j["seed"] = s.seed;
  j["burn_in"] = s.burn_in;
  j["config_digest"] = s.config_digest;
  j["tool_version"] = kToolVersion;
  j["rms_definition"] = "sqrt(mean_i ||y_{t+1} - yhat_{t+1}||^2), t = 0..T-1";
  NoiseModel noise = s.kind == ExperimentKind::colored && s.dist.noise.kind != NoiseKind::colored
                         ? NoiseModel::colored()
                         : s.dist.noise;
  json gen{{"n", s.dist.n}, {"m", s.dist.m}, {"spectral_radius", s.dist.radius},
           {"sigma_w2", s.dist.sigma_w2}, {"sigma_v2", s.dist.sigma_v2},
           {"noise", noise.kind == NoiseKind::colored ? "colored" : "white"}};
  if (noise.kind == NoiseKind::colored) {
    gen["window"] = noise.window;
    gen["normalization"] = "1/sqrt(" + std::to_string(noise.window) + ")";
    gen["normalization_value"] = 1.0 / std::sqrt(static_cast<double>(noise.window));
    gen["sigma_eta2"] = noise.sigma_eta2;
    gen["sigma_nu2"] = noise.sigma_nu2;
  }
  j["generator"] = gen;
  if (s.kind == ExperimentKind::switching) {
    j["switch_time"] = s.T / 2;
    j["identical_switch"] = s.identical_switch;
  }
  if (s.kind == ExperimentKind::length_gen) {
    j["train_T"] = *s.train_T;
    j["train_horizon_marker"] = "past_train_horizon = 1 for t >= train_T";
  }
  // Windows that are empty for short horizons are reported as null.
  auto window = [](const RmsCurve& c, int lo, int hi) { return lo < hi ? json(window_mean(c, lo, hi)) : json(nullptr); };
  json methods = json::object();
  for (const RmsCurve& c : result.curves) {
    json m;
    m["burn_in_mean_rms"] = window(c, s.burn_in, s.T);
    const double n = static_cast<double>(c.system_mse.size());
    const double mu = c.system_mse.mean();
    const double var = n > 1 ? (c.system_mse.array() - mu).square().sum() / (n - 1) : 0.0;
    m["burn_in_mse"] = mu;
    m["burn_in_mse_stderr"] = std::sqrt(var / n);
    if (s.kind == ExperimentKind::switching) {
      m["pre_switch_mean_rms"] = window(c, s.burn_in, s.T / 2 - 1);
      m["post_switch_mean_rms"] = window(c, s.T / 2 + 5, s.T);
    }
    if (s.kind == ExperimentKind::length_gen) {
      m["within_train_horizon_mean_rms"] = window(c, s.burn_in, *s.train_T);
      m["past_train_horizon_mean_rms"] = window(c, *s.train_T, s.T);
    }
    methods[c.method] = m;
  }
  j["methods"] = methods;
  return j;
}

}  // namespace ssmf
