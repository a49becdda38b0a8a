#include "ssmf/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "ssmf/config.hpp"
#include "ssmf/errors.hpp"
#include "ssmf/eval.hpp"
#include "ssmf/theory.hpp"
#include "ssmf/train.hpp"
#include "ssmf/version.hpp"

namespace fs = std::filesystem;

namespace ssmf {

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
  if (dynamic_cast<const IoError*>(&e)) return kExitIo;
  return kExitOther;
}

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<int> threads;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "YAML run configuration (defaults when omitted)");
  cmd->add_option("-o,--out", c.out, "run directory (default: <root>/<command>-<digest>-<time>)");
  cmd->add_option("-j,--threads", c.threads, "worker threads; 1 implies deterministic mode")->check(CLI::PositiveNumber);
  cmd->add_option("--set", c.sets, "override a setting, e.g. --set train.epochs=3")->take_all();
}

RunConfig resolve(const Common& c) {
  RunConfig cfg;
  if (!c.config.empty()) cfg = load_config(c.config);
  for (const std::string& s : c.sets) apply_override(cfg, s);
  if (c.threads) {
    cfg.threads = *c.threads;
    cfg.deterministic = *c.threads == 1;
  }
  cfg.propagate();
  validate_config(cfg);
  return cfg;
}

std::string utc_stamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y%m%dT%H%M%SZ");
  return os.str();
}

fs::path run_dir(const Common& c, const RunConfig& cfg, const std::string& command, const std::string& digest) {
  fs::path dir;
  if (!c.out.empty()) {
    dir = c.out;
  } else {
    std::string root = cfg.output;
    if (root.empty()) {
      const char* env = std::getenv("SSMF_OUTPUT_ROOT");
      root = env && *env ? env : "runs";
    }
    const fs::path base = fs::path(root) / (command + "-" + digest.substr(0, 12) + "-" + utc_stamp());
    dir = base;
    for (int k = 1; fs::exists(dir); ++k) dir = base.string() + "-" + std::to_string(k);
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create run directory " + dir.string() + ": " + ec.message());
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
  if (!os) throw IoError("write failed: " + path.string());
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

void write_config(const fs::path& dir, const RunConfig& cfg, const std::string& digest) {
  nlohmann::json j;
  j["config"] = canonical_json(cfg);
  j["config_digest"] = digest;
  j["tool_version"] = kToolVersion;
  write_json(dir / "config.json", j);
}

std::string fmt(double x) {
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const Common& c) {
  const RunConfig cfg = resolve(c);
  const std::string digest = config_digest(cfg);
  const fs::path dir = run_dir(c, cfg, "gen-data", digest);
  TrajectoryBatch batch = make_dataset(cfg.systems, cfg.train.M, cfg.train.T, cfg.seeds.data, SeedStream::train,
                                       cfg.train.threads);
  batch.config_digest = digest;
  save_dataset(batch, (dir / "dataset.bin").string());
  write_config(dir, cfg, digest);
  std::cout << dir.string() << "\n";
  return kExitOk;
}

int cmd_train(const Common& c, const std::string& data_path, const std::string& resume_path) {
  const RunConfig cfg = resolve(c);
  const std::string digest = config_digest(cfg);
  std::cerr << "objective: minimize mean squared one-step prediction error\n";

  TrajectoryBatch batch;
  if (!data_path.empty()) {
    batch = load_dataset(data_path);
    if (batch.dist.m != cfg.model.obs_dim)
      throw ConfigError("dataset has m = " + std::to_string(batch.dist.m) + " but model.obs_dim = " +
                        std::to_string(cfg.model.obs_dim));
    if (batch.seed == cfg.seeds.test)
      throw ConfigError("dataset seed " + std::to_string(batch.seed) + " collides with seeds.test");
  } else {
    batch = make_dataset(cfg.systems, cfg.train.M, cfg.train.T, cfg.seeds.data, SeedStream::train, cfg.train.threads);
  }

  FilterNet net(cfg.model);
  FitState state;
  if (!resume_path.empty()) {
    Checkpoint ck = load_checkpoint(resume_path);
    const ModelConfig& a = ck.net.config();
    const ModelConfig& b = cfg.model;
    if (a.obs_dim != b.obs_dim || a.embed_dim != b.embed_dim || a.state_dim != b.state_dim ||
        a.blocks != b.blocks || a.conv_width != b.conv_width)
      throw ConfigError("checkpoint " + resume_path + " does not match the model section");
    if (ck.data_seed != batch.seed)
      throw ConfigError("checkpoint was trained on data seed " + std::to_string(ck.data_seed) + ", not " +
                        std::to_string(batch.seed));
    net = std::move(ck.net);
    state.epoch = ck.epoch;
    state.optimizer = std::move(ck.optimizer);
    std::cerr << "resuming after epoch " << state.epoch << "\n";
  }

  const fs::path dir = run_dir(c, cfg, "train", digest);
  write_config(dir, cfg, digest);
  // Wall-clock time is not reproducible: in deterministic mode it is only
  // logged to stderr and the CSV column is left empty.
  std::ostringstream csv;
  csv << "epoch,mean_loss,grad_norm,wall_ms\n";
  nlohmann::json timing = nlohmann::json::array();
  auto on_epoch = [&](int epoch, double loss, double grad_norm, double wall_ms) {
    csv << epoch << ',' << fmt(loss) << ',' << fmt(grad_norm) << ',';
    if (!cfg.deterministic) csv << fmt(wall_ms);
    csv << '\n';
    timing.push_back({{"epoch", epoch}, {"wall_ms", wall_ms}});
    std::cerr << "epoch " << epoch << "/" << cfg.train.epochs << " loss " << loss << " grad " << grad_norm << " ("
              << static_cast<long>(wall_ms) << " ms)\n";
  };

  TrainReport report;
  try {
    report = fit(net, batch, cfg.train, state, on_epoch);
  } catch (const NumericError&) {
    write_text(dir / "train.csv", csv.str());
    throw;
  }
  write_text(dir / "train.csv", csv.str());
  if (!cfg.deterministic) write_json(dir / "timing.json", timing);

  Checkpoint ck;
  ck.net = net;
  ck.epoch = state.epoch;
  ck.data_seed = batch.seed;
  ck.train_horizon = batch.horizon;
  ck.config_digest = digest;
  ck.tool_version = kToolVersion;
  ck.optimizer = state.optimizer;
  save_checkpoint(ck, (dir / "checkpoint.bin").string());

  nlohmann::json summary;
  summary["config_digest"] = digest;
  summary["tool_version"] = kToolVersion;
  summary["objective"] = "minimize mean squared one-step prediction error";
  summary["epochs_completed"] = state.epoch;
  summary["final_loss"] = report.epoch_loss.empty() ? nlohmann::json(nullptr) : nlohmann::json(report.final_loss);
  summary["param_count"] = param_count(net);
  summary["data_seed"] = batch.seed;
  summary["train_horizon"] = batch.horizon;
  write_json(dir / "train.json", summary);
  std::cout << dir.string() << "\n";
  return kExitOk;
}

int cmd_experiment(const Common& c, const std::string& kind_name, const std::string& ckpt_path) {
  RunConfig cfg = resolve(c);
  cfg.experiment.kind = parse_experiment_kind(kind_name);
  const std::string digest = config_digest(cfg);

  std::optional<Checkpoint> ck;
  if (!ckpt_path.empty()) ck = load_checkpoint(ckpt_path);
  ExperimentSpec spec = cfg.experiment;
  spec.config_digest = digest;
  if (spec.kind == ExperimentKind::length_gen && !spec.train_T && ck) spec.train_T = ck->train_horizon;
  if (!ck && std::find(spec.methods.begin(), spec.methods.end(), "ssm") != spec.methods.end())
    throw ConfigError("method ssm needs --checkpoint");

  const ExperimentResult result =
      run_experiment(spec, ck ? &ck->net : nullptr, ck ? std::optional<std::uint64_t>(ck->data_seed) : std::nullopt);
  const fs::path dir = run_dir(c, cfg, "experiment-" + to_string(spec.kind), digest);
  write_config(dir, cfg, digest);
  write_text(dir / "curves.csv", curves_csv(result));
  nlohmann::json summary = summary_json(result);
  if (ck) summary["checkpoint_digest"] = ck->config_digest;
  write_json(dir / "summary.json", summary);
  for (const RmsCurve& curve : result.curves)
    std::cerr << curve.method << ": mean RMS over [" << spec.burn_in << ", " << spec.T
              << ") = " << window_mean(curve, spec.burn_in, spec.T) << "\n";
  std::cout << dir.string() << "\n";
  return kExitOk;
}

int cmd_probe(const Common& c, const std::string& ckpt_path) {
  const RunConfig cfg = resolve(c);
  const std::string digest = config_digest(cfg);
  FilterNet net = ckpt_path.empty() ? FilterNet(cfg.model) : load_checkpoint(ckpt_path).net;
  if (net.config().obs_dim != cfg.systems.m)
    throw ConfigError("network obs_dim " + std::to_string(net.config().obs_dim) + " does not match systems.m " +
                      std::to_string(cfg.systems.m));

  const LinearSystem sys = seeded_probe_system(cfg.systems, cfg.seeds.probe);
  const ProbeConfig& pc = cfg.probe.decay;
  const double w_bar = pc.w_bar_sigmas * std::sqrt(sys.sigma_w2);
  const double v_bar = pc.v_bar_sigmas * std::sqrt(sys.sigma_v2);
  const BoundConstants k = bound_constants(net, sys, w_bar, v_bar);
  const IssConstants iss = linear_system_iss_constants(sys);
  const DecayProbe probe = robustness_decay(net, sys, pc);

  BoundInputs in;
  in.loss_bound = k.loss_bound;
  in.l_ell = k.l_ell;
  in.k_ssm = probe.fit5.k_dominating;
  in.l_g = k.l_g;
  in.c_rho = k.c_rho;
  in.rho = k.rho;
  in.n_theta = k.n_theta;
  in.theta_blocks = k.theta_blocks;
  in.n = cfg.systems.n;
  in.m = cfg.systems.m;
  const BoundTerms bounds = generalization_bound_terms(in, cfg.train.M, cfg.train.T, cfg.probe.delta, cfg.probe.epsilon,
                                                 std::sqrt(cfg.systems.sigma_w2), std::sqrt(cfg.systems.sigma_v2));

  MuSampleConfig mu;
  mu.samples = cfg.probe.mu_samples;
  mu.T = cfg.train.T;
  mu.dist = cfg.systems;
  mu.seed = cfg.seeds.probe;
  const FilterNet init(net.config());

  nlohmann::json j = probe_json(probe, k, iss, bounds);
  j["config_digest"] = digest;
  j["checkpoint"] = ckpt_path.empty() ? "fresh initialization" : "loaded";
  j["generalization_bound"]["k_ssm_source"] = "dominating envelope prefactor fitted by the decay probe";
  j["mu_lower_bound_vs_initialization"] = empirical_mu_lower_bound(net, init, mu);
  j["mu_note"] = "Monte-Carlo lower bound on the supremum";

  const fs::path dir = run_dir(c, cfg, "probe", digest);
  write_config(dir, cfg, digest);
  write_text(dir / "probe.csv", probe_csv(probe));
  write_json(dir / "constants.json", j);
  std::cerr << "alpha " << k.alpha << ", rho " << k.rho << ", decay factor " << probe.decay_factor << ", verdict "
            << (probe.pass() ? "pass" : "fail") << "\n";
  std::cout << dir.string() << "\n";
  return kExitOk;
}

int cmd_inspect(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path);
  char magic[8] = {};
  is.read(magic, 8);
  const std::string head(magic, static_cast<std::size_t>(is.gcount()));
  is.close();
  nlohmann::json j;
  if (head == "SSMFDATA") {
    const TrajectoryBatch b = load_dataset(path);
    j = {{"type", "dataset"},
         {"n", b.dist.n},
         {"m", b.dist.m},
         {"T", b.horizon},
         {"M", b.size()},
         {"seed", b.seed},
         {"noise", b.dist.noise.kind == NoiseKind::colored ? "colored" : "white"},
         {"spectral_radius", b.dist.radius},
         {"config_digest", b.config_digest}};
  } else if (head == "SSMFCKPT") {
    const Checkpoint ck = load_checkpoint(path);
    const ModelConfig& m = ck.net.config();
    j = {{"type", "checkpoint"},
         {"obs_dim", m.obs_dim},
         {"embed_dim", m.embed_dim},
         {"state_dim", m.state_dim},
         {"blocks", m.blocks},
         {"conv_width", m.conv_width},
         {"param_count", param_count(ck.net)},
         {"epoch", ck.epoch},
         {"data_seed", ck.data_seed},
         {"train_horizon", ck.train_horizon},
         {"config_digest", ck.config_digest},
         {"tool_version", ck.tool_version},
         {"has_optimizer_state", ck.optimizer.has_value()},
         {"block_alpha", block_alphas(ck.net)}};
  } else if (fs::path(path).extension() == ".json") {
    std::ifstream js(path);
    try {
      j = nlohmann::json::parse(js);
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path + ": " + e.what());
    }
  } else if (fs::path(path).extension() == ".csv") {
    std::ifstream cs(path);
    std::string header, line;
    std::getline(cs, header);
    long rows = 0;
    while (std::getline(cs, line)) rows += !line.empty();
    j = {{"type", "csv"}, {"header", header}, {"rows", rows}};
  } else {
    throw IoError("unrecognized artifact: " + path);
  }
  std::cout << j.dump(2) << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Selective state-space filters for one-step output prediction of unknown linear systems", "ssmf"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  Common common;
  std::string data_path, resume_path, ckpt_path, kind, artifact;

  CLI::App* gen = app.add_subcommand("gen-data", "sample M systems and write one trajectory each");
  add_common(gen, common);

  CLI::App* train = app.add_subcommand("train", "fit the filter network");
  add_common(train, common);
  train->add_option("--data", data_path, "dataset written by gen-data (generated inline when omitted)");
  train->add_option("--resume", resume_path, "checkpoint to continue from");

  CLI::App* exp = app.add_subcommand("experiment", "RMS curves for one evaluation protocol");
  add_common(exp, common);
  exp->add_option("kind", kind, "linear-gaussian | switching | colored | length-gen")->required();
  exp->add_option("--checkpoint", ckpt_path, "trained network (needed for the ssm method)");

  CLI::App* probe = app.add_subcommand("probe", "robustness decay probe and bound constants");
  add_common(probe, common);
  probe->add_option("--checkpoint", ckpt_path, "trained network (fresh initialization when omitted)");

  CLI::App* inspect = app.add_subcommand("inspect", "describe an artifact");
  inspect->add_option("artifact", artifact, "dataset, checkpoint, CSV or JSON file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*gen) return cmd_gen_data(common);
    if (*train) return cmd_train(common, data_path, resume_path);
    if (*exp) return cmd_experiment(common, kind, ckpt_path);
    if (*probe) return cmd_probe(common, ckpt_path);
    if (*inspect) return cmd_inspect(artifact);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kExitOther;
}

}  // namespace ssmf
