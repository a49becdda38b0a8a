#include "ssmf/config.hpp"

#include <openssl/evp.h>
#include <yaml-cpp/yaml.h>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "ssmf/errors.hpp"

namespace ssmf {

namespace {

// Reads the keys of one YAML mapping, remembering which ones were consumed so
// leftovers can be reported.
class Section {
 public:
  Section(const YAML::Node& node, std::string name, const std::string& source, bool with_lines)
      : node_(node), name_(std::move(name)), source_(source), with_lines_(with_lines) {
    if (node_ && !node_.IsNull() && !node_.IsMap())
      throw ConfigError(where(node_) + "section '" + name_ + "' must be a mapping");
  }

  template <typename T>
  void get(const char* key, T& out) {
    known_.insert(key);
    if (!present()) return;
    const YAML::Node v = node_[key];
    if (!v) return;
    try {
      out = v.as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError(where(v) + "'" + qualified(key) + "' expects " + type_name<T>() + ", got '" + text(v) + "'");
    }
  }

  void get_optional_int(const char* key, std::optional<int>& out) {
    known_.insert(key);
    if (!present()) return;
    const YAML::Node v = node_[key];
    if (!v) return;
    if (v.IsNull()) {
      out.reset();
      return;
    }
    int x = 0;
    get(key, x);
    out = x;
  }

  void get_list(const char* key, std::vector<std::string>& out) {
    known_.insert(key);
    if (!present()) return;
    const YAML::Node v = node_[key];
    if (!v) return;
    if (!v.IsSequence()) throw ConfigError(where(v) + "'" + qualified(key) + "' expects a list");
    out.clear();
    for (const YAML::Node& item : v) {
      try {
        out.push_back(item.as<std::string>());
      } catch (const YAML::Exception&) {
        throw ConfigError(where(item) + "'" + qualified(key) + "' entries must be strings");
      }
    }
  }

  YAML::Node child(const char* key) {
    known_.insert(key);
    return present() ? node_[key] : YAML::Node();
  }

  /// Throws on the first key that no getter asked for.
  void finish() const {
    if (!present()) return;
    for (auto it = node_.begin(); it != node_.end(); ++it) {
      const std::string key = it->first.as<std::string>();
      if (!known_.count(key)) {
        std::string msg = where(it->first) + "unknown key '" + key + "'";
        if (!name_.empty()) msg += " in section '" + name_ + "'";
        std::string list;
        for (const auto& k : known_) list += (list.empty() ? "" : ", ") + k;
        throw ConfigError(msg + " (expected one of: " + list + ")");
      }
    }
  }

  std::string where(const YAML::Node& n) const {
    std::ostringstream os;
    os << source_;
    if (with_lines_ && !n.Mark().is_null()) os << ':' << n.Mark().line + 1 << ':' << n.Mark().column + 1;
    os << ": ";
    return os.str();
  }

 private:
  bool present() const { return node_ && node_.IsMap(); }
  std::string qualified(const char* key) const { return name_.empty() ? key : name_ + "." + key; }
  static std::string text(const YAML::Node& v) {
    if (v.IsScalar()) return v.Scalar();
    return v.IsSequence() ? "<list>" : "<mapping>";
  }
  template <typename T>
  static const char* type_name() {
    if constexpr (std::is_same_v<T, bool>) return "true or false";
    else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) return "a non-negative integer";
    else if constexpr (std::is_integral_v<T>) return "an integer";
    else if constexpr (std::is_floating_point_v<T>) return "a number";
    else return "a string";
  }

  YAML::Node node_;
  std::string name_;
  std::string source_;
  bool with_lines_;
  std::set<std::string> known_;
};

void parse_into(RunConfig& cfg, const YAML::Node& root, const std::string& source, bool with_lines) {
  Section top(root, "", source, with_lines);

  Section seeds(top.child("seeds"), "seeds", source, with_lines);
  seeds.get("data", cfg.seeds.data);
  seeds.get("test", cfg.seeds.test);
  seeds.get("probe", cfg.seeds.probe);
  seeds.get("model", cfg.seeds.model);
  seeds.finish();

  Section model(top.child("model"), "model", source, with_lines);
  model.get("obs_dim", cfg.model.obs_dim);
  model.get("embed_dim", cfg.model.embed_dim);
  model.get("state_dim", cfg.model.state_dim);
  model.get("blocks", cfg.model.blocks);
  model.get("conv_width", cfg.model.conv_width);
  model.get("norm_eps", cfg.model.norm_eps);
  model.finish();

  Section sys(top.child("systems"), "systems", source, with_lines);
  sys.get("n", cfg.systems.n);
  sys.get("m", cfg.systems.m);
  sys.get("radius", cfg.systems.radius);
  sys.get("sigma_w2", cfg.systems.sigma_w2);
  sys.get("sigma_v2", cfg.systems.sigma_v2);
  const YAML::Node noise_node = sys.child("noise");
  if (noise_node && !noise_node.IsNull()) {
    std::string noise;
    sys.get("noise", noise);
    if (noise == "white") cfg.systems.noise.kind = NoiseKind::white;
    else if (noise == "colored") cfg.systems.noise.kind = NoiseKind::colored;
    else throw ConfigError(sys.where(noise_node) + "'systems.noise' must be white or colored, got '" + noise + "'");
  }
  sys.get("window", cfg.systems.noise.window);
  sys.get("sigma_eta2", cfg.systems.noise.sigma_eta2);
  sys.get("sigma_nu2", cfg.systems.noise.sigma_nu2);
  sys.finish();

  Section train(top.child("train"), "train", source, with_lines);
  train.get("M", cfg.train.M);
  train.get("T", cfg.train.T);
  train.get("epochs", cfg.train.epochs);
  train.get("batch_size", cfg.train.batch_size);
  train.get("learning_rate", cfg.train.learning_rate);
  train.get("beta1", cfg.train.beta1);
  train.get("beta2", cfg.train.beta2);
  train.get("eps", cfg.train.eps);
  train.get("clip", cfg.train.clip);
  train.get("divergence_factor", cfg.train.divergence_factor);
  train.finish();

  Section exp(top.child("experiment"), "experiment", source, with_lines);
  const YAML::Node kind_node = exp.child("kind");
  if (kind_node && !kind_node.IsNull()) {
    std::string kind;
    exp.get("kind", kind);
    try {
      cfg.experiment.kind = parse_experiment_kind(kind);
    } catch (const ConfigError& e) {
      throw ConfigError(exp.where(kind_node) + e.what());
    }
  }
  exp.get("N", cfg.experiment.N);
  exp.get("T", cfg.experiment.T);
  exp.get_optional_int("train_T", cfg.experiment.train_T);
  exp.get_list("methods", cfg.experiment.methods);
  exp.get("burn_in", cfg.experiment.burn_in);
  exp.get("identical_switch", cfg.experiment.identical_switch);
  exp.finish();

  Section probe(top.child("probe"), "probe", source, with_lines);
  probe.get("tau", cfg.probe.decay.tau);
  probe.get("max_lag", cfg.probe.decay.max_lag);
  probe.get("pairs", cfg.probe.decay.pairs);
  probe.get("min_pairs", cfg.probe.decay.min_pairs);
  probe.get("w_bar_sigmas", cfg.probe.decay.w_bar_sigmas);
  probe.get("v_bar_sigmas", cfg.probe.decay.v_bar_sigmas);
  probe.get("zero_perturbation", cfg.probe.decay.zero_perturbation);
  probe.get("delta", cfg.probe.delta);
  probe.get("epsilon", cfg.probe.epsilon);
  probe.get("mu_samples", cfg.probe.mu_samples);
  probe.finish();

  top.get("output", cfg.output);
  top.get("threads", cfg.threads);
  top.get("deterministic", cfg.deterministic);
  top.finish();
}

}  // namespace

void RunConfig::propagate() {
  const int workers = deterministic ? 1 : threads;
  model.seed = seeds.model;
  train.seed = seeds.data;
  train.threads = workers;
  experiment.seed = seeds.test;
  experiment.dist = systems;
  experiment.threads = workers;
  probe.decay.seed = seeds.probe;
  probe.decay.threads = workers;
}

RunConfig parse_config(const std::string& text, const std::string& source) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    std::ostringstream os;
    os << source << ':' << e.mark.line + 1 << ':' << e.mark.column + 1 << ": YAML syntax error: " << e.msg;
    throw ConfigError(os.str());
  }
  if (root && !root.IsNull() && !root.IsMap()) throw ConfigError(source + ": top level must be a mapping");
  RunConfig cfg;
  parse_into(cfg, root, source, true);
  cfg.propagate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read config " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return parse_config(os.str(), path);
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("--set " + assignment + ": expected section.key=value");
  const std::string path = assignment.substr(0, eq), value = assignment.substr(eq + 1);
  YAML::Node leaf;
  try {
    leaf = YAML::Load(value);
  } catch (const YAML::Exception&) {
    throw ConfigError("--set " + assignment + ": value is not valid YAML");
  }
  YAML::Node root(YAML::NodeType::Map);
  const auto dot = path.find('.');
  if (dot == std::string::npos) {
    root[path] = leaf;
  } else {
    if (path.find('.', dot + 1) != std::string::npos)
      throw ConfigError("--set " + assignment + ": keys nest at most one level");
    YAML::Node section(YAML::NodeType::Map);
    section[path.substr(dot + 1)] = leaf;
    root[path.substr(0, dot)] = section;
  }
  parse_into(cfg, root, "--set " + assignment, false);
  cfg.propagate();
}

namespace {

void check(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("config: " + what);
}

}  // namespace

void validate_config(const RunConfig& c) {
  check(c.model.obs_dim >= 1 && c.model.embed_dim >= 1 && c.model.state_dim >= 1 && c.model.blocks >= 1,
        "model dimensions and block count must be >= 1");
  check(c.model.conv_width >= 0, "model.conv_width must be >= 0");
  check(c.model.norm_eps > 0.0, "model.norm_eps must be positive");
  check(c.model.obs_dim == c.systems.m, "model.obs_dim (" + std::to_string(c.model.obs_dim) +
                                            ") must equal systems.m (" + std::to_string(c.systems.m) + ")");
  check(c.systems.n >= 1 && c.systems.m >= 1, "systems.n and systems.m must be >= 1");
  check(c.systems.radius > 0.0 && c.systems.radius < 1.0, "systems.radius must lie in (0, 1)");
  check(c.systems.sigma_w2 >= 0.0 && c.systems.sigma_v2 >= 0.0, "noise variances must be non-negative");
  check(c.systems.noise.window >= 1, "systems.window must be >= 1");
  check(c.systems.noise.sigma_eta2 >= 0.0 && c.systems.noise.sigma_nu2 >= 0.0,
        "colored-noise variances must be non-negative");
  check(c.train.M >= 1 && c.train.T >= 2 && c.train.epochs >= 1 && c.train.batch_size >= 1,
        "train.M, train.epochs, train.batch_size must be >= 1 and train.T >= 2");
  check(c.train.learning_rate > 0.0, "train.learning_rate must be positive");
  check(c.train.beta1 >= 0.0 && c.train.beta1 < 1.0 && c.train.beta2 >= 0.0 && c.train.beta2 < 1.0,
        "train.beta1 and train.beta2 must lie in [0, 1)");
  check(c.train.eps > 0.0 && c.train.divergence_factor > 0.0, "train.eps and train.divergence_factor must be positive");
  check(c.experiment.N >= 1 && c.experiment.T >= 1 && c.experiment.burn_in >= 0,
        "experiment.N, experiment.T must be >= 1 and burn_in >= 0");
  check(c.probe.decay.tau >= 0 && c.probe.decay.max_lag >= 1 && c.probe.decay.pairs >= 1 &&
            c.probe.decay.min_pairs >= 1,
        "probe.tau >= 0, probe.max_lag, probe.pairs and probe.min_pairs >= 1");
  check(c.probe.decay.w_bar_sigmas > 0.0 && c.probe.decay.v_bar_sigmas > 0.0, "probe noise bounds must be positive");
  check(c.probe.delta > 0.0 && c.probe.delta < 1.0, "probe.delta must lie in (0, 1)");
  check(c.probe.epsilon > 0.0 && c.probe.mu_samples >= 1, "probe.epsilon must be positive and mu_samples >= 1");
  check(c.threads >= 1, "threads must be >= 1");
  check(c.seeds.data != c.seeds.test, "seeds.data and seeds.test are both " + std::to_string(c.seeds.data) +
                                          "; training and test systems would coincide");
}

nlohmann::json canonical_json(const RunConfig& c) {
  using nlohmann::json;
  const auto& s = c.systems;
  json j;
  j["seeds"] = {{"data", c.seeds.data}, {"test", c.seeds.test}, {"probe", c.seeds.probe}, {"model", c.seeds.model}};
  j["model"] = {{"obs_dim", c.model.obs_dim},       {"embed_dim", c.model.embed_dim},
                {"state_dim", c.model.state_dim},   {"blocks", c.model.blocks},
                {"conv_width", c.model.conv_width}, {"norm_eps", c.model.norm_eps}};
  j["systems"] = {{"n", s.n},
                  {"m", s.m},
                  {"radius", s.radius},
                  {"sigma_w2", s.sigma_w2},
                  {"sigma_v2", s.sigma_v2},
                  {"noise", s.noise.kind == NoiseKind::colored ? "colored" : "white"},
                  {"window", s.noise.window},
                  {"sigma_eta2", s.noise.sigma_eta2},
                  {"sigma_nu2", s.noise.sigma_nu2}};
  j["train"] = {{"M", c.train.M},
                {"T", c.train.T},
                {"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"learning_rate", c.train.learning_rate},
                {"beta1", c.train.beta1},
                {"beta2", c.train.beta2},
                {"eps", c.train.eps},
                {"clip", c.train.clip},
                {"divergence_factor", c.train.divergence_factor}};
  j["experiment"] = {{"kind", to_string(c.experiment.kind)},
                     {"N", c.experiment.N},
                     {"T", c.experiment.T},
                     {"train_T", c.experiment.train_T ? json(*c.experiment.train_T) : json(nullptr)},
                     {"methods", c.experiment.methods},
                     {"burn_in", c.experiment.burn_in},
                     {"identical_switch", c.experiment.identical_switch}};
  const auto& p = c.probe.decay;
  j["probe"] = {{"tau", p.tau},
                {"max_lag", p.max_lag},
                {"pairs", p.pairs},
                {"min_pairs", p.min_pairs},
                {"w_bar_sigmas", p.w_bar_sigmas},
                {"v_bar_sigmas", p.v_bar_sigmas},
                {"zero_perturbation", p.zero_perturbation},
                {"delta", c.probe.delta},
                {"epsilon", c.probe.epsilon},
                {"mu_samples", c.probe.mu_samples}};
  return j;
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw IoError("sha256: digest computation failed");
  std::ostringstream os;
  os << std::hex << std::setfill('0');
  for (unsigned int i = 0; i < len; ++i) os << std::setw(2) << static_cast<int>(md[i]);
  return os.str();
}

std::string config_digest(const RunConfig& cfg) { return sha256_hex(canonical_json(cfg).dump()); }

}  // namespace ssmf
