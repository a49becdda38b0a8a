#include "ssmf/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "ssmf/binary_io.hpp"

namespace ssmf {

namespace {

void check_config(const ModelConfig& c) {
  require(c.obs_dim >= 1, "model: obs_dim must be >= 1");
  require(c.embed_dim >= 1, "model: embed_dim must be >= 1");
  require(c.state_dim >= 1, "model: state_dim must be >= 1");
  require(c.blocks >= 0, "model: blocks must be >= 0");
  require(c.conv_width >= 0, "model: conv_width must be >= 0");
  require(c.norm_eps > 0.0, "model: norm_eps must be > 0");
}

// Largest eigenvalue -0.1, the rest log-spaced down to -1 along each channel.
Eigen::MatrixXd initial_a_log(int d, int l) {
  Eigen::MatrixXd a_log(d, l);
  for (int j = 0; j < l; ++j) {
    const double frac = l == 1 ? 0.0 : static_cast<double>(j) / (l - 1);
    a_log.col(j).setConstant(std::log(0.1) + frac * std::log(10.0));
  }
  return a_log;
}

struct BlockCache {
  Eigen::MatrixXd u;       // block input, d x T
  Eigen::MatrixXd xhat;    // normalized input before gain
  Eigen::VectorXd rstd;    // 1 / sqrt(var + eps) per step
  Eigen::MatrixXd x;       // selective-scan input
};

struct ForwardCache {
  std::vector<BlockCache> blocks;
  Eigen::MatrixXd e_last;
  Eigen::MatrixXd predictions;
};

void normalize_columns(const Eigen::MatrixXd& u, double eps, Eigen::MatrixXd& xhat, Eigen::VectorXd& rstd) {
  const Eigen::Index d = u.rows();
  xhat.resize(u.rows(), u.cols());
  rstd.resize(u.cols());
  for (Eigen::Index t = 0; t < u.cols(); ++t) {
    const double mu = u.col(t).mean();
    xhat.col(t) = u.col(t).array() - mu;
    const double var = xhat.col(t).squaredNorm() / static_cast<double>(d);
    rstd(t) = 1.0 / std::sqrt(var + eps);
    xhat.col(t) *= rstd(t);
  }
}

void causal_conv(const Eigen::MatrixXd& conv, const Eigen::MatrixXd& n, Eigen::MatrixXd& x) {
  if (conv.cols() == 0) {
    x = n;
    return;
  }
  x.setZero(n.rows(), n.cols());
  for (Eigen::Index t = 0; t < n.cols(); ++t) {
    for (Eigen::Index j = 0; j < conv.cols() && j <= t; ++j) {
      x.col(t).array() += conv.col(j).array() * n.col(t - j).array();
    }
  }
}

void check_inputs(const FilterNet& net, const Eigen::Ref<const Eigen::MatrixXd>& ys) {
  require(ys.rows() == net.config().obs_dim, "model: observation width does not match obs_dim");
  for (Eigen::Index t = 0; t < ys.cols(); ++t) {
    if (!ys.col(t).allFinite()) {
      std::ostringstream os;
      os << "model: non-finite observation at t=" << t;
      throw ContractViolation(os.str());
    }
  }
}

ForwardCache forward_cached(const FilterNet& net, const Eigen::Ref<const Eigen::MatrixXd>& ys) {
  ForwardCache cache;
  const double eps = net.config().norm_eps;
  Eigen::MatrixXd e = net.input_proj * ys;
  cache.blocks.resize(net.blocks.size());
  Eigen::VectorXd out(net.config().embed_dim);
  for (std::size_t b = 0; b < net.blocks.size(); ++b) {
    const SsmBlock& blk = net.blocks[b];
    BlockCache& bc = cache.blocks[b];
    bc.u = e;
    normalize_columns(bc.u, eps, bc.xhat, bc.rstd);
    const Eigen::MatrixXd n = bc.xhat.array().colwise() * blk.norm_gain.array();
    causal_conv(blk.conv, n, bc.x);
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(blk.ssm.channels(), blk.ssm.state_size());
    for (Eigen::Index t = 0; t < ys.cols(); ++t) {
      advance(blk.ssm, h, bc.x.col(t), out);
      e.col(t) += out;
    }
  }
  cache.predictions = net.output_proj * e;
  cache.e_last = std::move(e);
  return cache;
}

FilterNet backward_cached(const FilterNet& net, const ForwardCache& cache,
                          const Eigen::Ref<const Eigen::MatrixXd>& ys,
                          const Eigen::Ref<const Eigen::MatrixXd>& upstream) {
  FilterNet g = FilterNet::zeros(net.config());
  const Eigen::Index T = ys.cols();
  const double d = static_cast<double>(net.config().embed_dim);

  g.output_proj.noalias() = upstream * cache.e_last.transpose();
  Eigen::MatrixXd de = net.output_proj.transpose() * upstream;

  for (std::size_t bi = net.blocks.size(); bi-- > 0;) {
    const SsmBlock& blk = net.blocks[bi];
    const BlockCache& bc = cache.blocks[bi];
    SsmBlock& gb = g.blocks[bi];

    ScanGradients<double> sg = backward(blk.ssm, bc.x, de);
    gb.ssm.w_b = std::move(sg.params.w_b);
    gb.ssm.w_c = std::move(sg.params.w_c);
    gb.ssm.p = sg.params.p;
    gb.ssm.q = std::move(sg.params.q);
    gb.ssm.a_diag = sg.params.a_diag;
    gb.a_log = sg.params.a_diag.cwiseProduct(blk.ssm.a_diag);

    const Eigen::MatrixXd n = bc.xhat.array().colwise() * blk.norm_gain.array();
    Eigen::MatrixXd dn;
    if (blk.conv.cols() == 0) {
      dn = std::move(sg.inputs);
    } else {
      dn.setZero(n.rows(), T);
      for (Eigen::Index t = 0; t < T; ++t) {
        for (Eigen::Index j = 0; j < blk.conv.cols() && j <= t; ++j) {
          dn.col(t - j).array() += blk.conv.col(j).array() * sg.inputs.col(t).array();
          gb.conv.col(j).array() += sg.inputs.col(t).array() * n.col(t - j).array();
        }
      }
    }

    gb.norm_gain = (dn.array() * bc.xhat.array()).rowwise().sum();
    for (Eigen::Index t = 0; t < T; ++t) {
      const Eigen::VectorXd dxhat = dn.col(t).cwiseProduct(blk.norm_gain);
      const double mean_dxhat = dxhat.sum() / d;
      const double mean_dxhat_xhat = dxhat.dot(bc.xhat.col(t)) / d;
      de.col(t).array() += bc.rstd(t) * (dxhat.array() - mean_dxhat - bc.xhat.col(t).array() * mean_dxhat_xhat);
    }
  }
  g.input_proj.noalias() = de * ys.transpose();
  return g;
}

}  // namespace

FilterNet::FilterNet(const ModelConfig& config) : config_(config) {
  check_config(config);
  const int m = config.obs_dim, d = config.embed_dim, l = config.state_dim;
  std::mt19937_64 rng(config.seed);
  auto fill = [&rng](Eigen::MatrixXd& mat, double stddev) {
    std::normal_distribution<double> nd(0.0, stddev);
    for (Eigen::Index i = 0; i < mat.size(); ++i) mat.data()[i] = nd(rng);
  };

  input_proj.resize(d, m);
  fill(input_proj, 1.0 / std::sqrt(static_cast<double>(m)));
  blocks.resize(static_cast<std::size_t>(config.blocks));
  for (SsmBlock& b : blocks) {
    b.norm_gain = Eigen::VectorXd::Ones(d);
    b.conv.resize(d, config.conv_width);
    fill(b.conv, 0.3);
    b.a_log = initial_a_log(d, l);
    b.ssm = SsmParams<double>(d, l);
    fill(b.ssm.w_b, 1.0 / std::sqrt(static_cast<double>(d)));
    fill(b.ssm.w_c, 1.0 / std::sqrt(static_cast<double>(d)));
    b.ssm.p = 0.0;
    Eigen::MatrixXd q(d, 1);
    fill(q, 0.01);
    b.ssm.q = q.col(0);
    b.sync();
  }
  output_proj.resize(m, d);
  fill(output_proj, 0.1 / std::sqrt(static_cast<double>(d)));
}

FilterNet FilterNet::zeros(const ModelConfig& config) {
  check_config(config);
  FilterNet net;
  net.config_ = config;
  const int m = config.obs_dim, d = config.embed_dim, l = config.state_dim;
  net.input_proj = Eigen::MatrixXd::Zero(d, m);
  net.blocks.resize(static_cast<std::size_t>(config.blocks));
  for (SsmBlock& b : net.blocks) {
    b.norm_gain = Eigen::VectorXd::Zero(d);
    b.conv = Eigen::MatrixXd::Zero(d, config.conv_width);
    b.a_log = Eigen::MatrixXd::Zero(d, l);
    b.ssm = SsmParams<double>::zeros_like(SsmParams<double>(d, l));
  }
  net.output_proj = Eigen::MatrixXd::Zero(m, d);
  return net;
}

void FilterNet::sync() {
  for (SsmBlock& b : blocks) b.sync();
}

std::size_t param_count(const FilterNet& net) {
  std::size_t n = 0;
  for_each_tensor(net, [&n](std::string_view, const double*, Eigen::Index r, Eigen::Index c) {
    n += static_cast<std::size_t>(r * c);
  });
  return n;
}

std::size_t param_count(const ModelConfig& c) {
  const std::size_t m = c.obs_dim, d = c.embed_dim, l = c.state_dim;
  const std::size_t per_block = d /*gain*/ + d * c.conv_width + d * l /*A*/ + 2 * l * d + 1 + d;
  return 2 * d * m + c.blocks * per_block;
}

Eigen::VectorXd to_flat(const FilterNet& net) {
  Eigen::VectorXd flat(static_cast<Eigen::Index>(param_count(net)));
  Eigen::Index off = 0;
  for_each_tensor(net, [&](std::string_view, const double* data, Eigen::Index r, Eigen::Index c) {
    flat.segment(off, r * c) = Eigen::Map<const Eigen::VectorXd>(data, r * c);
    off += r * c;
  });
  return flat;
}

void from_flat(FilterNet& net, const Eigen::Ref<const Eigen::VectorXd>& flat) {
  require(flat.size() == static_cast<Eigen::Index>(param_count(net)), "from_flat: size mismatch");
  Eigen::Index off = 0;
  for_each_tensor(net, [&](std::string_view, double* data, Eigen::Index r, Eigen::Index c) {
    Eigen::Map<Eigen::VectorXd>(data, r * c) = flat.segment(off, r * c);
    off += r * c;
  });
  net.sync();
}

FilterStream::FilterStream(const FilterNet& net) : net_(&net) { reset(); }

void FilterStream::reset() {
  const auto& c = net_->config();
  states_.assign(net_->blocks.size(), Eigen::MatrixXd::Zero(c.embed_dim, c.state_dim));
  history_.assign(net_->blocks.size(), Eigen::MatrixXd::Zero(c.embed_dim, c.conv_width));
  t_ = 0;
}

Eigen::VectorXd FilterStream::push(const Eigen::Ref<const Eigen::VectorXd>& y) {
  const auto& c = net_->config();
  require(y.size() == c.obs_dim, "FilterStream: observation width does not match obs_dim");
  if (!y.allFinite()) {
    std::ostringstream os;
    os << "model: non-finite observation at t=" << t_;
    throw ContractViolation(os.str());
  }
  Eigen::VectorXd e = net_->input_proj * y;
  Eigen::VectorXd out(c.embed_dim);
  const Eigen::Index k = c.conv_width;
  for (std::size_t b = 0; b < net_->blocks.size(); ++b) {
    const SsmBlock& blk = net_->blocks[b];
    const double mu = e.mean();
    Eigen::VectorXd n = e.array() - mu;
    const double var = n.squaredNorm() / static_cast<double>(c.embed_dim);
    n *= 1.0 / std::sqrt(var + c.norm_eps);
    n.array() *= blk.norm_gain.array();

    Eigen::VectorXd x;
    if (k == 0) {
      x = std::move(n);
    } else {
      history_[b].col(t_ % k) = n;
      x.setZero(c.embed_dim);
      for (Eigen::Index j = 0; j < k && j <= t_; ++j) {
        x.array() += blk.conv.col(j).array() * history_[b].col((t_ - j) % k).array();
      }
    }
    advance(blk.ssm, states_[b], x, out);
    e += out;
  }
  ++t_;
  return net_->output_proj * e;
}

Eigen::MatrixXd predict_sequence(const FilterNet& net, const Eigen::Ref<const Eigen::MatrixXd>& ys) {
  require(ys.cols() >= 1, "predict_sequence: need at least one observation");
  check_inputs(net, ys);
  FilterStream stream(net);
  Eigen::MatrixXd preds(ys.rows(), ys.cols());
  for (Eigen::Index t = 0; t < ys.cols(); ++t) preds.col(t) = stream.push(ys.col(t));
  return preds;
}

LossGradient loss_and_gradient(const FilterNet& net, const Eigen::Ref<const Eigen::MatrixXd>& ys) {
  require(ys.cols() >= 2, "loss_and_gradient: need at least two observations");
  check_inputs(net, ys);
  const Eigen::Index T = ys.cols() - 1;
  const auto inputs = ys.leftCols(T);
  ForwardCache cache = forward_cached(net, inputs);
  const Eigen::MatrixXd resid = ys.rightCols(T) - cache.predictions;
  LossGradient out;
  out.loss_sum = resid.squaredNorm();
  out.terms = static_cast<std::size_t>(T);
  out.grad = backward_cached(net, cache, inputs, -2.0 * resid);
  return out;
}

FilterNet output_gradient(const FilterNet& net, const Eigen::Ref<const Eigen::MatrixXd>& ys,
                          const Eigen::Ref<const Eigen::MatrixXd>& upstream) {
  check_inputs(net, ys);
  require(upstream.rows() == ys.rows() && upstream.cols() == ys.cols(),
          "output_gradient: upstream shape must match predictions");
  ForwardCache cache = forward_cached(net, ys);
  return backward_cached(net, cache, ys, upstream);
}

// ---------------------------------------------------------------------------
// Checkpoint format (little-endian):
//   char[8] "SSMFCKPT", u32 version
//   u32 obs_dim, embed_dim, state_dim, blocks, conv_width; u64 model seed; f64 norm_eps
//   u64 epoch, u64 data_seed, u32 train_horizon
//   str config_digest, str tool_version          (str = u32 length + bytes)
//   u32 tensor_count, then per tensor: str name, u32 rows, u32 cols, f64[rows*cols] column-major
//   u8 has_optimizer; if 1: u64 step, u64 len, f64[len] first moment, f64[len] second moment

namespace {
constexpr char kCkptMagic[8] = {'S', 'S', 'M', 'F', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCkptVersion = 1;
}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  using namespace binio;
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  const ModelConfig& c = ckpt.net.config();
  os.write(kCkptMagic, 8);
  put<std::uint32_t>(os, kCkptVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(c.obs_dim));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(c.embed_dim));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(c.state_dim));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(c.blocks));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(c.conv_width));
  put<std::uint64_t>(os, c.seed);
  put<double>(os, c.norm_eps);
  put<std::uint64_t>(os, ckpt.epoch);
  put<std::uint64_t>(os, ckpt.data_seed);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.train_horizon));
  put_string(os, ckpt.config_digest);
  put_string(os, ckpt.tool_version);

  std::uint32_t count = 0;
  for_each_tensor(ckpt.net, [&count](std::string_view, const double*, Eigen::Index, Eigen::Index) { ++count; });
  put<std::uint32_t>(os, count);
  for_each_tensor(ckpt.net, [&os](std::string_view name, const double* data, Eigen::Index r, Eigen::Index cols) {
    put_string(os, std::string(name));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(r));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(cols));
    put_doubles(os, data, static_cast<std::size_t>(r * cols));
  });

  put<std::uint8_t>(os, ckpt.optimizer ? 1 : 0);
  if (ckpt.optimizer) {
    const OptimizerState& o = *ckpt.optimizer;
    require(o.first_moment.size() == o.second_moment.size(), "checkpoint: optimizer moment sizes differ");
    put<std::uint64_t>(os, o.step);
    put<std::uint64_t>(os, static_cast<std::uint64_t>(o.first_moment.size()));
    put_doubles(os, o.first_moment.data(), static_cast<std::size_t>(o.first_moment.size()));
    put_doubles(os, o.second_moment.data(), static_cast<std::size_t>(o.second_moment.size()));
  }
  if (!os) throw IoError("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  using namespace binio;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || !std::equal(magic, magic + 8, kCkptMagic)) throw IoError("not a checkpoint file: " + path);
  const auto version = get<std::uint32_t>(is);
  if (version != kCkptVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));

  ModelConfig c;
  c.obs_dim = static_cast<int>(get<std::uint32_t>(is));
  c.embed_dim = static_cast<int>(get<std::uint32_t>(is));
  c.state_dim = static_cast<int>(get<std::uint32_t>(is));
  c.blocks = static_cast<int>(get<std::uint32_t>(is));
  c.conv_width = static_cast<int>(get<std::uint32_t>(is));
  c.seed = get<std::uint64_t>(is);
  c.norm_eps = get<double>(is);

  Checkpoint ckpt;
  ckpt.epoch = get<std::uint64_t>(is);
  ckpt.data_seed = get<std::uint64_t>(is);
  ckpt.train_horizon = static_cast<int>(get<std::uint32_t>(is));
  ckpt.config_digest = get_string(is);
  ckpt.tool_version = get_string(is);

  ckpt.net = FilterNet::zeros(c);
  std::uint32_t expected = 0;
  for_each_tensor(ckpt.net, [&expected](std::string_view, const double*, Eigen::Index, Eigen::Index) { ++expected; });
  const auto count = get<std::uint32_t>(is);
  if (count != expected) throw IoError("checkpoint tensor count does not match its config");
  for_each_tensor(ckpt.net, [&is](std::string_view name, double* data, Eigen::Index r, Eigen::Index cols) {
    const std::string got = get_string(is);
    const auto rows = get<std::uint32_t>(is);
    const auto cc = get<std::uint32_t>(is);
    if (got != name || rows != r || cc != cols) {
      throw IoError("checkpoint tensor '" + got + "' does not match expected '" + std::string(name) + "'");
    }
    get_doubles(is, data, static_cast<std::size_t>(r * cols));
  });
  ckpt.net.sync();

  if (get<std::uint8_t>(is) == 1) {
    OptimizerState o;
    o.step = get<std::uint64_t>(is);
    const auto len = get<std::uint64_t>(is);
    if (len != param_count(ckpt.net)) throw IoError("checkpoint optimizer state has wrong length");
    o.first_moment.resize(static_cast<Eigen::Index>(len));
    o.second_moment.resize(static_cast<Eigen::Index>(len));
    get_doubles(is, o.first_moment.data(), len);
    get_doubles(is, o.second_moment.data(), len);
    ckpt.optimizer = std::move(o);
  }
  return ckpt;
}

}  // namespace ssmf
