#pragma once

// Single selective state-space layer with diagonal continuous-time A.
//
// Shapes, with d input/output channels and l states per channel:
//   a_diag  d x l   (row c holds the diagonal entries of A for channel c)
//   w_b     l x d
//   w_c     l x d
//   q       d
//   h       d x l
//
// One step with input x:
//   delta = softplus(p + q.x)
//   h     = exp(delta * a_diag) .* h + delta * x (W_B x)^T
//   yhat  = h (W_C x)
//
// Feeding x_0..x_{t-1} and reading after the last update reproduces the
// unrolled sum form exactly; forward_unrolled() evaluates that sum directly.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <sstream>
#include <string>
#include <vector>

#include "ssmf/errors.hpp"

namespace ssmf {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// softplus(x) = ln(1 + e^x), evaluated as max(x,0) + log1p(exp(-|x|)).
template <typename Scalar>
Scalar softplus(Scalar x) {
  using std::abs;
  using std::exp;
  using std::log1p;
  return (x > Scalar(0) ? x : Scalar(0)) + log1p(exp(-abs(x)));
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  using std::exp;
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + exp(-x));
  const Scalar e = exp(x);
  return e / (Scalar(1) + e);
}

template <typename Scalar = double>
struct SsmParams {
  MatrixX<Scalar> a_diag;
  MatrixX<Scalar> w_b;
  MatrixX<Scalar> w_c;
  Scalar p{0};
  VectorX<Scalar> q;

  SsmParams() = default;
  SsmParams(Eigen::Index channels, Eigen::Index state)
      : a_diag(MatrixX<Scalar>::Constant(channels, state, Scalar(-1))),
        w_b(MatrixX<Scalar>::Zero(state, channels)),
        w_c(MatrixX<Scalar>::Zero(state, channels)),
        q(VectorX<Scalar>::Zero(channels)) {}

  Eigen::Index channels() const { return a_diag.rows(); }
  Eigen::Index state_size() const { return a_diag.cols(); }

  static SsmParams zeros_like(const SsmParams& o) {
    SsmParams z;
    z.a_diag = MatrixX<Scalar>::Zero(o.a_diag.rows(), o.a_diag.cols());
    z.w_b = MatrixX<Scalar>::Zero(o.w_b.rows(), o.w_b.cols());
    z.w_c = MatrixX<Scalar>::Zero(o.w_c.rows(), o.w_c.cols());
    z.p = Scalar(0);
    z.q = VectorX<Scalar>::Zero(o.q.size());
    return z;
  }
};

/// Throws ContractViolation unless shapes agree and every a_diag entry is
/// strictly negative and all blocks are finite.
template <typename Scalar>
void validate(const SsmParams<Scalar>& params) {
  const auto d = params.channels();
  const auto l = params.state_size();
  require(d > 0 && l > 0, "SsmParams: empty parameter set");
  require(params.w_b.rows() == l && params.w_b.cols() == d,
          "SsmParams: w_b must be state x channels");
  require(params.w_c.rows() == l && params.w_c.cols() == d,
          "SsmParams: w_c must be state x channels");
  require(params.q.size() == d, "SsmParams: q must have one entry per channel");
  require(params.a_diag.allFinite() && params.w_b.allFinite() && params.w_c.allFinite() &&
              params.q.allFinite() && std::isfinite(static_cast<double>(params.p)),
          "SsmParams: non-finite parameter");
  require((params.a_diag.array() < Scalar(0)).all(),
          "SsmParams: every a_diag entry must be strictly negative");
}

/// Number of scalar parameters in one layer: A, W_B, W_C, p, q.
template <typename Scalar>
std::size_t param_count(const SsmParams<Scalar>& params) {
  return static_cast<std::size_t>(params.a_diag.size() + params.w_b.size() + params.w_c.size() +
                                  1 + params.q.size());
}

template <typename Scalar = double>
struct SsmState {
  MatrixX<Scalar> h;

  static SsmState zeros(const SsmParams<Scalar>& params) {
    return SsmState{MatrixX<Scalar>::Zero(params.channels(), params.state_size())};
  }
};

template <typename Scalar = double>
struct StepSize {
  Scalar delta;
};

template <typename Scalar, typename Derived>
StepSize<Scalar> discretize(const SsmParams<Scalar>& params,
                            const Eigen::MatrixBase<Derived>& y) {
  if (y.size() != params.q.size()) {
    std::ostringstream os;
    os << "discretize: input has " << y.size() << " entries, q has " << params.q.size();
    throw ContractViolation(os.str());
  }
  return {softplus<Scalar>(params.p + params.q.dot(y))};
}

template <typename Scalar = double>
struct StepOutput {
  SsmState<Scalar> state;
  VectorX<Scalar> prediction;
};

namespace detail {

template <typename Scalar>
void check_finite_step(Scalar delta, const VectorX<Scalar>& b, const VectorX<Scalar>& c,
                       const MatrixX<Scalar>& h, const VectorX<Scalar>& out) {
  if (!std::isfinite(static_cast<double>(delta))) throw NumericError("ssm step: step size delta overflowed");
  if (!b.allFinite()) throw NumericError("ssm step: input projection W_B x overflowed");
  if (!c.allFinite()) throw NumericError("ssm step: output selector W_C x overflowed");
  if (!h.allFinite()) throw NumericError("ssm step: hidden state h overflowed");
  if (!out.allFinite()) throw NumericError("ssm step: prediction overflowed");
}

}  // namespace detail

/// Advances h in place with input x and writes the readout into out.
template <typename Scalar, typename Derived>
void advance(const SsmParams<Scalar>& params, MatrixX<Scalar>& h,
             const Eigen::MatrixBase<Derived>& x, VectorX<Scalar>& out) {
  const Scalar delta = discretize(params, x).delta;
  const VectorX<Scalar> b = params.w_b * x;
  const VectorX<Scalar> c = params.w_c * x;
  h.array() = (delta * params.a_diag.array()).exp() * h.array();
  h.noalias() += (delta * x) * b.transpose();
  out.noalias() = h * c;
  if (!out.allFinite()) detail::check_finite_step(delta, b, c, h, out);
}

/// One recurrent step. The returned prediction is the readout of the
/// post-update state selected by the same input, i.e. the estimate of the
/// next observation given everything fed so far.
template <typename Scalar, typename Derived>
StepOutput<Scalar> step(const SsmParams<Scalar>& params, SsmState<Scalar> state,
                        const Eigen::MatrixBase<Derived>& y_t) {
  require(state.h.rows() == params.channels() && state.h.cols() == params.state_size(),
          "step: state shape does not match parameters");
  StepOutput<Scalar> result{std::move(state), VectorX<Scalar>(params.channels())};
  advance(params, result.state.h, y_t, result.prediction);
  return result;
}

/// Literal evaluation of the unrolled sum for the prediction at index t
/// (uses ys columns 0..t-1). Quadratic in t; a test oracle, not a hot path.
template <typename Scalar, typename Derived>
VectorX<Scalar> forward_unrolled(const SsmParams<Scalar>& params,
                                 const Eigen::MatrixBase<Derived>& ys, Eigen::Index t) {
  require(t >= 1, "forward_unrolled: no prediction exists before the first input (t = 0)");
  require(t <= ys.cols(), "forward_unrolled: t exceeds sequence length");
  require(ys.rows() == params.channels(), "forward_unrolled: input width != channels");
  const Eigen::Index d = params.channels();
  const Eigen::Index l = params.state_size();

  std::vector<Scalar> deltas(static_cast<std::size_t>(t));
  for (Eigen::Index i = 0; i < t; ++i) deltas[i] = discretize(params, ys.col(i)).delta;

  const VectorX<Scalar> selector = params.w_c * ys.col(t - 1);
  VectorX<Scalar> out = VectorX<Scalar>::Zero(d);
  for (Eigen::Index i = 0; i < t; ++i) {
    // A_Delta^{t-1-i} = exp((Delta_{t-1} + ... + Delta_{i+1}) A)
    Scalar elapsed(0);
    for (Eigen::Index j = i + 1; j <= t - 1; ++j) elapsed += deltas[j];
    const VectorX<Scalar> b = params.w_b * ys.col(i);
    for (Eigen::Index c = 0; c < d; ++c) {
      Scalar acc(0);
      for (Eigen::Index k = 0; k < l; ++k) {
        using std::exp;
        acc += selector(k) * exp(elapsed * params.a_diag(c, k)) * deltas[i] * b(k);
      }
      out(c) += acc * ys(c, i);
    }
  }
  return out;
}

template <typename Scalar = double>
struct ScanGradients {
  SsmParams<Scalar> params;   // d(loss)/d(parameter), same shapes as the layer
  MatrixX<Scalar> inputs;     // d(loss)/d(x_t), channels x T
};

/// Reverse-mode gradient of sum_t upstream.col(t) . yhat_t where yhat_t is the
/// prediction emitted after feeding xs.col(t). States are checkpointed every
/// ~sqrt(T) steps and recomputed per segment, so peak memory is
/// O(sqrt(T) * d * l + T * (d + l)).
template <typename Scalar, typename D1, typename D2>
ScanGradients<Scalar> backward(const SsmParams<Scalar>& params, const Eigen::MatrixBase<D1>& xs,
                               const Eigen::MatrixBase<D2>& upstream) {
  require(xs.rows() == params.channels(), "backward: input width != channels");
  require(upstream.cols() == xs.cols(),
          "backward: need one upstream gradient per emitted prediction");
  require(upstream.rows() == params.channels(), "backward: upstream width != channels");

  const Eigen::Index d = params.channels();
  const Eigen::Index l = params.state_size();
  const Eigen::Index T = xs.cols();

  ScanGradients<Scalar> g{SsmParams<Scalar>::zeros_like(params), MatrixX<Scalar>::Zero(d, T)};
  if (T == 0) return g;

  // Per-step scalars and projections: O(T (l + d)).
  VectorX<Scalar> delta(T), dsig(T);
  MatrixX<Scalar> bs(l, T), cs(l, T);
  for (Eigen::Index t = 0; t < T; ++t) {
    const Scalar z = params.p + params.q.dot(xs.col(t));
    delta(t) = softplus(z);
    dsig(t) = sigmoid(z);
  }
  bs.noalias() = params.w_b * xs;
  cs.noalias() = params.w_c * xs;

  Eigen::Index seg = 1;
  while (seg * seg < T) ++seg;
  const Eigen::Index n_seg = (T + seg - 1) / seg;

  // checkpoints[s] = state before step s*seg
  std::vector<MatrixX<Scalar>> checkpoints(static_cast<std::size_t>(n_seg));
  MatrixX<Scalar> h = MatrixX<Scalar>::Zero(d, l);
  for (Eigen::Index t = 0; t < T; ++t) {
    if (t % seg == 0) checkpoints[t / seg] = h;
    h.array() = (delta(t) * params.a_diag.array()).exp() * h.array();
    h.noalias() += (delta(t) * xs.col(t)) * bs.col(t).transpose();
  }

  MatrixX<Scalar> gh = MatrixX<Scalar>::Zero(d, l);  // d loss / d h_t carried from the future
  std::vector<MatrixX<Scalar>> states(static_cast<std::size_t>(seg + 1));
  MatrixX<Scalar> decay(d, l);
  VectorX<Scalar> db(l), dc(l);

  for (Eigen::Index s = n_seg - 1; s >= 0; --s) {
    const Eigen::Index t0 = s * seg;
    const Eigen::Index t1 = std::min(T, t0 + seg);
    states[0] = checkpoints[s];
    for (Eigen::Index t = t0; t < t1; ++t) {
      auto& next = states[t - t0 + 1];
      next.array() = (delta(t) * params.a_diag.array()).exp() * states[t - t0].array();
      next.noalias() += (delta(t) * xs.col(t)) * bs.col(t).transpose();
    }
    for (Eigen::Index t = t1 - 1; t >= t0; --t) {
      const MatrixX<Scalar>& h_t = states[t - t0 + 1];
      const MatrixX<Scalar>& h_prev = states[t - t0];
      const auto x = xs.col(t);

      gh.noalias() += upstream.col(t) * cs.col(t).transpose();
      dc.noalias() = h_t.transpose() * upstream.col(t);

      decay.array() = (delta(t) * params.a_diag.array()).exp();
      // dE = gh .* h_prev; contributions through E = exp(delta a)
      const auto dE_times_E = (gh.array() * h_prev.array() * decay.array()).eval();
      Scalar ddelta = (dE_times_E * params.a_diag.array()).sum();
      g.params.a_diag.array() += delta(t) * dE_times_E;

      // contributions through delta * x b^T
      const VectorX<Scalar> gh_b = gh * bs.col(t);
      ddelta += x.dot(gh_b);
      g.inputs.col(t).noalias() += delta(t) * gh_b;
      db.noalias() = delta(t) * (gh.transpose() * x);

      gh.array() *= decay.array();

      const Scalar dz = ddelta * dsig(t);
      g.params.p += dz;
      g.params.q.noalias() += dz * x;
      g.inputs.col(t).noalias() += dz * params.q;

      g.params.w_b.noalias() += db * x.transpose();
      g.params.w_c.noalias() += dc * x.transpose();
      g.inputs.col(t).noalias() += params.w_b.transpose() * db;
      g.inputs.col(t).noalias() += params.w_c.transpose() * dc;
    }
  }
  return g;
}

}  // namespace ssmf
