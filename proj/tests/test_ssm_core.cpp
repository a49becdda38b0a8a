#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "ssmf/ssm_core.hpp"
#include "test_util.hpp"

using namespace ssmf;
using testutil::rel_err;

namespace {

SsmParams<double> scalar_layer() {
  SsmParams<double> p(1, 1);
  p.a_diag(0, 0) = -1.0;
  p.w_b(0, 0) = 1.0;
  p.w_c(0, 0) = 1.0;
  p.p = 0.0;
  p.q(0) = 0.0;
  return p;
}

Eigen::MatrixXd run_steps(const SsmParams<double>& params, const Eigen::MatrixXd& ys) {
  Eigen::MatrixXd out(params.channels(), ys.cols());
  SsmState<double> s = SsmState<double>::zeros(params);
  for (Eigen::Index t = 0; t < ys.cols(); ++t) {
    auto r = step(params, std::move(s), ys.col(t));
    s = std::move(r.state);
    out.col(t) = r.prediction;
  }
  return out;
}

double weighted_output(const SsmParams<double>& params, const Eigen::MatrixXd& ys, const Eigen::MatrixXd& up) {
  return run_steps(params, ys).cwiseProduct(up).sum();
}

}  // namespace

TEST_CASE("discretize examples") {
  SsmParams<double> p(3, 2);
  Eigen::Vector3d y(0.3, -2.0, 7.0);
  CHECK(discretize(p, y).delta == doctest::Approx(0.6931471805599453).epsilon(1e-15));

  p.p = -40.0;
  const double tiny = discretize(p, y).delta;
  CHECK(tiny > 0.0);
  CHECK(std::abs(tiny - std::exp(-40.0)) <= 1e-10 * std::exp(-40.0));

  p.p = 1.0;
  p.q << 1.0, 0.0, 0.0;
  CHECK(discretize(p, Eigen::Vector3d(1, 0, 0)).delta == doctest::Approx(2.1269280110429727).epsilon(1e-14));

  CHECK_THROWS_AS(discretize(p, Eigen::Vector2d(1, 0)), ContractViolation);
}

TEST_CASE("softplus is finite and positive across the stable range") {
  for (double x : {-1000.0, -700.0, -40.0, 0.0, 40.0, 700.0, 1000.0}) {
    const double v = softplus(x);
    CHECK(std::isfinite(v));
    CHECK((v > 0.0 || x <= -745.0));
    if (x >= 40.0) CHECK(v == doctest::Approx(x).epsilon(1e-15));
  }
}

TEST_CASE("validate rejects non-negative eigenvalues and bad shapes") {
  std::mt19937_64 rng(1);
  auto p = testutil::random_params(rng, 3, 4);
  CHECK_NOTHROW(validate(p));
  p.a_diag(1, 2) = 0.0;
  CHECK_THROWS_AS(validate(p), ContractViolation);
  p = testutil::random_params(rng, 3, 4);
  p.w_b.resize(4, 2);
  CHECK_THROWS_AS(validate(p), ContractViolation);
}

TEST_CASE("zero state with zero input stays zero") {
  std::mt19937_64 rng(2);
  auto p = testutil::random_params(rng, 4, 3);
  auto r = step(p, SsmState<double>::zeros(p), Eigen::VectorXd::Zero(4));
  CHECK(r.prediction.isZero(0.0));
  CHECK(r.state.h.isZero(0.0));
}

TEST_CASE("scalar layer first prediction is ln 2") {
  const auto p = scalar_layer();
  Eigen::MatrixXd ys(1, 1);
  ys << 1.0;
  // yhat_1 = (W_C y0) * Delta_0 * (W_B y0) * y0 with Delta_0 = softplus(0)
  const double oracle = 1.0 * std::log(2.0) * 1.0 * 1.0;
  auto r = step(p, SsmState<double>::zeros(p), ys.col(0));
  CHECK(r.prediction(0) == doctest::Approx(oracle).epsilon(1e-15));
  CHECK(forward_unrolled(p, ys, 1)(0) == doctest::Approx(oracle).epsilon(1e-15));
}

TEST_CASE("forward_unrolled contract and zero sequence") {
  std::mt19937_64 rng(3);
  auto p = testutil::random_params(rng, 2, 3);
  Eigen::MatrixXd zeros = Eigen::MatrixXd::Zero(2, 6);
  for (Eigen::Index t = 1; t <= 6; ++t) CHECK(forward_unrolled(p, zeros, t).isZero(0.0));
  CHECK_THROWS_AS(forward_unrolled(p, zeros, 0), ContractViolation);
  CHECK_THROWS_AS(forward_unrolled(p, zeros, 7), ContractViolation);
}

TEST_CASE("recurrent steps match the unrolled sum") {
  for (int seed = 0; seed < 30; ++seed) {
    std::mt19937_64 rng(100 + seed);
    const Eigen::Index d = 1 + seed % 4, l = 1 + (seed * 7) % 5;
    const Eigen::Index T = seed == 0 ? 8 : 1 + (seed * 13) % 64;
    auto p = testutil::random_params(rng, d, l);
    Eigen::MatrixXd ys = testutil::gaussian(rng, d, T);
    Eigen::MatrixXd rec = run_steps(p, ys);
    for (Eigen::Index t = 1; t <= T; ++t) {
      CHECK(rel_err(rec.col(t - 1), forward_unrolled(p, ys, t)) <= 1e-10);
    }
  }
}

TEST_CASE("all-zero input keeps every state and prediction at zero") {
  std::mt19937_64 rng(4);
  auto p = testutil::random_params(rng, 3, 5);
  SsmState<double> s = SsmState<double>::zeros(p);
  for (int t = 0; t < 20; ++t) {
    auto r = step(p, std::move(s), Eigen::VectorXd::Zero(3));
    CHECK(r.prediction.isZero(0.0));
    CHECK(r.state.h.isZero(0.0));
    s = std::move(r.state);
  }
}

TEST_CASE("per-step transition norm never exceeds alpha for bounded inputs") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto p = testutil::random_params(rng, 3, 4);
    const double y_bar = 2.0;
    const double alpha = std::pow(std::exp(p.a_diag.maxCoeff()), softplus(p.p - p.q.norm() * y_bar));
    CHECK(alpha < 1.0);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int k = 0; k < 200; ++k) {
      Eigen::Vector3d y(u(rng), u(rng), u(rng));
      y *= y_bar * std::abs(u(rng)) / y.norm();
      const double delta = discretize(p, y).delta;
      // diagonal transition: spectral norm is the largest entry
      const double norm = (delta * p.a_diag.array()).exp().maxCoeff();
      CHECK(norm <= alpha * (1.0 + 1e-12));
    }
  }
}

TEST_CASE("step names the overflowing block") {
  auto p = scalar_layer();
  p.w_b(0, 0) = 1e200;
  p.w_c(0, 0) = 1e200;
  Eigen::VectorXd y = Eigen::VectorXd::Constant(1, 1e200);
  try {
    (void)step(p, SsmState<double>::zeros(p), y);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("overflow") != std::string::npos);
  }
}

TEST_CASE("backward: zero upstream gives zero gradient") {
  std::mt19937_64 rng(6);
  auto p = testutil::random_params(rng, 3, 4);
  Eigen::MatrixXd ys = testutil::gaussian(rng, 3, 10);
  auto g = backward(p, ys, Eigen::MatrixXd::Zero(3, 10));
  CHECK(g.params.a_diag.isZero(0.0));
  CHECK(g.params.w_b.isZero(0.0));
  CHECK(g.params.w_c.isZero(0.0));
  CHECK(g.params.p == 0.0);
  CHECK(g.params.q.isZero(0.0));
  CHECK(g.inputs.isZero(0.0));
}

TEST_CASE("backward: scalar W_B gradient is ln 2") {
  const auto p = scalar_layer();
  Eigen::MatrixXd ys(1, 1);
  ys << 1.0;
  auto g = backward(p, ys, Eigen::MatrixXd::Ones(1, 1));
  // d/dW_B of Delta_0 * W_B * y0^2 * (W_C y0)  =  Delta_0 * y0^3
  CHECK(g.params.w_b(0, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("backward: length mismatch is a contract violation") {
  std::mt19937_64 rng(7);
  auto p = testutil::random_params(rng, 2, 2);
  CHECK_THROWS_AS(backward(p, Eigen::MatrixXd::Zero(2, 5), Eigen::MatrixXd::Zero(2, 4)), ContractViolation);
}

TEST_CASE("backward matches central differences on every block") {
  constexpr double h = 1e-5;
  for (int seed = 0; seed < 6; ++seed) {
    std::mt19937_64 rng(200 + seed);
    const Eigen::Index d = 2 + seed % 3, l = 2 + seed % 4, T = 5 + 7 * seed;
    auto p = testutil::random_params(rng, d, l);
    Eigen::MatrixXd ys = testutil::gaussian(rng, d, T);
    Eigen::MatrixXd up = testutil::gaussian(rng, d, T);
    auto g = backward(p, ys, up);

    auto check_block = [&](Eigen::MatrixXd& block, const Eigen::MatrixXd& grad) {
      for (Eigen::Index i = 0; i < block.size(); ++i) {
        const double keep = block.data()[i];
        block.data()[i] = keep + h;
        const double fp = weighted_output(p, ys, up);
        block.data()[i] = keep - h;
        const double fm = weighted_output(p, ys, up);
        block.data()[i] = keep;
        CHECK(testutil::close_coord(grad.data()[i], (fp - fm) / (2 * h), 1e-4, 1e-8));
      }
    };
    check_block(p.a_diag, g.params.a_diag);
    check_block(p.w_b, g.params.w_b);
    check_block(p.w_c, g.params.w_c);
    for (Eigen::Index i = 0; i < p.q.size(); ++i) {
      const double keep = p.q(i);
      p.q(i) = keep + h;
      const double fp = weighted_output(p, ys, up);
      p.q(i) = keep - h;
      const double fm = weighted_output(p, ys, up);
      p.q(i) = keep;
      CHECK(testutil::close_coord(g.params.q(i), (fp - fm) / (2 * h), 1e-4, 1e-8));
    }
    const double keep = p.p;
    p.p = keep + h;
    const double fp = weighted_output(p, ys, up);
    p.p = keep - h;
    const double fm = weighted_output(p, ys, up);
    p.p = keep;
    CHECK(testutil::close_coord(g.params.p, (fp - fm) / (2 * h), 1e-4, 1e-8));
    check_block(ys, g.inputs);
  }
}

TEST_CASE("float instantiation runs") {
  SsmParams<float> p(2, 3);
  p.w_b.setConstant(0.5f);
  p.w_c.setConstant(0.5f);
  Eigen::VectorXf y(2);
  y << 1.0f, -1.0f;
  auto r = step(p, SsmState<float>::zeros(p), y);
  CHECK(r.prediction.allFinite());
}
