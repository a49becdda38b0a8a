#pragma once

// Textbook Kalman filter used as the model-based reference, plus the naive
// last-value predictor.
//
// KalmanState holds the one-step prior (x_{t|t-1}, P_{t|t-1}). Each call
// absorbs y_t (measurement update, Joseph form) and then propagates, so
// after the call the state is the prior for t+1 and the returned prediction
// is C x_{t+1|t}.

#include <Eigen/Dense>

#include <utility>

#include "ssmf/errors.hpp"
#include "ssmf/ssm_core.hpp"
#include "ssmf/systems.hpp"

namespace ssmf {

template <typename Scalar = double>
struct KalmanState {
  VectorX<Scalar> x_hat;
  MatrixX<Scalar> p_cov;

  /// x = 0 (matches the zero initial condition), P = I.
  static KalmanState initial(Eigen::Index n) {
    return {VectorX<Scalar>::Zero(n), MatrixX<Scalar>::Identity(n, n)};
  }
};

template <typename Scalar>
struct KalmanModel {
  MatrixX<Scalar> a;
  MatrixX<Scalar> c;
  MatrixX<Scalar> q;
  MatrixX<Scalar> r;

  static KalmanModel from(const LinearSystem& sys) {
    const auto n = sys.n(), m = sys.m();
    return {sys.a_mat.template cast<Scalar>(), sys.c_mat.template cast<Scalar>(),
            Scalar(sys.sigma_w2) * MatrixX<Scalar>::Identity(n, n),
            Scalar(sys.sigma_v2) * MatrixX<Scalar>::Identity(m, m)};
  }
};

template <typename Scalar, typename Derived>
std::pair<KalmanState<Scalar>, VectorX<Scalar>> kf_predict_next_output(KalmanState<Scalar> state,
                                                                       const KalmanModel<Scalar>& model,
                                                                       const Eigen::MatrixBase<Derived>& y) {
  const auto& a = model.a;
  const auto& c = model.c;
  const Eigen::Index n = a.rows();
  require(state.x_hat.size() == n && state.p_cov.rows() == n, "kalman: state dimension mismatch");
  require(y.size() == c.rows(), "kalman: observation dimension mismatch");

  const MatrixX<Scalar> pct = state.p_cov * c.transpose();
  MatrixX<Scalar> s = c * pct + model.r;
  s = Scalar(0.5) * (s + s.transpose());
  Eigen::LLT<MatrixX<Scalar>> llt(s);
  if (llt.info() != Eigen::Success) {
    throw NumericError("kalman: innovation covariance is not positive definite");
  }
  // K = P C^T S^{-1}  <=>  K^T = S^{-1} C P
  const MatrixX<Scalar> gain = llt.solve(pct.transpose()).transpose();
  state.x_hat += gain * (y - c * state.x_hat);
  const MatrixX<Scalar> ikc = MatrixX<Scalar>::Identity(n, n) - gain * c;
  MatrixX<Scalar> p = ikc * state.p_cov * ikc.transpose() + gain * model.r * gain.transpose();

  state.x_hat = a * state.x_hat;
  p = a * p * a.transpose() + model.q;
  state.p_cov = Scalar(0.5) * (p + p.transpose());
  VectorX<Scalar> y_pred = c * state.x_hat;
  return {std::move(state), std::move(y_pred)};
}

template <typename Derived>
std::pair<KalmanState<double>, Eigen::VectorXd> kf_predict_next_output(KalmanState<double> state,
                                                                       const LinearSystem& sys,
                                                                       const Eigen::MatrixBase<Derived>& y) {
  return kf_predict_next_output(std::move(state), KalmanModel<double>::from(sys), y);
}

/// Runs the filter over ys (m x T); column t predicts y_{t+1}.
Eigen::MatrixXd kf_filter(const KalmanModel<double>& model, const Eigen::Ref<const Eigen::MatrixXd>& ys);
Eigen::MatrixXd kf_filter(const LinearSystem& sys, const Eigen::Ref<const Eigen::MatrixXd>& ys);

/// Filter built from sys1 and kept for the whole trajectory.
Eigen::MatrixXd kf_mismatched_switching(const SwitchingSystem& sw, const Eigen::Ref<const Eigen::MatrixXd>& ys);

/// White-noise filter with Q = sigma_eta2 I, R = sigma_nu2 I applied to
/// colored-noise data.
Eigen::MatrixXd kf_mismatched_colored(const LinearSystem& sys, const NoiseModel& noise,
                                      const Eigen::Ref<const Eigen::MatrixXd>& ys);

/// yhat_{t+1} = y_t.
Eigen::MatrixXd naive_predictor(const Eigen::Ref<const Eigen::MatrixXd>& ys);

}  // namespace ssmf
