#include "ssmf/kalman.hpp"

namespace ssmf {

Eigen::MatrixXd kf_filter(const KalmanModel<double>& model, const Eigen::Ref<const Eigen::MatrixXd>& ys) {
  auto state = KalmanState<double>::initial(model.a.rows());
  Eigen::MatrixXd preds(model.c.rows(), ys.cols());
  for (Eigen::Index t = 0; t < ys.cols(); ++t) {
    auto [next, pred] = kf_predict_next_output(std::move(state), model, ys.col(t));
    state = std::move(next);
    preds.col(t) = pred;
  }
  return preds;
}

Eigen::MatrixXd kf_filter(const LinearSystem& sys, const Eigen::Ref<const Eigen::MatrixXd>& ys) {
  return kf_filter(KalmanModel<double>::from(sys), ys);
}

Eigen::MatrixXd kf_mismatched_switching(const SwitchingSystem& sw, const Eigen::Ref<const Eigen::MatrixXd>& ys) {
  return kf_filter(sw.sys1, ys);
}

Eigen::MatrixXd kf_mismatched_colored(const LinearSystem& sys, const NoiseModel& noise,
                                      const Eigen::Ref<const Eigen::MatrixXd>& ys) {
  auto model = KalmanModel<double>::from(sys);
  model.q = noise.sigma_eta2 * Eigen::MatrixXd::Identity(sys.n(), sys.n());
  model.r = noise.sigma_nu2 * Eigen::MatrixXd::Identity(sys.m(), sys.m());
  return kf_filter(model, ys);
}

Eigen::MatrixXd naive_predictor(const Eigen::Ref<const Eigen::MatrixXd>& ys) {
  require(ys.cols() >= 1, "naive_predictor: need at least one observation");
  return ys;
}

}  // namespace ssmf
