#include "romoseg/metrics.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace romoseg {

namespace {

constexpr double kAssocTolerance = 0.02;  // seconds

struct RelPose {
  Eigen::Quaterniond rotation;
  Eigen::Vector3d translation;
};

// a^-1 * b for world-from-camera poses.
RelPose relative(const TimedPose& a, const TimedPose& b) {
  const Eigen::Quaterniond inv = a.rotation.conjugate();
  return {inv * b.rotation, inv * (b.translation - a.translation)};
}

// a^-1 * b for relative poses.
RelPose relative(const RelPose& a, const RelPose& b) {
  const Eigen::Quaterniond inv = a.rotation.conjugate();
  return {inv * b.rotation, inv * (b.translation - a.translation)};
}

double rotation_angle_deg(const Eigen::Quaterniond& q) {
  // atan2 form: exact zero for an exactly-identity quaternion.
  const double vec = q.vec().norm();
  const double angle = 2.0 * std::atan2(vec, std::abs(q.w()));
  return angle * 180.0 / M_PI;
}

double rmse(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  std::vector<double> squares(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) squares[i] = values[i] * values[i];
  return std::sqrt(pairwise_sum(squares) / static_cast<double>(values.size()));
}

}  // namespace

double iou(const MaskImage& pred, const MaskImage& gt) {
  if (pred.width != gt.width || pred.height != gt.height)
    throw ContractError("iou: mask dimensions differ");
  std::size_t intersection = 0;
  std::size_t unioned = 0;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    const bool p = pred.values[i] != 0;
    const bool g = gt.values[i] != 0;
    intersection += (p && g);
    unioned += (p || g);
  }
  if (unioned == 0) {
    log_warn("iou: both masks empty, returning 1 by convention");
    return 1.0;
  }
  return static_cast<double>(intersection) / static_cast<double>(unioned);
}

std::vector<std::pair<std::size_t, std::size_t>> associate(const Trajectory& est,
                                                           const Trajectory& ref) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::size_t j = 0;
  for (std::size_t i = 0; i < est.poses.size(); ++i) {
    const double t = est.poses[i].timestamp;
    while (j + 1 < ref.poses.size() &&
           std::abs(ref.poses[j + 1].timestamp - t) <= std::abs(ref.poses[j].timestamp - t))
      ++j;
    if (j < ref.poses.size() && std::abs(ref.poses[j].timestamp - t) <= kAssocTolerance) {
      // One-to-one: a ref pose pairs with at most one estimate.
      if (pairs.empty() || pairs.back().second != j) pairs.emplace_back(i, j);
    }
  }
  return pairs;
}

SimilarityTransform align_umeyama(const Trajectory& est, const Trajectory& ref,
                                  bool with_scale) {
  const auto pairs = associate(est, ref);
  if (pairs.size() < 3)
    throw InsufficientDataError("align_umeyama: need >= 3 associated poses, got " +
                                std::to_string(pairs.size()));

  const auto n = static_cast<double>(pairs.size());
  Eigen::Vector3d mean_est = Eigen::Vector3d::Zero();
  Eigen::Vector3d mean_ref = Eigen::Vector3d::Zero();
  for (const auto& [i, j] : pairs) {
    mean_est += est.poses[i].translation;
    mean_ref += ref.poses[j].translation;
  }
  mean_est /= n;
  mean_ref /= n;

  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  double var_est = 0.0;
  for (const auto& [i, j] : pairs) {
    const Eigen::Vector3d de = est.poses[i].translation - mean_est;
    const Eigen::Vector3d dr = ref.poses[j].translation - mean_ref;
    cov += dr * de.transpose();
    var_est += de.squaredNorm();
  }
  cov /= n;
  var_est /= n;

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d d = svd.singularValues();

  Eigen::Vector3d s = Eigen::Vector3d::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0) s(2) = -1.0;

  SimilarityTransform transform;
  transform.collinear = d(1) < 1e-9 * std::max(d(0), 1e-300);
  if (transform.collinear)
    log_warn("align_umeyama: collinear positions, rotation about the line unconstrained");
  transform.rotation = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
  if (with_scale) {
    if (var_est <= 0)
      throw ContractError("align_umeyama: zero-variance estimate cannot be scaled");
    transform.scale = d.dot(s) / var_est;
  }
  transform.translation = mean_ref - transform.scale * (transform.rotation * mean_est);

  // The SVD solution carries rounding dust; if the untransformed points
  // already fit better (identical trajectories), identity is the optimum.
  double res_solution = 0.0;
  double res_identity = 0.0;
  for (const auto& [i, j] : pairs) {
    res_solution +=
        (transform.apply(est.poses[i].translation) - ref.poses[j].translation).squaredNorm();
    res_identity += (est.poses[i].translation - ref.poses[j].translation).squaredNorm();
  }
  if (res_identity <= res_solution) return SimilarityTransform{};
  return transform;
}

double ate(const Trajectory& est, const Trajectory& ref, bool with_scale) {
  const SimilarityTransform transform = align_umeyama(est, ref, with_scale);
  const auto pairs = associate(est, ref);
  std::vector<double> errors;
  errors.reserve(pairs.size());
  for (const auto& [i, j] : pairs)
    errors.push_back(
        (transform.apply(est.poses[i].translation) - ref.poses[j].translation).norm());
  return rmse(errors);
}

std::pair<double, double> rpe(const Trajectory& est, const Trajectory& ref, int delta) {
  if (delta < 1) throw ContractError("rpe: delta must be >= 1");
  const auto pairs = associate(est, ref);
  if (pairs.size() < static_cast<std::size_t>(delta) + 1)
    throw ContractError("rpe: need >= delta+1 associated poses, got " +
                        std::to_string(pairs.size()));

  std::vector<double> trans_errors;
  std::vector<double> rot_errors;
  for (std::size_t k = 0; k + delta < pairs.size(); ++k) {
    const auto& [i0, j0] = pairs[k];
    const auto& [i1, j1] = pairs[k + delta];
    const RelPose rel_ref = relative(ref.poses[j0], ref.poses[j1]);
    const RelPose rel_est = relative(est.poses[i0], est.poses[i1]);
    const RelPose error = relative(rel_ref, rel_est);
    trans_errors.push_back(error.translation.norm());
    rot_errors.push_back(rotation_angle_deg(error.rotation));
  }
  return {rmse(trans_errors), rmse(rot_errors)};
}

PoseMetrics evaluate_trajectory(const Trajectory& est, const Trajectory& ref, bool with_scale,
                                int delta) {
  PoseMetrics metrics;
  metrics.with_scale = with_scale;
  metrics.associated_poses = associate(est, ref).size();
  metrics.ate = ate(est, ref, with_scale);
  std::tie(metrics.rpe_t, metrics.rpe_r) = rpe(est, ref, delta);
  return metrics;
}

}  // namespace romoseg
