#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "romoseg/common.hpp"
#include "romoseg/image.hpp"
#include "romoseg/trajectory.hpp"

namespace romoseg {

// Intersection over union of two binary masks; both empty -> 1 (flagged via
// a warning).
double iou(const MaskImage& pred, const MaskImage& gt);

struct SimilarityTransform {
  double scale = 1.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  bool collinear = false;  // rotation about the common line unconstrained

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const {
    return scale * (rotation * p) + translation;
  }
};

struct PoseMetrics {
  double ate = 0.0;    // meters
  double rpe_t = 0.0;  // meters
  double rpe_r = 0.0;  // degrees
  std::size_t associated_poses = 0;
  bool with_scale = false;
};

// Nearest-neighbor timestamp association within 0.02 s.
std::vector<std::pair<std::size_t, std::size_t>> associate(const Trajectory& est,
                                                           const Trajectory& ref);

// Closed-form least-squares alignment (Umeyama); rigid when with_scale is
// false. Needs >= 3 associated, non-coincident positions.
SimilarityTransform align_umeyama(const Trajectory& est, const Trajectory& ref,
                                  bool with_scale);

double ate(const Trajectory& est, const Trajectory& ref, bool with_scale);

// Relative pose error over associated pose pairs Delta steps apart:
// E_i = (ref_i^-1 ref_{i+D})^-1 (est_i^-1 est_{i+D}).
std::pair<double, double> rpe(const Trajectory& est, const Trajectory& ref, int delta);

PoseMetrics evaluate_trajectory(const Trajectory& est, const Trajectory& ref, bool with_scale,
                                int delta);

}  // namespace romoseg
