#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <filesystem>
#include <vector>

#include "romoseg/common.hpp"

namespace romoseg {

struct TimedPose {
  double timestamp = 0.0;
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
};

// Timestamped camera poses, ordered by strictly increasing timestamp.
struct Trajectory {
  std::vector<TimedPose> poses;

  std::size_t size() const { return poses.size(); }
};

// TUM RGB-D format: "timestamp tx ty tz qx qy qz qw" per line, '#' comments.
// Quaternions are renormalized on read; a deviation beyond 1e-6 warns.
Trajectory read_trajectory(const std::filesystem::path& path);
void write_trajectory(const Trajectory& traj, const std::filesystem::path& path);

}  // namespace romoseg
