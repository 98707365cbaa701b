#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <filesystem>
#include <optional>
#include <vector>

#include "romoseg/classifier.hpp"
#include "romoseg/epipolar.hpp"
#include "romoseg/flow.hpp"
#include "romoseg/image.hpp"
#include "romoseg/trajectory.hpp"

namespace romoseg {

enum class CameraPath { kLine, kArc, kRotationOnly };

// A textured quad moving rigidly; centers are per-frame keyframes.
struct ObjectSpec {
  double half_size = 1.0;
  std::vector<Eigen::Vector3d> centers;
  double yaw_rate_deg = 0.0;  // in-plane spin per frame
};

// The static world is the inside of a sphere, which every pixel ray of every
// camera intersects exactly once and which induces smooth, exactly
// ray-castable flow with strong depth variation.
struct SceneSpec {
  int frames = 10;
  int width = 160;
  int height = 120;
  double focal = 140.0;
  CameraPath path = CameraPath::kLine;
  double path_extent = 1.2;     // line length / arc angle (rad) / yaw sweep (rad)
  double path_height = 0.0;     // vertical drift over the path
  Eigen::Vector3d sphere_center = {0.0, 0.0, 4.0};
  double sphere_radius = 20.0;
  std::vector<ObjectSpec> objects;
  int feature_stride = 4;
  int feature_channels = 16;
  double cluster_separation = 4.0;
  double feature_noise = 0.5;
  double flow_noise = 0.0;
};

SceneSpec parse_scene_spec(const std::string& json_text, const std::string& origin);
std::string scene_spec_to_json(const SceneSpec& spec);

struct SyntheticScene {
  SceneSpec spec;
  Eigen::Matrix3d intrinsics = Eigen::Matrix3d::Identity();
  std::vector<Eigen::Matrix3d> rotations;     // world -> camera
  std::vector<Eigen::Vector3d> translations;  // world -> camera
  bool degenerate = false;                    // zero-baseline (rotation-only) path

  Eigen::Vector3d camera_center(int t) const {
    return -rotations[t].transpose() * translations[t];
  }
};

struct SceneTruth {
  std::vector<FlowField> flow_fwd;   // index t: frame t -> t+1
  std::vector<FlowField> flow_bwd;   // index t: frame t+1 -> t
  std::vector<FeatureMap> features;  // per frame
  std::vector<MaskImage> masks;      // per frame, dynamic pixels
  Trajectory trajectory;             // camera-to-world, TUM convention
  std::vector<std::optional<FundamentalMatrix>> gt_f;  // pair (t, t+1), source t
};

std::pair<SyntheticScene, SceneTruth> generate(const SceneSpec& spec, std::uint64_t seed);

// Writes the data_io formats: flow_fwd_/flow_bwd_/feat_ tensors plus
// gt/mask_%06d.pgm, gt/traj.txt and a scene manifest.
void export_scene(const SyntheticScene& scene, const SceneTruth& truth,
                  const std::filesystem::path& dir);

// Exact double-precision projections for the solver oracles; points are
// sampled on the static sphere (or on object quads) and projected into both
// frames without any pixel quantization.
std::vector<PointPair> exact_static_pairs(const SyntheticScene& scene, int t, int t_prime,
                                          int count, std::uint64_t seed);
std::vector<PointPair> exact_dynamic_pairs(const SyntheticScene& scene, int t, int t_prime,
                                           int count, std::uint64_t seed);

// Ground-truth fundamental matrix of an arbitrary frame pair (source t);
// nullopt when the baseline vanishes.
std::optional<FundamentalMatrix> ground_truth_f(const SyntheticScene& scene, int t,
                                                int t_prime);

}  // namespace romoseg
