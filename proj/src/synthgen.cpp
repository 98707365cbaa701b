#include "romoseg/synthgen.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "romoseg/tensor.hpp"

namespace romoseg {

using nlohmann::json;

namespace {

struct Ray {
  Eigen::Vector3d origin;
  Eigen::Vector3d dir;  // not normalized; s is measured along it
};

struct Hit {
  double s = std::numeric_limits<double>::infinity();
  int object = -1;  // -1: static sphere
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
};

Eigen::Matrix3d yaw_rotation(double rad) {
  Eigen::Matrix3d r;
  r << std::cos(rad), -std::sin(rad), 0.0, std::sin(rad), std::cos(rad), 0.0, 0.0, 0.0, 1.0;
  return r;
}

// Object pose (local -> world) at a frame.
struct ObjectPose {
  Eigen::Matrix3d rotation;
  Eigen::Vector3d center;
};

ObjectPose object_pose(const ObjectSpec& obj, int t) {
  return {yaw_rotation(obj.yaw_rate_deg * M_PI / 180.0 * t), obj.centers[t]};
}

Ray pixel_ray(const SyntheticScene& scene, int t, double px, double py) {
  const Eigen::Matrix3d r_cw = scene.rotations[t].transpose();
  const Eigen::Vector3d dir_cam((px - scene.intrinsics(0, 2)) / scene.intrinsics(0, 0),
                                (py - scene.intrinsics(1, 2)) / scene.intrinsics(1, 1), 1.0);
  return {scene.camera_center(t), r_cw * dir_cam};
}

// Single positive root; camera centers stay strictly inside the sphere.
double intersect_sphere(const SceneSpec& spec, const Ray& ray) {
  const Eigen::Vector3d oc = ray.origin - spec.sphere_center;
  const double a = ray.dir.squaredNorm();
  const double b = 2.0 * oc.dot(ray.dir);
  const double c = oc.squaredNorm() - spec.sphere_radius * spec.sphere_radius;
  const double disc = b * b - 4.0 * a * c;
  // c < 0 inside the sphere, so disc > 0 and exactly one root is positive.
  const double sq = std::sqrt(disc);
  return (-b + sq) / (2.0 * a);
}

std::optional<double> intersect_quad(const ObjectSpec& obj, const ObjectPose& pose,
                                     const Ray& ray) {
  const Eigen::Vector3d u = pose.rotation.col(0);
  const Eigen::Vector3d v = pose.rotation.col(1);
  const Eigen::Vector3d n = pose.rotation.col(2);
  const double denom = ray.dir.dot(n);
  if (std::abs(denom) < 1e-12) return std::nullopt;
  const double s = (pose.center - ray.origin).dot(n) / denom;
  if (s <= 1e-9) return std::nullopt;
  const Eigen::Vector3d p = ray.origin + s * ray.dir - pose.center;
  if (std::abs(p.dot(u)) > obj.half_size || std::abs(p.dot(v)) > obj.half_size)
    return std::nullopt;
  return s;
}

Hit cast(const SyntheticScene& scene, int t, const Ray& ray) {
  Hit hit;
  hit.s = intersect_sphere(scene.spec, ray);
  for (std::size_t o = 0; o < scene.spec.objects.size(); ++o) {
    const ObjectSpec& obj = scene.spec.objects[o];
    const auto s = intersect_quad(obj, object_pose(obj, t), ray);
    if (s.has_value() && *s < hit.s) {
      hit.s = *s;
      hit.object = static_cast<int>(o);
    }
  }
  hit.point = ray.origin + hit.s * ray.dir;
  return hit;
}

Eigen::Vector2d project(const SyntheticScene& scene, int t, const Eigen::Vector3d& world) {
  const Eigen::Vector3d cam = scene.rotations[t] * world + scene.translations[t];
  if (cam.z() <= 1e-9) throw PipelineError("synthgen: point behind camera");
  return {scene.intrinsics(0, 0) * cam.x() / cam.z() + scene.intrinsics(0, 2),
          scene.intrinsics(1, 1) * cam.y() / cam.z() + scene.intrinsics(1, 2)};
}

// World point seen at (t, pixel) carried to its position at frame t_prime
// (identity for static geometry, rigid object motion otherwise).
Eigen::Vector3d advect(const SyntheticScene& scene, const Hit& hit, int t, int t_prime) {
  if (hit.object < 0) return hit.point;
  const ObjectSpec& obj = scene.spec.objects[static_cast<std::size_t>(hit.object)];
  const ObjectPose from = object_pose(obj, t);
  const ObjectPose to = object_pose(obj, t_prime);
  return to.rotation * (from.rotation.transpose() * (hit.point - from.center)) + to.center;
}

FlowField render_flow(const SyntheticScene& scene, int t, int t_prime, Rng* noise_rng) {
  const SceneSpec& spec = scene.spec;
  FlowField flow = make_flow(spec.width, spec.height);
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      const Hit hit = cast(scene, t, pixel_ray(scene, t, x, y));
      const Eigen::Vector3d moved = advect(scene, hit, t, t_prime);
      const Eigen::Vector2d target = project(scene, t_prime, moved);
      double dx = target.x() - x;
      double dy = target.y() - y;
      if (noise_rng != nullptr && spec.flow_noise > 0.0) {
        dx += spec.flow_noise * noise_rng->gaussian();
        dy += spec.flow_noise * noise_rng->gaussian();
      }
      flow.set(x, y, static_cast<float>(dx), static_cast<float>(dy));
    }
  }
  return flow;
}

MaskImage render_mask(const SyntheticScene& scene, int t, std::vector<std::int8_t>* classes) {
  const SceneSpec& spec = scene.spec;
  MaskImage mask = make_mask(spec.width, spec.height);
  if (classes != nullptr)
    classes->assign(static_cast<std::size_t>(spec.width) * spec.height, -1);
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      const Hit hit = cast(scene, t, pixel_ray(scene, t, x, y));
      if (hit.object >= 0) mask.set(x, y, true);
      if (classes != nullptr)
        (*classes)[static_cast<std::size_t>(y) * spec.width + x] =
            static_cast<std::int8_t>(hit.object);
    }
  }
  return mask;
}

FeatureMap render_features(const SyntheticScene& scene, const std::vector<std::int8_t>& classes,
                           const std::vector<Eigen::VectorXd>& cluster_means, Rng& rng) {
  const SceneSpec& spec = scene.spec;
  FeatureMap f;
  f.hf = spec.height / spec.feature_stride;
  f.wf = spec.width / spec.feature_stride;
  f.channels = spec.feature_channels;
  f.values.assign(f.cells() * static_cast<std::size_t>(f.channels), 0.0f);

  // Majority object id per cell (static counts as id -1).
  const int n_classes = static_cast<int>(spec.objects.size()) + 1;
  std::vector<int> votes(f.cells() * static_cast<std::size_t>(n_classes), 0);
  for (int y = 0; y < spec.height; ++y) {
    const int cy = grid_cell(y, spec.height, f.hf);
    for (int x = 0; x < spec.width; ++x) {
      const int cx = grid_cell(x, spec.width, f.wf);
      const int cls = classes[static_cast<std::size_t>(y) * spec.width + x] + 1;
      ++votes[(static_cast<std::size_t>(cy) * f.wf + cx) * n_classes + cls];
    }
  }
  for (std::size_t cell = 0; cell < f.cells(); ++cell) {
    int best_class = 0;
    for (int c = 1; c < n_classes; ++c)
      if (votes[cell * n_classes + c] > votes[cell * n_classes + best_class]) best_class = c;
    const Eigen::VectorXd& mean = cluster_means[static_cast<std::size_t>(best_class)];
    for (int c = 0; c < f.channels; ++c)
      f.values[cell * static_cast<std::size_t>(f.channels) + c] =
          static_cast<float>(mean(c) + spec.feature_noise * rng.gaussian());
  }
  return f;
}

void build_cameras(SyntheticScene& scene) {
  const SceneSpec& spec = scene.spec;
  const double denom = spec.frames > 1 ? static_cast<double>(spec.frames - 1) : 1.0;
  for (int t = 0; t < spec.frames; ++t) {
    const double a = t / denom;
    Eigen::Matrix3d r_cw = Eigen::Matrix3d::Identity();
    Eigen::Vector3d center = Eigen::Vector3d::Zero();
    switch (spec.path) {
      case CameraPath::kLine:
        center = Eigen::Vector3d(-spec.path_extent / 2.0 + a * spec.path_extent,
                                 a * spec.path_height, 0.0);
        break;
      case CameraPath::kArc: {
        const double angle = (a - 0.5) * spec.path_extent;
        const double radius = spec.sphere_center.z() * 0.5;
        center = Eigen::Vector3d(radius * std::sin(angle), a * spec.path_height,
                                 radius * (1.0 - std::cos(angle)));
        r_cw = Eigen::AngleAxisd(angle, Eigen::Vector3d::UnitY()).toRotationMatrix();
        break;
      }
      case CameraPath::kRotationOnly:
        r_cw = Eigen::AngleAxisd((a - 0.5) * spec.path_extent, Eigen::Vector3d::UnitY())
                   .toRotationMatrix();
        break;
    }
    scene.rotations.push_back(r_cw.transpose());
    scene.translations.push_back(-r_cw.transpose() * center);
  }
  scene.degenerate = spec.path == CameraPath::kRotationOnly;

  // Feasibility: cameras must stay strictly inside the static sphere.
  for (int t = 0; t < spec.frames; ++t) {
    if ((scene.camera_center(t) - spec.sphere_center).norm() >= spec.sphere_radius * 0.95)
      throw PipelineError("synthgen: camera path leaves the static sphere");
  }
}

}  // namespace

SceneSpec parse_scene_spec(const std::string& json_text, const std::string& origin) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw FormatError(origin + ": invalid JSON: " + e.what());
  }
  SceneSpec spec;
  try {
    spec.frames = root.value("frames", spec.frames);
    spec.width = root.value("width", spec.width);
    spec.height = root.value("height", spec.height);
    spec.focal = root.value("focal", spec.focal);
    const std::string path = root.value("path", std::string("line"));
    if (path == "line") spec.path = CameraPath::kLine;
    else if (path == "arc") spec.path = CameraPath::kArc;
    else if (path == "rotation_only") spec.path = CameraPath::kRotationOnly;
    else throw FormatError(origin + ": unknown camera path '" + path + "'");
    spec.path_extent = root.value("path_extent", spec.path_extent);
    spec.path_height = root.value("path_height", spec.path_height);
    if (root.contains("sphere_center")) {
      const auto c = root.at("sphere_center").get<std::vector<double>>();
      if (c.size() != 3) throw FormatError(origin + ": sphere_center must have 3 entries");
      spec.sphere_center = Eigen::Vector3d(c[0], c[1], c[2]);
    }
    spec.sphere_radius = root.value("sphere_radius", spec.sphere_radius);
    spec.feature_stride = root.value("feature_stride", spec.feature_stride);
    spec.feature_channels = root.value("feature_channels", spec.feature_channels);
    spec.cluster_separation = root.value("cluster_separation", spec.cluster_separation);
    spec.feature_noise = root.value("feature_noise", spec.feature_noise);
    spec.flow_noise = root.value("flow_noise", spec.flow_noise);
    for (const json& obj : root.value("objects", json::array())) {
      ObjectSpec o;
      o.half_size = obj.value("half_size", 1.0);
      o.yaw_rate_deg = obj.value("yaw_rate_deg", 0.0);
      if (obj.contains("keyframes")) {
        for (const auto& kf : obj.at("keyframes").get<std::vector<std::vector<double>>>()) {
          if (kf.size() != 3) throw FormatError(origin + ": object keyframes must be [x,y,z]");
          o.centers.emplace_back(kf[0], kf[1], kf[2]);
        }
      } else {
        const auto start = obj.value("start", std::vector<double>{0.0, 0.0, 6.0});
        const auto vel = obj.value("velocity", std::vector<double>{0.0, 0.0, 0.0});
        if (start.size() != 3 || vel.size() != 3)
          throw FormatError(origin + ": object start/velocity must have 3 entries");
        for (int t = 0; t < spec.frames; ++t)
          o.centers.emplace_back(start[0] + t * vel[0], start[1] + t * vel[1],
                                 start[2] + t * vel[2]);
      }
      spec.objects.push_back(std::move(o));
    }
  } catch (const json::exception& e) {
    throw FormatError(origin + ": " + e.what());
  }
  if (spec.frames < 2) throw FormatError(origin + ": frames must be >= 2");
  if (spec.width < 8 || spec.height < 8) throw FormatError(origin + ": frame size too small");
  if (spec.feature_stride < 1 || spec.width % spec.feature_stride != 0 ||
      spec.height % spec.feature_stride != 0)
    throw FormatError(origin + ": feature_stride must divide width and height");
  for (const ObjectSpec& o : spec.objects) {
    if (static_cast<int>(o.centers.size()) != spec.frames)
      throw FormatError(origin + ": object keyframe count must equal frames");
  }
  return spec;
}

std::string scene_spec_to_json(const SceneSpec& spec) {
  json root;
  root["frames"] = spec.frames;
  root["width"] = spec.width;
  root["height"] = spec.height;
  root["focal"] = spec.focal;
  root["path"] = spec.path == CameraPath::kLine
                     ? "line"
                     : (spec.path == CameraPath::kArc ? "arc" : "rotation_only");
  root["path_extent"] = spec.path_extent;
  root["path_height"] = spec.path_height;
  root["sphere_center"] = {spec.sphere_center.x(), spec.sphere_center.y(),
                           spec.sphere_center.z()};
  root["sphere_radius"] = spec.sphere_radius;
  root["feature_stride"] = spec.feature_stride;
  root["feature_channels"] = spec.feature_channels;
  root["cluster_separation"] = spec.cluster_separation;
  root["feature_noise"] = spec.feature_noise;
  root["flow_noise"] = spec.flow_noise;
  root["objects"] = json::array();
  for (const ObjectSpec& o : spec.objects) {
    json obj;
    obj["half_size"] = o.half_size;
    obj["yaw_rate_deg"] = o.yaw_rate_deg;
    obj["keyframes"] = json::array();
    for (const Eigen::Vector3d& c : o.centers)
      obj["keyframes"].push_back({c.x(), c.y(), c.z()});
    root["objects"].push_back(std::move(obj));
  }
  return root.dump(2);
}

std::pair<SyntheticScene, SceneTruth> generate(const SceneSpec& spec, std::uint64_t seed) {
  SyntheticScene scene;
  scene.spec = spec;
  scene.intrinsics << spec.focal, 0.0, (spec.width - 1) / 2.0, 0.0, spec.focal,
      (spec.height - 1) / 2.0, 0.0, 0.0, 1.0;
  build_cameras(scene);

  SceneTruth truth;
  Rng feature_rng(derive_seed(seed, 0xfea7));
  Rng flow_rng(derive_seed(seed, 0xf10f));

  // Cluster means straddle the origin: each object sits at +sep/2 along its
  // own direction, the static class opposite their mean. Both classes keep a
  // signed contrast at the ReLU operating point.
  std::vector<Eigen::VectorXd> cluster_means;
  cluster_means.push_back(Eigen::VectorXd::Zero(spec.feature_channels));  // filled below
  Eigen::VectorXd dir_sum = Eigen::VectorXd::Zero(spec.feature_channels);
  for (std::size_t o = 0; o < spec.objects.size(); ++o) {
    Eigen::VectorXd dir(spec.feature_channels);
    for (int c = 0; c < spec.feature_channels; ++c) dir(c) = feature_rng.gaussian();
    dir.normalize();
    dir_sum += dir;
    cluster_means.push_back(0.5 * spec.cluster_separation * dir);
  }
  if (dir_sum.norm() > 1e-9)
    cluster_means[0] = -0.5 * spec.cluster_separation * dir_sum.normalized();

  for (int t = 0; t < spec.frames; ++t) {
    std::vector<std::int8_t> classes;
    truth.masks.push_back(render_mask(scene, t, &classes));
    truth.features.push_back(render_features(scene, classes, cluster_means, feature_rng));
    if (t + 1 < spec.frames) {
      truth.flow_fwd.push_back(
          render_flow(scene, t, t + 1, spec.flow_noise > 0 ? &flow_rng : nullptr));
      truth.flow_bwd.push_back(
          render_flow(scene, t + 1, t, spec.flow_noise > 0 ? &flow_rng : nullptr));
      truth.gt_f.push_back(ground_truth_f(scene, t, t + 1));
    }

    TimedPose pose;
    pose.timestamp = 0.1 * t;
    pose.rotation = Eigen::Quaterniond(scene.rotations[t].transpose());
    pose.translation = scene.camera_center(t);
    truth.trajectory.poses.push_back(pose);
  }
  return {std::move(scene), std::move(truth)};
}

std::optional<FundamentalMatrix> ground_truth_f(const SyntheticScene& scene, int t,
                                                int t_prime) {
  const Eigen::Matrix3d r_rel = scene.rotations[t] * scene.rotations[t_prime].transpose();
  const Eigen::Vector3d t_rel =
      scene.translations[t] - r_rel * scene.translations[t_prime];
  if (t_rel.norm() < 1e-12) return std::nullopt;  // pure rotation: F undefined
  Eigen::Matrix3d cross;
  cross << 0.0, -t_rel.z(), t_rel.y(), t_rel.z(), 0.0, -t_rel.x(), -t_rel.y(), t_rel.x(), 0.0;
  const Eigen::Matrix3d k_inv = scene.intrinsics.inverse();
  return normalize_fundamental(k_inv.transpose() * cross * r_rel * k_inv);
}

void export_scene(const SyntheticScene& scene, const SceneTruth& truth,
                  const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "gt");
  char name[64];
  for (int t = 0; t < scene.spec.frames; ++t) {
    if (t + 1 < scene.spec.frames) {
      std::snprintf(name, sizeof(name), "flow_fwd_%06d.npy", t);
      write_tensor(flow_to_tensor(truth.flow_fwd[static_cast<std::size_t>(t)]), dir / name);
      std::snprintf(name, sizeof(name), "flow_bwd_%06d.npy", t + 1);
      write_tensor(flow_to_tensor(truth.flow_bwd[static_cast<std::size_t>(t)]), dir / name);
    }
    std::snprintf(name, sizeof(name), "feat_%06d.npy", t);
    write_tensor(features_to_tensor(truth.features[static_cast<std::size_t>(t)]), dir / name);
    std::snprintf(name, sizeof(name), "mask_%06d.pgm", t);
    write_mask(truth.masks[static_cast<std::size_t>(t)], dir / "gt" / name);
  }
  write_trajectory(truth.trajectory, dir / "gt" / "traj.txt");

  json manifest;
  manifest["frames"] = scene.spec.frames;
  manifest["width"] = scene.spec.width;
  manifest["height"] = scene.spec.height;
  manifest["degenerate"] = scene.degenerate;
  manifest["spec"] = json::parse(scene_spec_to_json(scene.spec));
  std::ofstream out(dir / "scene_manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write scene manifest in " + dir.string());
  out << manifest.dump(2) << "\n";
}

std::vector<PointPair> exact_static_pairs(const SyntheticScene& scene, int t, int t_prime,
                                          int count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<PointPair> pairs;
  const SceneSpec& spec = scene.spec;
  while (static_cast<int>(pairs.size()) < count) {
    const double px = rng.uniform(0.0, spec.width - 1.0);
    const double py = rng.uniform(0.0, spec.height - 1.0);
    const Ray ray = pixel_ray(scene, t, px, py);
    const Eigen::Vector3d point = ray.origin + intersect_sphere(spec, ray) * ray.dir;
    const Eigen::Vector2d target = project(scene, t_prime, point);
    if (target.x() < 0 || target.x() > spec.width - 1 || target.y() < 0 ||
        target.y() > spec.height - 1)
      continue;
    pairs.push_back({Eigen::Vector2d(px, py), target});
  }
  return pairs;
}

std::vector<PointPair> exact_dynamic_pairs(const SyntheticScene& scene, int t, int t_prime,
                                           int count, std::uint64_t seed) {
  if (scene.spec.objects.empty())
    throw ContractError("exact_dynamic_pairs: scene has no objects");
  Rng rng(seed);
  std::vector<PointPair> pairs;
  const SceneSpec& spec = scene.spec;
  int attempts = 0;
  while (static_cast<int>(pairs.size()) < count) {
    if (++attempts > count * 1000)
      throw PipelineError("exact_dynamic_pairs: objects not visible in both frames");
    const std::size_t o = rng.next_index(spec.objects.size());
    const ObjectSpec& obj = spec.objects[o];
    const Eigen::Vector2d local(rng.uniform(-obj.half_size, obj.half_size),
                                rng.uniform(-obj.half_size, obj.half_size));
    const ObjectPose from = object_pose(obj, t);
    const ObjectPose to = object_pose(obj, t_prime);
    const Eigen::Vector3d p_t =
        from.center + from.rotation.col(0) * local.x() + from.rotation.col(1) * local.y();
    const Eigen::Vector3d p_tp =
        to.center + to.rotation.col(0) * local.x() + to.rotation.col(1) * local.y();
    const Eigen::Vector2d a = project(scene, t, p_t);
    const Eigen::Vector2d b = project(scene, t_prime, p_tp);
    if (a.x() < 0 || a.x() > spec.width - 1 || a.y() < 0 || a.y() > spec.height - 1) continue;
    if (b.x() < 0 || b.x() > spec.width - 1 || b.y() < 0 || b.y() > spec.height - 1) continue;
    pairs.push_back({a, b});
  }
  return pairs;
}

}  // namespace romoseg
