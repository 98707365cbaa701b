#include <doctest.h>

#include "romoseg/bundle_io.hpp"
#include "romoseg/synthgen.hpp"
#include "test_support.hpp"

using namespace romoseg;

TEST_CASE("ground-truth F of a translating camera matches the closed form") {
  SceneSpec spec = testsupport::static_scene();
  const auto [scene, truth] = generate(spec, 7);

  // Line path, no rotation: F = K^-T [t]x K^-1 up to scale.
  const Eigen::Vector3d t_rel = scene.translations[0] - scene.translations[1];
  Eigen::Matrix3d cross;
  cross << 0, -t_rel.z(), t_rel.y(), t_rel.z(), 0, -t_rel.x(), -t_rel.y(), t_rel.x(), 0;
  const Eigen::Matrix3d k_inv = scene.intrinsics.inverse();
  const FundamentalMatrix closed_form =
      normalize_fundamental(k_inv.transpose() * cross * k_inv);
  REQUIRE(truth.gt_f[0].has_value());
  const double dist = std::min((truth.gt_f[0]->m - closed_form.m).norm(),
                               (truth.gt_f[0]->m + closed_form.m).norm());
  CHECK(dist < 1e-12);
}

TEST_CASE("static correspondences satisfy the ground-truth epipolar constraint") {
  const auto [scene, truth] = generate(testsupport::static_scene(), 11);
  for (int t = 0; t + 1 < scene.spec.frames; t += 3) {
    const auto f = ground_truth_f(scene, t, t + 1);
    REQUIRE(f.has_value());
    for (const PointPair& p : exact_static_pairs(scene, t, t + 1, 300, 1000 + t)) {
      CHECK(std::abs(p.a.homogeneous().dot(f->m * p.b.homogeneous())) < 1e-12);
      CHECK(sampson(*f, p.a, p.b) < 1e-12);
    }
  }
}

TEST_CASE("ground-truth Sampson scores separate static from dynamic") {
  const auto [scene, truth] = generate(testsupport::reference_scene(), 13);
  const auto f = ground_truth_f(scene, 4, 5);
  REQUIRE(f.has_value());
  double max_static = 0.0;
  for (const PointPair& p : exact_static_pairs(scene, 4, 5, 500, 21))
    max_static = std::max(max_static, sampson(*f, p.a, p.b));
  double min_dynamic = std::numeric_limits<double>::infinity();
  for (const PointPair& p : exact_dynamic_pairs(scene, 4, 5, 500, 22))
    min_dynamic = std::min(min_dynamic, sampson(*f, p.a, p.b));
  CHECK(max_static < min_dynamic);
  CHECK(max_static < 1e-12);
}

TEST_CASE("mask coverage tracks the analytic quad projection") {
  // Fronto-parallel quad in front of the starting camera: projected area is
  // (2 f h / z)^2 pixels when the camera looks straight at it.
  SceneSpec spec = testsupport::static_scene(2);
  spec.path_extent = 1e-9;  // essentially static camera at the origin
  ObjectSpec obj;
  obj.half_size = 1.0;
  obj.centers = {{0.0, 0.0, 5.0}, {0.0, 0.0, 5.0}};
  spec.objects.push_back(obj);
  const auto [scene, truth] = generate(spec, 17);
  const double side = 2.0 * spec.focal * obj.half_size / obj.centers[0].z();
  const double expected = side * side;
  const double actual = static_cast<double>(truth.masks[0].count_dynamic());
  CHECK(std::abs(actual - expected) / expected < 0.05);
}

TEST_CASE("reference scene covers roughly 15% of pixels") {
  const auto [scene, truth] = generate(testsupport::reference_scene(), 19);
  double mean_cover = 0.0;
  for (const MaskImage& m : truth.masks)
    mean_cover += static_cast<double>(m.count_dynamic()) /
                  static_cast<double>(m.width * m.height);
  mean_cover /= static_cast<double>(truth.masks.size());
  CHECK(mean_cover > 0.08);
  CHECK(mean_cover < 0.25);
}

TEST_CASE("static pixels survive cycle filtering at the rasterization slack") {
  const auto [scene, truth] = generate(testsupport::reference_scene(), 23);
  const int t = 3;
  const CorrespondenceSet set =
      cycle_filter(truth.flow_fwd[t], truth.flow_bwd[t], 0.51);
  const MaskImage& mask = truth.masks[t];
  const MaskImage& mask_next = truth.masks[t + 1];
  std::size_t static_total = 0;
  std::size_t static_kept = 0;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (mask.at(x, y)) continue;
      // Skip pixels whose landing leaves the frame or lands on the object in
      // the target frame (occlusion; cycle failure is the expected behavior).
      const Eigen::Vector2d d = truth.flow_fwd[t].at(x, y);
      const double lx = x + d.x();
      const double ly = y + d.y();
      if (lx < 1 || lx > mask.width - 2 || ly < 1 || ly > mask.height - 2) continue;
      if (mask_next.at(static_cast<int>(std::round(lx)), static_cast<int>(std::round(ly))))
        continue;
      ++static_total;
      static_kept += set.valid_mask[static_cast<std::size_t>(y) * mask.width + x];
    }
  }
  REQUIRE(static_total > 1000);
  CHECK(static_kept == static_total);
}

TEST_CASE("generation is deterministic per seed") {
  const SceneSpec spec = testsupport::reference_scene();
  const auto [scene_a, truth_a] = generate(spec, 31);
  const auto [scene_b, truth_b] = generate(spec, 31);
  CHECK(truth_a.flow_fwd[0].vectors == truth_b.flow_fwd[0].vectors);
  CHECK(truth_a.features[0].values == truth_b.features[0].values);
  CHECK(truth_a.masks[0].values == truth_b.masks[0].values);
  const auto [scene_c, truth_c] = generate(spec, 32);
  CHECK(truth_a.features[0].values != truth_c.features[0].values);
}

TEST_CASE("infeasible camera path is a generation error") {
  SceneSpec spec = testsupport::static_scene();
  spec.path_extent = 100.0;  // walks out of the sphere
  CHECK_THROWS_AS(generate(spec, 1), PipelineError);
}

TEST_CASE("export produces a bundle the loaders accept verbatim") {
  const auto dir = testsupport::temp_dir("synth_export");
  const auto [scene, truth] = generate(testsupport::reference_scene(6), 37);
  export_scene(scene, truth, dir);

  SUBCASE("bundle loads with consistent shapes") {
    const SequenceBundle bundle = load_bundle(dir);
    CHECK(bundle.frames == 6);
    CHECK(bundle.width == scene.spec.width);
    CHECK(bundle.height == scene.spec.height);
    CHECK(bundle.features[0].channels == scene.spec.feature_channels);
  }
  SUBCASE("exported trajectory reads back to the source poses") {
    const Trajectory back = read_trajectory(dir / "gt" / "traj.txt");
    REQUIRE(back.size() == truth.trajectory.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
      CHECK((back.poses[i].translation - truth.trajectory.poses[i].translation).norm() < 1e-9);
      CHECK(back.poses[i].rotation.angularDistance(truth.trajectory.poses[i].rotation) < 1e-9);
    }
  }
  SUBCASE("exported flow at a static pixel equals the analytic displacement") {
    const SequenceBundle bundle = load_bundle(dir);
    // Independent reprojection oracle: ray-cast the sphere and project into
    // the next frame with plain camera algebra.
    const Eigen::Matrix3d k = scene.intrinsics;
    const Eigen::Matrix3d k_inv = k.inverse();
    for (const int x : {10, 40, 80, 120}) {
      const int y = 15;
      if (truth.masks[0].at(x, y)) continue;
      const Eigen::Vector3d origin = scene.camera_center(0);
      const Eigen::Vector3d dir =
          scene.rotations[0].transpose() * (k_inv * Eigen::Vector3d(x, y, 1.0));
      const Eigen::Vector3d oc = origin - scene.spec.sphere_center;
      const double a = dir.squaredNorm();
      const double b = 2.0 * oc.dot(dir);
      const double c = oc.squaredNorm() - scene.spec.sphere_radius * scene.spec.sphere_radius;
      const double s = (-b + std::sqrt(b * b - 4.0 * a * c)) / (2.0 * a);
      const Eigen::Vector3d world = origin + s * dir;
      const Eigen::Vector3d cam1 = scene.rotations[1] * world + scene.translations[1];
      const Eigen::Vector2d projected = (k * (cam1 / cam1.z())).head<2>();
      const Eigen::Vector2d analytic = projected - Eigen::Vector2d(x, y);
      CHECK((bundle.flow_fwd[0]->at(x, y) - analytic).norm() < 1e-6);
    }
  }
  SUBCASE("gt masks round trip") {
    const MaskImage m = read_mask(dir / "gt" / "mask_000002.pgm");
    CHECK(m.values == truth.masks[2].values);
  }
}

TEST_CASE("scene spec JSON round trip and validation") {
  const SceneSpec spec = testsupport::reference_scene();
  const SceneSpec back = parse_scene_spec(scene_spec_to_json(spec), "roundtrip");
  CHECK(back.frames == spec.frames);
  CHECK(back.objects.size() == spec.objects.size());
  CHECK(back.objects[0].centers[3] == spec.objects[0].centers[3]);
  CHECK(back.cluster_separation == spec.cluster_separation);

  CHECK_THROWS_AS(parse_scene_spec(R"({"frames": 1})", "bad"), FormatError);
  CHECK_THROWS_AS(parse_scene_spec(R"({"path": "zigzag"})", "bad"), FormatError);
  CHECK_THROWS_AS(parse_scene_spec("not json", "bad"), FormatError);
}
