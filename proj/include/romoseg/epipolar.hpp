#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "romoseg/common.hpp"
#include "romoseg/config.hpp"
#include "romoseg/flow.hpp"

namespace romoseg {

// 3x3 rank-2 fundamental matrix for the constraint h(x)^T F h(x') = 0,
// where x lives in the source frame and x' in the target frame.
// Normalized to unit Frobenius norm with the largest-magnitude entry positive.
struct FundamentalMatrix {
  Eigen::Matrix3d m = Eigen::Matrix3d::Zero();

  FundamentalMatrix transposed() const;
};

// Applies the fixed normalization (rank-2 truncation, unit Frobenius norm,
// sign convention) to an arbitrary nonzero 3x3 matrix.
FundamentalMatrix normalize_fundamental(const Eigen::Matrix3d& raw);

struct PointPair {
  Eigen::Vector2d a;  // source image point x
  Eigen::Vector2d b;  // target image point x'
};

// Normalized (Hartley) linear solution from >= 8 correspondences.
FundamentalMatrix eight_point(std::span<const PointPair> corrs);

// Classical 7-point solver: 1-3 rank-2 candidates from exactly 7 pairs.
std::vector<FundamentalMatrix> seven_point(std::span<const PointPair> corrs);

// Sampson distance, squared-pixel units. `classical` switches the first
// denominator term from F h(x) to F^T h(x) (the textbook variant).
double sampson(const FundamentalMatrix& f, const Eigen::Vector2d& x,
               const Eigen::Vector2d& x_prime, bool classical = false);

struct RobustFitReport {
  FundamentalMatrix model;
  double median_residual = 0.0;  // median squared Sampson residual
  int trials = 0;
  bool degenerate = false;
  std::size_t refit_inliers = 0;
  std::size_t used_correspondences = 0;  // fit-input size (pipeline bookkeeping)
};

// Least-median-of-squares fit: 7-point minimal samples scored by the median
// Sampson residual, polished with an 8-point refit on residuals below
// 2.5 * sqrt(median). Deterministic per seed.
RobustFitReport lmeds_fit(std::span<const PointPair> corrs, int trials, std::uint64_t seed,
                          bool classical_sampson = false);

// Per-pixel Sampson score map; negative entries mean "no correspondence".
struct ScoreMap {
  int width = 0;
  int height = 0;
  std::vector<double> scores;

  static constexpr double kUndefined = -1.0;
};

ScoreMap make_score_map(int width, int height);

// Scores every entry of the correspondence set against F onto the source
// frame's pixel grid.
ScoreMap score_correspondences(const FundamentalMatrix& f, const CorrespondenceSet& corrs,
                               bool classical_sampson = false);

struct EpipolarLabels {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> likely_static;   // L_t
  std::vector<std::uint8_t> likely_dynamic;  // U_t
  double inlier_fraction = 0.0;
  std::size_t defined_pixels = 0;
};

// Thresholds s = max(S_fwd, S_bwd) (one-sided at sequence boundaries) into
// likely-static / likely-dynamic masks with theta_l = 0.01*v_t, theta_u = 2*v_t.
EpipolarLabels label_masks(const ScoreMap* s_fwd, const ScoreMap* s_bwd, const FlowStats& v,
                           const RunConfig& cfg);

bool frame_reliable(const EpipolarLabels& labels, double threshold);

}  // namespace romoseg
