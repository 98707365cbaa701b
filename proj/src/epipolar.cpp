#include "romoseg/epipolar.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>

namespace romoseg {

namespace {

// Similarity normalization of image points: centroid to origin, mean
// distance sqrt(2) (Hartley conditioning).
Eigen::Matrix3d conditioning_transform(std::span<const PointPair> corrs, bool source_side) {
  Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
  for (const PointPair& p : corrs) centroid += source_side ? p.a : p.b;
  centroid /= static_cast<double>(corrs.size());
  double mean_dist = 0.0;
  for (const PointPair& p : corrs) mean_dist += ((source_side ? p.a : p.b) - centroid).norm();
  mean_dist /= static_cast<double>(corrs.size());
  const double scale = mean_dist > 1e-12 ? std::sqrt(2.0) / mean_dist : 1.0;
  Eigen::Matrix3d t = Eigen::Matrix3d::Identity();
  t(0, 0) = scale;
  t(1, 1) = scale;
  t(0, 2) = -scale * centroid.x();
  t(1, 2) = -scale * centroid.y();
  return t;
}

// One row of the linear system: h(x)^T F h(x') = 0 with F vectorized
// row-major, so the coefficient of F_ij is x_i * x'_j.
void encode_row(Eigen::Matrix<double, 1, 9>& row, const Eigen::Vector3d& x,
                const Eigen::Vector3d& xp) {
  row << x(0) * xp(0), x(0) * xp(1), x(0) * xp(2),
         x(1) * xp(0), x(1) * xp(1), x(1) * xp(2),
         x(2) * xp(0), x(2) * xp(1), x(2) * xp(2);
}

Eigen::MatrixXd design_matrix(std::span<const PointPair> corrs, const Eigen::Matrix3d& ta,
                              const Eigen::Matrix3d& tb) {
  Eigen::MatrixXd a(static_cast<Eigen::Index>(corrs.size()), 9);
  Eigen::Matrix<double, 1, 9> row;
  for (std::size_t i = 0; i < corrs.size(); ++i) {
    const Eigen::Vector3d x = ta * corrs[i].a.homogeneous();
    const Eigen::Vector3d xp = tb * corrs[i].b.homogeneous();
    encode_row(row, x, xp);
    a.row(static_cast<Eigen::Index>(i)) = row;
  }
  return a;
}

Eigen::Matrix3d unstack(const Eigen::Matrix<double, 9, 1>& f) {
  Eigen::Matrix3d m;
  m << f(0), f(1), f(2), f(3), f(4), f(5), f(6), f(7), f(8);
  return m;
}

// Real roots of c3 x^3 + c2 x^2 + c1 x + c0, degenerate leading
// coefficients handled by degree reduction.
std::vector<double> real_polynomial_roots(double c3, double c2, double c1, double c0) {
  const double scale = std::max({std::abs(c3), std::abs(c2), std::abs(c1), std::abs(c0)});
  if (scale == 0.0) return {};
  c3 /= scale;
  c2 /= scale;
  c1 /= scale;
  c0 /= scale;

  constexpr double kTinyLead = 1e-12;
  std::vector<double> roots;
  if (std::abs(c3) > kTinyLead) {
    Eigen::Matrix3d companion = Eigen::Matrix3d::Zero();
    companion(0, 2) = -c0 / c3;
    companion(1, 2) = -c1 / c3;
    companion(2, 2) = -c2 / c3;
    companion(1, 0) = 1.0;
    companion(2, 1) = 1.0;
    const Eigen::EigenSolver<Eigen::Matrix3d> solver(companion);
    for (int i = 0; i < 3; ++i) {
      const std::complex<double> r = solver.eigenvalues()(i);
      if (std::abs(r.imag()) <= 1e-9 * (1.0 + std::abs(r.real()))) roots.push_back(r.real());
    }
  } else if (std::abs(c2) > kTinyLead) {
    const double disc = c1 * c1 - 4.0 * c2 * c0;
    if (disc >= 0.0) {
      const double sq = std::sqrt(disc);
      roots.push_back((-c1 + sq) / (2.0 * c2));
      roots.push_back((-c1 - sq) / (2.0 * c2));
    }
  } else if (std::abs(c1) > kTinyLead) {
    roots.push_back(-c0 / c1);
  }
  std::sort(roots.begin(), roots.end());
  return roots;
}

double median_of(std::vector<double>& values) {
  // Upper median (index n/2); deterministic for even counts.
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid),
                   values.end());
  return values[mid];
}

}  // namespace

FundamentalMatrix FundamentalMatrix::transposed() const {
  FundamentalMatrix t;
  t.m = m.transpose();
  return t;
}

FundamentalMatrix normalize_fundamental(const Eigen::Matrix3d& raw) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(raw, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d sigma = svd.singularValues();
  sigma(2) = 0.0;
  Eigen::Matrix3d m = svd.matrixU() * sigma.asDiagonal() * svd.matrixV().transpose();
  const double norm = m.norm();
  if (!(norm > 0) || !m.allFinite())
    throw DegeneracyError("fundamental matrix normalization: rank-2 projection vanished");
  m /= norm;
  // Sign fixed by the first largest-magnitude entry in row-major order.
  double best = 0.0;
  double best_val = 0.0;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      if (std::abs(m(r, c)) > best) {
        best = std::abs(m(r, c));
        best_val = m(r, c);
      }
    }
  }
  if (best_val < 0) m = -m;
  FundamentalMatrix f;
  f.m = m;
  return f;
}

FundamentalMatrix eight_point(std::span<const PointPair> corrs) {
  if (corrs.size() < 8)
    throw InsufficientDataError("eight_point: need >= 8 correspondences, got " +
                                std::to_string(corrs.size()));
  const Eigen::Matrix3d ta = conditioning_transform(corrs, true);
  const Eigen::Matrix3d tb = conditioning_transform(corrs, false);
  const Eigen::MatrixXd a = design_matrix(corrs, ta, tb);

  // Full V: with exactly 8 rows the null-space direction is not part of
  // the thin decomposition.
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd& sv = svd.singularValues();
  if (sv(0) <= 0 || sv(7) < 1e-10 * sv(0))
    throw DegeneracyError("eight_point: design matrix rank < 8");

  const Eigen::Matrix3d f_hat = unstack(svd.matrixV().col(8));
  return normalize_fundamental(ta.transpose() * f_hat * tb);
}

std::vector<FundamentalMatrix> seven_point(std::span<const PointPair> corrs) {
  if (corrs.size() != 7)
    throw ContractError("seven_point: need exactly 7 correspondences, got " +
                        std::to_string(corrs.size()));
  const Eigen::Matrix3d ta = conditioning_transform(corrs, true);
  const Eigen::Matrix3d tb = conditioning_transform(corrs, false);
  const Eigen::MatrixXd a = design_matrix(corrs, ta, tb);

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd& sv = svd.singularValues();
  if (sv(0) <= 0 || sv(6) < 1e-10 * sv(0))
    throw DegeneracyError("seven_point: design matrix rank < 7");

  // Two-dimensional null space; solutions are F1 + lambda * F2 with
  // det(F1 + lambda * F2) = 0.
  const Eigen::Matrix3d f1 = unstack(svd.matrixV().col(7));
  const Eigen::Matrix3d f2 = unstack(svd.matrixV().col(8));

  // Cubic coefficients by interpolation at lambda = 0, 1, -1, 2.
  const double d0 = f1.determinant();
  const double d1 = (f1 + f2).determinant();
  const double dm1 = (f1 - f2).determinant();
  const double d2 = (f1 + 2.0 * f2).determinant();
  const double c0 = d0;
  const double c2 = (d1 + dm1) / 2.0 - c0;
  const double odd = (d1 - dm1) / 2.0;                        // c1 + c3
  const double c3 = (d2 - c0 - 4.0 * c2 - 2.0 * odd) / 6.0;   // from d2 expansion
  const double c1 = odd - c3;

  std::vector<FundamentalMatrix> candidates;
  for (const double lambda : real_polynomial_roots(c3, c2, c1, c0)) {
    const Eigen::Matrix3d f_hat = f1 + lambda * f2;
    if (f_hat.norm() < 1e-12) continue;
    candidates.push_back(normalize_fundamental(ta.transpose() * f_hat * tb));
  }
  // The root at infinity (F2 alone) is a solution when the cubic degenerates.
  const double lead_scale = std::max({std::abs(c3), std::abs(c2), std::abs(c1), std::abs(c0)});
  if (lead_scale > 0 && std::abs(c3) <= 1e-12 * lead_scale && f2.norm() > 1e-12)
    candidates.push_back(normalize_fundamental(ta.transpose() * f2 * tb));

  if (candidates.empty()) throw DegeneracyError("seven_point: no real solution");
  return candidates;
}

double sampson(const FundamentalMatrix& f, const Eigen::Vector2d& x,
               const Eigen::Vector2d& x_prime, bool classical) {
  const Eigen::Vector3d hx = x.homogeneous();
  const Eigen::Vector3d hxp = x_prime.homogeneous();
  const double numerator_root = hx.dot(f.m * hxp);
  const double numerator = numerator_root * numerator_root;
  const Eigen::Vector3d first = classical ? Eigen::Vector3d(f.m.transpose() * hx)
                                          : Eigen::Vector3d(f.m * hx);
  const Eigen::Vector3d second = f.m * hxp;
  const double denominator =
      first(0) * first(0) + first(1) * first(1) + second(0) * second(0) + second(1) * second(1);
  if (denominator == 0.0)
    return numerator == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return numerator / denominator;
}

RobustFitReport lmeds_fit(std::span<const PointPair> corrs, int trials, std::uint64_t seed,
                          bool classical_sampson) {
  if (corrs.size() < 8)
    throw InsufficientDataError("lmeds_fit: need >= 8 correspondences, got " +
                                std::to_string(corrs.size()));
  if (trials < 1) throw ContractError("lmeds_fit: trials must be >= 1");

  Rng rng(seed);
  RobustFitReport report;
  report.trials = trials;
  report.used_correspondences = corrs.size();
  double best_median = std::numeric_limits<double>::infinity();
  bool have_model = false;
  std::vector<double> residuals(corrs.size());
  std::vector<PointPair> sample(7);

  for (int trial = 0; trial < trials; ++trial) {
    const std::vector<std::size_t> idx = rng.distinct_indices(7, corrs.size());
    for (int i = 0; i < 7; ++i) sample[static_cast<std::size_t>(i)] = corrs[idx[i]];
    std::vector<FundamentalMatrix> candidates;
    try {
      candidates = seven_point(sample);
    } catch (const DegeneracyError&) {
      continue;
    }
    for (const FundamentalMatrix& cand : candidates) {
      for (std::size_t i = 0; i < corrs.size(); ++i)
        residuals[i] = sampson(cand, corrs[i].a, corrs[i].b, classical_sampson);
      const double med = median_of(residuals);
      if (med < best_median) {
        best_median = med;
        report.model = cand;
        have_model = true;
      }
    }
  }
  if (!have_model) throw DegeneracyError("lmeds_fit: all minimal samples degenerate");
  report.median_residual = best_median;

  // Polish: 8-point refit on residuals below the 2.5-sigma LMedS cut. The
  // small absolute floor keeps the inlier set populated on exact data where
  // the median collapses to ~0.
  const double cut = std::max(6.25 * best_median, 1e-12);
  std::vector<PointPair> inliers;
  for (const PointPair& p : corrs) {
    if (sampson(report.model, p.a, p.b, classical_sampson) < cut) inliers.push_back(p);
  }
  report.refit_inliers = inliers.size();
  if (inliers.size() >= 8) {
    try {
      const FundamentalMatrix refit = eight_point(inliers);
      for (std::size_t i = 0; i < corrs.size(); ++i)
        residuals[i] = sampson(refit, corrs[i].a, corrs[i].b, classical_sampson);
      report.model = refit;
      report.median_residual = median_of(residuals);
    } catch (const DegeneracyError&) {
      // rank-deficient inlier system; keep the minimal-sample winner
    }
  }

  // Rank probe: a well-posed epipolar geometry pins the null space of the
  // inlier system to one dimension. A second vanishing singular value means
  // a whole family of models fits (pure rotation / low parallax).
  const std::span<const PointPair> probe =
      inliers.size() >= 8 ? std::span<const PointPair>(inliers) : corrs;
  const Eigen::Matrix3d ta = conditioning_transform(probe, true);
  const Eigen::Matrix3d tb = conditioning_transform(probe, false);
  const Eigen::MatrixXd a = design_matrix(probe, ta, tb);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  const Eigen::VectorXd& sv = svd.singularValues();
  if (sv(0) <= 0 || sv(7) < 1e-6 * sv(0)) report.degenerate = true;
  return report;
}

ScoreMap make_score_map(int width, int height) {
  ScoreMap map;
  map.width = width;
  map.height = height;
  map.scores.assign(static_cast<std::size_t>(width) * height, ScoreMap::kUndefined);
  return map;
}

ScoreMap score_correspondences(const FundamentalMatrix& f, const CorrespondenceSet& corrs,
                               bool classical_sampson) {
  ScoreMap map = make_score_map(corrs.width, corrs.height);
  for (const CorrEntry& e : corrs.entries)
    map.scores[static_cast<std::size_t>(e.pixel)] =
        sampson(f, e.src, e.dst, classical_sampson);
  return map;
}

EpipolarLabels label_masks(const ScoreMap* s_fwd, const ScoreMap* s_bwd, const FlowStats& v,
                           const RunConfig& cfg) {
  const ScoreMap* any = s_fwd != nullptr ? s_fwd : s_bwd;
  if (any == nullptr) throw ContractError("label_masks: no score map given");
  if (s_fwd != nullptr && s_bwd != nullptr &&
      (s_fwd->width != s_bwd->width || s_fwd->height != s_bwd->height))
    throw ContractError("label_masks: score maps are not aligned");
  if (v.mean_norm < 0) throw ContractError("label_masks: negative mean flow norm");

  EpipolarLabels labels;
  labels.width = any->width;
  labels.height = any->height;
  const std::size_t n = static_cast<std::size_t>(labels.width) * labels.height;
  labels.likely_static.assign(n, 0);
  labels.likely_dynamic.assign(n, 0);

  if (v.mean_norm == 0.0) {
    log_warn("label_masks: v_t is zero, thresholds collapse; emitting empty masks");
    return labels;
  }
  const double theta_l = cfg.theta_l_multiplier * v.mean_norm;
  const double theta_u = cfg.theta_u_multiplier * v.mean_norm;

  std::size_t inliers = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = ScoreMap::kUndefined;
    if (s_fwd != nullptr && s_fwd->scores[i] >= 0.0) s = s_fwd->scores[i];
    if (s_bwd != nullptr && s_bwd->scores[i] >= 0.0) s = std::max(s, s_bwd->scores[i]);
    if (s < 0.0) continue;  // no correspondence on either side
    ++labels.defined_pixels;
    if (s < theta_l) {
      labels.likely_static[i] = 1;
      ++inliers;
    } else if (s > theta_u) {
      labels.likely_dynamic[i] = 1;
    }
  }
  labels.inlier_fraction =
      labels.defined_pixels > 0
          ? static_cast<double>(inliers) / static_cast<double>(labels.defined_pixels)
          : 0.0;
  return labels;
}

bool frame_reliable(const EpipolarLabels& labels, double threshold) {
  if (labels.defined_pixels == 0) return false;
  return labels.inlier_fraction >= threshold;
}

}  // namespace romoseg
