#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "romoseg/common.hpp"
#include "romoseg/tensor.hpp"

namespace romoseg {

// Dense per-pixel displacement field in pixels, channel order (dx, dy).
struct FlowField {
  int width = 0;
  int height = 0;
  std::vector<float> vectors;  // row-major, 2 floats per pixel

  Eigen::Vector2d at(int x, int y) const {
    const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 2;
    return {vectors[i], vectors[i + 1]};
  }
  void set(int x, int y, float dx, float dy) {
    const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 2;
    vectors[i] = dx;
    vectors[i + 1] = dy;
  }

  // Bilinear sample at a fractional position; caller guarantees
  // 0 <= px <= width-1 and 0 <= py <= height-1.
  Eigen::Vector2d sample_bilinear(double px, double py) const;
};

FlowField make_flow(int width, int height);
FlowField flow_from_tensor(const TensorFile& tensor, const std::string& origin);
TensorFile flow_to_tensor(const FlowField& flow);

struct CorrEntry {
  Eigen::Vector2d src;      // pixel in frame t (integer grid position)
  Eigen::Vector2d dst;      // src + flow(src), in frame t'
  std::int32_t pixel = 0;   // flat index of src in frame t
};

// Cycle-verified correspondences between a frame pair.
struct CorrespondenceSet {
  int frame_src = 0;
  int frame_dst = 0;
  int width = 0;
  int height = 0;
  std::vector<CorrEntry> entries;
  std::vector<std::uint8_t> valid_mask;  // per-pixel: produced an entry
};

// Keeps pixel x iff ||fwd(x) + bwd(x + fwd(x))||_2 <= tol, with bwd sampled
// bilinearly at the landing point; out-of-image landings are dropped.
CorrespondenceSet cycle_filter(const FlowField& fwd, const FlowField& bwd, double tol);

struct FlowStats {
  double mean_norm = 0.0;  // v_t, mean L2 norm over all pixels
};

FlowStats mean_flow_norm(const FlowField& fwd);

}  // namespace romoseg
