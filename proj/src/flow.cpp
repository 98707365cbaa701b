#include "romoseg/flow.hpp"

#include <cmath>

namespace romoseg {

Eigen::Vector2d FlowField::sample_bilinear(double px, double py) const {
  int x0 = static_cast<int>(std::floor(px));
  int y0 = static_cast<int>(std::floor(py));
  // Clamp so the 2x2 neighborhood stays inside; exact-boundary samples
  // degenerate to the edge texels.
  if (x0 > width - 2) x0 = width - 2;
  if (y0 > height - 2) y0 = height - 2;
  if (x0 < 0) x0 = 0;
  if (y0 < 0) y0 = 0;
  const double fx = px - x0;
  const double fy = py - y0;
  const Eigen::Vector2d v00 = at(x0, y0);
  const Eigen::Vector2d v10 = at(x0 + 1, y0);
  const Eigen::Vector2d v01 = at(x0, y0 + 1);
  const Eigen::Vector2d v11 = at(x0 + 1, y0 + 1);
  return (1 - fy) * ((1 - fx) * v00 + fx * v10) + fy * ((1 - fx) * v01 + fx * v11);
}

FlowField make_flow(int width, int height) {
  FlowField f;
  f.width = width;
  f.height = height;
  f.vectors.assign(static_cast<std::size_t>(width) * height * 2, 0.0f);
  return f;
}

FlowField flow_from_tensor(const TensorFile& tensor, const std::string& origin) {
  if (tensor.dtype != Dtype::kF32 || tensor.shape.size() != 3 || tensor.shape[2] != 2)
    throw FormatError(origin + ": flow tensor must be [H,W,2] f32");
  FlowField f;
  f.height = static_cast<int>(tensor.shape[0]);
  f.width = static_cast<int>(tensor.shape[1]);
  f.vectors.resize(tensor.element_count());
  for (std::size_t i = 0; i < f.vectors.size(); ++i) {
    const float v = tensor.f32(i);
    if (!std::isfinite(v)) throw FormatError(origin + ": flow contains non-finite values");
    f.vectors[i] = v;
  }
  return f;
}

TensorFile flow_to_tensor(const FlowField& flow) {
  TensorFile t = make_tensor_f32({static_cast<std::size_t>(flow.height),
                                  static_cast<std::size_t>(flow.width), 2});
  for (std::size_t i = 0; i < flow.vectors.size(); ++i) t.set_f32(i, flow.vectors[i]);
  return t;
}

CorrespondenceSet cycle_filter(const FlowField& fwd, const FlowField& bwd, double tol) {
  if (fwd.width != bwd.width || fwd.height != bwd.height)
    throw ContractError("cycle_filter: forward/backward flow dimensions differ");
  if (!(tol > 0)) throw ContractError("cycle_filter: tol must be > 0");

  CorrespondenceSet set;
  set.width = fwd.width;
  set.height = fwd.height;
  set.valid_mask.assign(static_cast<std::size_t>(fwd.width) * fwd.height, 0);

  const double tol_sq = tol * tol;
  for (int y = 0; y < fwd.height; ++y) {
    for (int x = 0; x < fwd.width; ++x) {
      const Eigen::Vector2d d = fwd.at(x, y);
      const double lx = x + d.x();
      const double ly = y + d.y();
      if (lx < 0.0 || lx > fwd.width - 1 || ly < 0.0 || ly > fwd.height - 1) continue;
      const Eigen::Vector2d back = bwd.sample_bilinear(lx, ly);
      const Eigen::Vector2d residual = d + back;
      if (residual.squaredNorm() > tol_sq) continue;
      const std::int32_t pixel = static_cast<std::int32_t>(y) * fwd.width + x;
      set.entries.push_back({Eigen::Vector2d(x, y), Eigen::Vector2d(lx, ly), pixel});
      set.valid_mask[static_cast<std::size_t>(pixel)] = 1;
    }
  }
  return set;
}

FlowStats mean_flow_norm(const FlowField& fwd) {
  const std::size_t n = static_cast<std::size_t>(fwd.width) * fwd.height;
  if (n == 0) throw ContractError("mean_flow_norm: empty field");
  // Row-major pairwise summation keeps the result independent of any
  // outer parallelism.
  std::vector<double> norms(n);
  for (int y = 0; y < fwd.height; ++y)
    for (int x = 0; x < fwd.width; ++x)
      norms[static_cast<std::size_t>(y) * fwd.width + x] = fwd.at(x, y).norm();
  FlowStats stats;
  stats.mean_norm = pairwise_sum(norms) / static_cast<double>(n);
  return stats;
}

}  // namespace romoseg
