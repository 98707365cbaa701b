#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "romoseg/common.hpp"
#include "romoseg/config.hpp"
#include "romoseg/epipolar.hpp"
#include "romoseg/image.hpp"
#include "romoseg/tensor.hpp"

namespace romoseg {

// Per-frame feature grid (may be coarser than the frame).
struct FeatureMap {
  int hf = 0;
  int wf = 0;
  int channels = 0;
  std::vector<float> values;  // row-major [hf, wf, channels]

  std::size_t cells() const { return static_cast<std::size_t>(hf) * wf; }
};

FeatureMap features_from_tensor(const TensorFile& tensor, const std::string& origin);
TensorFile features_to_tensor(const FeatureMap& features);

// One dense layer with a trainable Lipschitz bound: during the forward pass
// each weight row is rescaled so its absolute sum stays within softplus(c).
struct MlpLayer {
  Eigen::MatrixXd weights;  // out x in
  Eigen::VectorXd bias;     // out
  double lipschitz_c = 0.0;
};

struct MlpParams {
  std::vector<MlpLayer> layers;  // hidden layers (ReLU) then output (sigmoid)

  int input_dim() const { return static_cast<int>(layers.front().weights.cols()); }
};

// Seeded initialization for layout input_dim -> hidden_layers... -> 1.
MlpParams init_mlp(int input_dim, const std::vector<int>& hidden_layers, std::uint64_t seed);

// Per-cell probability in (0,1); hidden ReLU, output sigmoid.
std::vector<double> forward(const MlpParams& params, const FeatureMap& features);

struct RobustKernelCfg {
  double tau_sq = 0.01;
};

// Geman-McClure kernel e^2 / (e^2 + tau^2); bounded in [0, 1).
double gm_kernel(double e, const RobustKernelCfg& cfg);

// L/U pseudo-labels reduced to the feature grid (majority vote per cell,
// ties unlabeled).
struct GridLabels {
  int hf = 0;
  int wf = 0;
  std::vector<std::uint8_t> likely_static;
  std::vector<std::uint8_t> likely_dynamic;

  std::size_t activated() const;
};

GridLabels downsample_labels(const EpipolarLabels& labels, int hf, int wf);

struct SupLossResult {
  double value = 0.0;
  std::size_t activated = 0;  // 0 means "no supervision"
};

// Mean over activated cells of k(max(U - p, 0)) + k(max(p - (1 - L), 0)).
SupLossResult sup_loss(const std::vector<double>& pred, const GridLabels& labels,
                       const RobustKernelCfg& cfg);

// Product over layers of softplus(c_i), scaled by alpha.
double lipschitz_reg(const MlpParams& params, double alpha);

struct TrainState {
  MlpParams params;
  std::vector<MlpLayer> moment1;      // Adam first moments, shaped like params
  std::vector<MlpLayer> moment2;      // Adam second moments
  std::int64_t step = 0;
  std::uint64_t seed = 0;
  std::vector<double> loss_trace;     // total loss per epoch, pre-step
};

TrainState init_train_state(int input_dim, const RunConfig& cfg);

// Keeps the parameters but clears the optimizer moments, the step counter
// and the loss trace; used when fine-tuning across refinement iterations.
void reset_optimizer(TrainState& state);

// Full-batch Adam on (1/T) sum_t sup_loss + lipschitz_reg for cfg.epochs
// steps, gradients by exact backpropagation. Frames are visited in index
// order; deterministic for a given state.
void train(TrainState& state, const std::vector<const FeatureMap*>& features,
           const std::vector<GridLabels>& labels, const RunConfig& cfg);

// Total loss and (optionally) its gradient at the current parameters; the
// gradient layout mirrors MlpParams. Exposed for the finite-difference checks.
double total_loss(const MlpParams& params, const std::vector<const FeatureMap*>& features,
                  const std::vector<GridLabels>& labels, const RunConfig& cfg,
                  std::vector<MlpLayer>* gradient);

// Probabilities thresholded at 0.5 (strict), nearest-neighbor upsampled to
// the frame size.
MaskImage predict_mask(const MlpParams& params, const FeatureMap& features, int frame_width,
                       int frame_height);

// Checkpoint dump: weights_%02d.npy / biases_%02d.npy per layer plus
// lipschitz.npy, all f32 tensors.
void save_checkpoint(const MlpParams& params, const std::filesystem::path& dir);
MlpParams load_checkpoint(const std::filesystem::path& dir);

// Probability map as an [hf, wf] f32 tensor for inspection dumps.
TensorFile probabilities_to_tensor(const std::vector<double>& prob, int hf, int wf);

// Pixel-center nearest-neighbor cell lookup shared by the label downsampling
// and the mask upsampling.
inline int grid_cell(int pixel, int frame_extent, int grid_extent) {
  int cell = static_cast<int>((pixel + 0.5) * grid_extent / frame_extent);
  if (cell >= grid_extent) cell = grid_extent - 1;
  return cell;
}

}  // namespace romoseg
