#include "romoseg/classifier.hpp"

#include <cmath>

namespace romoseg {

namespace {

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double softplus_inv(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// d/de of the Geman-McClure kernel.
double gm_kernel_grad(double e, double tau_sq) {
  const double d = e * e + tau_sq;
  return 2.0 * e * tau_sq / (d * d);
}

// Effective (row-clipped) weights for one layer.
Eigen::MatrixXd effective_weights(const MlpLayer& layer) {
  const double bound = softplus(layer.lipschitz_c);
  Eigen::MatrixXd w = layer.weights;
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    const double row_sum = w.row(r).cwiseAbs().sum();
    if (row_sum > bound) w.row(r) *= bound / row_sum;
  }
  return w;
}

Eigen::MatrixXd frame_matrix(const FeatureMap& features) {
  Eigen::MatrixXd x(features.channels, static_cast<Eigen::Index>(features.cells()));
  for (std::size_t cell = 0; cell < features.cells(); ++cell)
    for (int c = 0; c < features.channels; ++c)
      x(c, static_cast<Eigen::Index>(cell)) = features.values[cell * features.channels + c];
  return x;
}

struct LayerCache {
  Eigen::MatrixXd input;       // activations entering the layer
  Eigen::MatrixXd pre;         // W_eff * input + b
  Eigen::MatrixXd w_eff;
};

// Forward pass keeping per-layer caches for backprop; returns output
// probabilities (1 x N).
Eigen::MatrixXd forward_cached(const MlpParams& params, const Eigen::MatrixXd& x,
                               std::vector<LayerCache>* caches) {
  Eigen::MatrixXd a = x;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const MlpLayer& layer = params.layers[l];
    LayerCache cache;
    cache.input = a;
    cache.w_eff = effective_weights(layer);
    cache.pre = (cache.w_eff * a).colwise() + layer.bias;
    const bool is_output = (l + 1 == params.layers.size());
    if (is_output)
      a = cache.pre.unaryExpr([](double v) { return sigmoid(v); });
    else
      a = cache.pre.cwiseMax(0.0);
    if (caches != nullptr) caches->push_back(std::move(cache));
  }
  return a;
}

// Propagates d(loss)/d(effective W) back onto the raw weights and the
// Lipschitz parameter of one layer.
void backprop_row_clipping(const MlpLayer& layer, const Eigen::MatrixXd& grad_w_eff,
                           Eigen::MatrixXd& grad_w, double& grad_c) {
  const double bound = softplus(layer.lipschitz_c);
  const double dbound_dc = sigmoid(layer.lipschitz_c);
  for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
    const double row_sum = layer.weights.row(r).cwiseAbs().sum();
    if (row_sum <= bound) {
      grad_w.row(r) += grad_w_eff.row(r);
      continue;
    }
    const double scale = bound / row_sum;
    const double dot = grad_w_eff.row(r).dot(layer.weights.row(r));
    grad_w.row(r) += scale * grad_w_eff.row(r) -
                     (scale / row_sum) * dot * layer.weights.row(r).unaryExpr([](double v) {
                       return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0);
                     });
    grad_c += dot * dbound_dc / row_sum;
  }
}

std::vector<MlpLayer> zeros_like(const MlpParams& params) {
  std::vector<MlpLayer> z;
  z.reserve(params.layers.size());
  for (const MlpLayer& layer : params.layers) {
    MlpLayer g;
    g.weights = Eigen::MatrixXd::Zero(layer.weights.rows(), layer.weights.cols());
    g.bias = Eigen::VectorXd::Zero(layer.bias.size());
    g.lipschitz_c = 0.0;
    z.push_back(std::move(g));
  }
  return z;
}

void check_finite(const MlpParams& params) {
  for (const MlpLayer& layer : params.layers) {
    if (!layer.weights.allFinite() || !layer.bias.allFinite() ||
        !std::isfinite(layer.lipschitz_c))
      throw PipelineError("classifier training produced non-finite parameters");
  }
}

}  // namespace

FeatureMap features_from_tensor(const TensorFile& tensor, const std::string& origin) {
  if (tensor.dtype != Dtype::kF32 || tensor.shape.size() != 3)
    throw FormatError(origin + ": feature tensor must be [Hf,Wf,C] f32");
  FeatureMap f;
  f.hf = static_cast<int>(tensor.shape[0]);
  f.wf = static_cast<int>(tensor.shape[1]);
  f.channels = static_cast<int>(tensor.shape[2]);
  f.values.resize(tensor.element_count());
  for (std::size_t i = 0; i < f.values.size(); ++i) {
    const float v = tensor.f32(i);
    if (!std::isfinite(v)) throw FormatError(origin + ": features contain non-finite values");
    f.values[i] = v;
  }
  return f;
}

TensorFile features_to_tensor(const FeatureMap& features) {
  TensorFile t = make_tensor_f32({static_cast<std::size_t>(features.hf),
                                  static_cast<std::size_t>(features.wf),
                                  static_cast<std::size_t>(features.channels)});
  for (std::size_t i = 0; i < features.values.size(); ++i) t.set_f32(i, features.values[i]);
  return t;
}

MlpParams init_mlp(int input_dim, const std::vector<int>& hidden_layers, std::uint64_t seed) {
  if (input_dim < 1) throw ContractError("init_mlp: input_dim must be >= 1");
  Rng rng(seed);
  std::vector<int> widths;
  widths.push_back(input_dim);
  widths.insert(widths.end(), hidden_layers.begin(), hidden_layers.end());
  widths.push_back(1);

  MlpParams params;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    MlpLayer layer;
    const int fan_in = widths[l];
    const int fan_out = widths[l + 1];
    const double limit = 1.0 / std::sqrt(static_cast<double>(fan_in));
    layer.weights.resize(fan_out, fan_in);
    for (int r = 0; r < fan_out; ++r)
      for (int c = 0; c < fan_in; ++c) layer.weights(r, c) = rng.uniform(-limit, limit);
    layer.bias = Eigen::VectorXd::Zero(fan_out);
    // Start with slack above the largest row: no clipping at init, and the
    // bound does not throttle the first training epochs.
    const double max_row = layer.weights.cwiseAbs().rowwise().sum().maxCoeff();
    layer.lipschitz_c = softplus_inv(std::max(3.0 * max_row, 0.1));
    params.layers.push_back(std::move(layer));
  }
  return params;
}

std::vector<double> forward(const MlpParams& params, const FeatureMap& features) {
  if (features.channels != params.input_dim())
    throw ContractError("forward: feature channels " + std::to_string(features.channels) +
                        " do not match classifier input " + std::to_string(params.input_dim()));
  const Eigen::MatrixXd out = forward_cached(params, frame_matrix(features), nullptr);
  return {out.data(), out.data() + out.cols()};
}

double gm_kernel(double e, const RobustKernelCfg& cfg) {
  if (e < 0) throw ContractError("gm_kernel: e must be >= 0");
  if (!(cfg.tau_sq > 0)) throw ContractError("gm_kernel: tau_sq must be > 0");
  const double e2 = e * e;
  return e2 / (e2 + cfg.tau_sq);
}

std::size_t GridLabels::activated() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < likely_static.size(); ++i)
    n += (likely_static[i] != 0 || likely_dynamic[i] != 0);
  return n;
}

GridLabels downsample_labels(const EpipolarLabels& labels, int hf, int wf) {
  GridLabels grid;
  grid.hf = hf;
  grid.wf = wf;
  const std::size_t cells = static_cast<std::size_t>(hf) * wf;
  std::vector<std::int32_t> static_votes(cells, 0);
  std::vector<std::int32_t> dynamic_votes(cells, 0);
  for (int y = 0; y < labels.height; ++y) {
    const int cy = grid_cell(y, labels.height, hf);
    for (int x = 0; x < labels.width; ++x) {
      const std::size_t pixel = static_cast<std::size_t>(y) * labels.width + x;
      const std::size_t cell = static_cast<std::size_t>(cy) * wf + grid_cell(x, labels.width, wf);
      static_votes[cell] += labels.likely_static[pixel];
      dynamic_votes[cell] += labels.likely_dynamic[pixel];
    }
  }
  grid.likely_static.assign(cells, 0);
  grid.likely_dynamic.assign(cells, 0);
  for (std::size_t i = 0; i < cells; ++i) {
    if (static_votes[i] > dynamic_votes[i]) grid.likely_static[i] = 1;
    else if (dynamic_votes[i] > static_votes[i]) grid.likely_dynamic[i] = 1;
  }
  return grid;
}

SupLossResult sup_loss(const std::vector<double>& pred, const GridLabels& labels,
                       const RobustKernelCfg& cfg) {
  const std::size_t cells = static_cast<std::size_t>(labels.hf) * labels.wf;
  if (pred.size() != cells) throw ContractError("sup_loss: prediction/label grids differ");

  SupLossResult result;
  double sum = 0.0;
  for (std::size_t i = 0; i < cells; ++i) {
    const double u = labels.likely_dynamic[i];
    const double l = labels.likely_static[i];
    if (u == 0.0 && l == 0.0) continue;
    ++result.activated;
    sum += gm_kernel(std::max(u - pred[i], 0.0), cfg);
    sum += gm_kernel(std::max(pred[i] - (1.0 - l), 0.0), cfg);
  }
  if (result.activated == 0) {
    log_debug("sup_loss: no supervision on this frame");
    return result;
  }
  result.value = sum / static_cast<double>(result.activated);
  return result;
}

double lipschitz_reg(const MlpParams& params, double alpha) {
  double product = 1.0;
  for (const MlpLayer& layer : params.layers) product *= softplus(layer.lipschitz_c);
  return alpha * product;
}

double total_loss(const MlpParams& params, const std::vector<const FeatureMap*>& features,
                  const std::vector<GridLabels>& labels, const RunConfig& cfg,
                  std::vector<MlpLayer>* gradient) {
  if (features.size() != labels.size())
    throw ContractError("total_loss: feature/label frame counts differ");
  if (features.empty()) throw InsufficientDataError("total_loss: no supervision frames");

  const RobustKernelCfg kernel{cfg.tau_sq};
  const double frame_weight = 1.0 / static_cast<double>(features.size());
  if (gradient != nullptr) *gradient = zeros_like(params);

  double loss = 0.0;
  std::size_t total_activated = 0;
  for (std::size_t t = 0; t < features.size(); ++t) {
    const Eigen::MatrixXd x = frame_matrix(*features[t]);
    std::vector<LayerCache> caches;
    const Eigen::MatrixXd prob = forward_cached(params, x, &caches);
    const GridLabels& gl = labels[t];
    if (static_cast<std::size_t>(prob.cols()) !=
        static_cast<std::size_t>(gl.hf) * static_cast<std::size_t>(gl.wf))
      throw ContractError("total_loss: label grid does not match feature grid");

    const std::size_t activated = gl.activated();
    total_activated += activated;
    if (activated == 0) continue;

    double frame_sum = 0.0;
    Eigen::MatrixXd dprob = Eigen::MatrixXd::Zero(1, prob.cols());
    for (Eigen::Index i = 0; i < prob.cols(); ++i) {
      const double u = gl.likely_dynamic[static_cast<std::size_t>(i)];
      const double l = gl.likely_static[static_cast<std::size_t>(i)];
      if (u == 0.0 && l == 0.0) continue;
      const double p = prob(0, i);
      const double e_low = std::max(u - p, 0.0);
      const double e_high = std::max(p - (1.0 - l), 0.0);
      frame_sum += gm_kernel(e_low, kernel) + gm_kernel(e_high, kernel);
      if (gradient != nullptr) {
        double d = 0.0;
        if (e_low > 0.0) d -= gm_kernel_grad(e_low, kernel.tau_sq);
        if (e_high > 0.0) d += gm_kernel_grad(e_high, kernel.tau_sq);
        dprob(0, i) = d / static_cast<double>(activated);
      }
    }
    loss += frame_weight * frame_sum / static_cast<double>(activated);

    if (gradient != nullptr) {
      // Output sigmoid, then walk the layers backwards.
      Eigen::MatrixXd delta =
          frame_weight *
          dprob.cwiseProduct(prob.cwiseProduct(Eigen::MatrixXd::Ones(1, prob.cols()) - prob));
      for (std::size_t l = params.layers.size(); l-- > 0;) {
        const LayerCache& cache = caches[l];
        const Eigen::MatrixXd grad_w_eff = delta * cache.input.transpose();
        (*gradient)[l].bias += delta.rowwise().sum();
        backprop_row_clipping(params.layers[l], grad_w_eff, (*gradient)[l].weights,
                              (*gradient)[l].lipschitz_c);
        if (l > 0) {
          delta = cache.w_eff.transpose() * delta;
          // ReLU gate of the previous layer's activations.
          delta = delta.cwiseProduct(
              caches[l - 1].pre.unaryExpr([](double v) { return v > 0 ? 1.0 : 0.0; }));
        }
      }
    }
  }
  if (total_activated == 0)
    throw InsufficientDataError("total_loss: no supervision (zero activated cells)");

  loss += lipschitz_reg(params, cfg.lipschitz_alpha);
  if (gradient != nullptr && cfg.lipschitz_alpha > 0.0) {
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
      double others = 1.0;
      for (std::size_t k = 0; k < params.layers.size(); ++k)
        if (k != l) others *= softplus(params.layers[k].lipschitz_c);
      (*gradient)[l].lipschitz_c +=
          cfg.lipschitz_alpha * others * sigmoid(params.layers[l].lipschitz_c);
    }
  }
  return loss;
}

TrainState init_train_state(int input_dim, const RunConfig& cfg) {
  TrainState state;
  state.seed = cfg.seed;
  state.params = init_mlp(input_dim, cfg.hidden_layers, derive_seed(cfg.seed, 0x4d4c50));
  state.moment1 = zeros_like(state.params);
  state.moment2 = zeros_like(state.params);
  return state;
}

void reset_optimizer(TrainState& state) {
  state.moment1 = zeros_like(state.params);
  state.moment2 = zeros_like(state.params);
  state.step = 0;
  state.loss_trace.clear();
}

void train(TrainState& state, const std::vector<const FeatureMap*>& features,
           const std::vector<GridLabels>& labels, const RunConfig& cfg) {
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;

  std::vector<MlpLayer> grad;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double loss = total_loss(state.params, features, labels, cfg, &grad);
    state.loss_trace.push_back(loss);
    ++state.step;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.step));

    for (std::size_t l = 0; l < state.params.layers.size(); ++l) {
      MlpLayer& p = state.params.layers[l];
      MlpLayer& m1 = state.moment1[l];
      MlpLayer& m2 = state.moment2[l];
      const MlpLayer& g = grad[l];

      m1.weights = kBeta1 * m1.weights + (1.0 - kBeta1) * g.weights;
      m2.weights = kBeta2 * m2.weights + (1.0 - kBeta2) * g.weights.cwiseProduct(g.weights);
      p.weights.array() -= cfg.learning_rate * (m1.weights.array() / bc1) /
                           ((m2.weights.array() / bc2).sqrt() + kEps);

      m1.bias = kBeta1 * m1.bias + (1.0 - kBeta1) * g.bias;
      m2.bias = kBeta2 * m2.bias + (1.0 - kBeta2) * g.bias.cwiseProduct(g.bias);
      p.bias.array() -=
          cfg.learning_rate * (m1.bias.array() / bc1) / ((m2.bias.array() / bc2).sqrt() + kEps);

      m1.lipschitz_c = kBeta1 * m1.lipschitz_c + (1.0 - kBeta1) * g.lipschitz_c;
      m2.lipschitz_c = kBeta2 * m2.lipschitz_c + (1.0 - kBeta2) * g.lipschitz_c * g.lipschitz_c;
      p.lipschitz_c -=
          cfg.learning_rate * (m1.lipschitz_c / bc1) / (std::sqrt(m2.lipschitz_c / bc2) + kEps);
    }
    check_finite(state.params);
  }
}

void save_checkpoint(const MlpParams& params, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  char name[32];
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const MlpLayer& layer = params.layers[l];
    TensorFile w = make_tensor_f32({static_cast<std::size_t>(layer.weights.rows()),
                                    static_cast<std::size_t>(layer.weights.cols())});
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c)
        w.set_f32(static_cast<std::size_t>(r * layer.weights.cols() + c),
                  static_cast<float>(layer.weights(r, c)));
    std::snprintf(name, sizeof(name), "weights_%02zu.npy", l);
    write_tensor(w, dir / name);

    TensorFile b = make_tensor_f32({static_cast<std::size_t>(layer.bias.size()), 1});
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r)
      b.set_f32(static_cast<std::size_t>(r), static_cast<float>(layer.bias(r)));
    std::snprintf(name, sizeof(name), "biases_%02zu.npy", l);
    write_tensor(b, dir / name);
  }
  TensorFile c = make_tensor_f32({params.layers.size(), 1});
  for (std::size_t l = 0; l < params.layers.size(); ++l)
    c.set_f32(l, static_cast<float>(params.layers[l].lipschitz_c));
  write_tensor(c, dir / "lipschitz.npy");
}

MlpParams load_checkpoint(const std::filesystem::path& dir) {
  const TensorFile c = read_tensor(dir / "lipschitz.npy");
  MlpParams params;
  char name[32];
  for (std::size_t l = 0; l < c.shape[0]; ++l) {
    std::snprintf(name, sizeof(name), "weights_%02zu.npy", l);
    const TensorFile w = read_tensor(dir / name);
    std::snprintf(name, sizeof(name), "biases_%02zu.npy", l);
    const TensorFile b = read_tensor(dir / name);
    MlpLayer layer;
    layer.weights.resize(static_cast<Eigen::Index>(w.shape[0]),
                         static_cast<Eigen::Index>(w.shape[1]));
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r)
      for (Eigen::Index col = 0; col < layer.weights.cols(); ++col)
        layer.weights(r, col) =
            w.f32(static_cast<std::size_t>(r * layer.weights.cols() + col));
    layer.bias.resize(static_cast<Eigen::Index>(b.shape[0]));
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r)
      layer.bias(r) = b.f32(static_cast<std::size_t>(r));
    layer.lipschitz_c = c.f32(l);
    params.layers.push_back(std::move(layer));
  }
  if (params.layers.empty()) throw FormatError("empty checkpoint in " + dir.string());
  return params;
}

TensorFile probabilities_to_tensor(const std::vector<double>& prob, int hf, int wf) {
  if (prob.size() != static_cast<std::size_t>(hf) * wf)
    throw ContractError("probabilities_to_tensor: size does not match grid");
  TensorFile t =
      make_tensor_f32({static_cast<std::size_t>(hf), static_cast<std::size_t>(wf)});
  for (std::size_t i = 0; i < prob.size(); ++i) t.set_f32(i, static_cast<float>(prob[i]));
  return t;
}

MaskImage predict_mask(const MlpParams& params, const FeatureMap& features, int frame_width,
                       int frame_height) {
  const std::vector<double> prob = forward(params, features);
  MaskImage mask = make_mask(frame_width, frame_height);
  for (int y = 0; y < frame_height; ++y) {
    const int cy = grid_cell(y, frame_height, features.hf);
    for (int x = 0; x < frame_width; ++x) {
      const int cx = grid_cell(x, frame_width, features.wf);
      const double p = prob[static_cast<std::size_t>(cy) * features.wf + cx];
      mask.set(x, y, p > 0.5);
    }
  }
  return mask;
}

}  // namespace romoseg
