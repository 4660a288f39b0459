#pragma once

// Fully connected networks with batch norm, inverted dropout, manual
// reverse-mode gradients and Adam. This is the only network family the
// method needs: encoder, stochastic decoder, prior network and the baseline
// regressors are all instances of Mlp.

#include "cirrl/linalg.hpp"
#include "cirrl/rng.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace cirrl::nn {

enum class Activation { relu, identity };
enum class Mode { train, eval };

struct MlpConfig {
  /// input -> hidden... -> output
  std::vector<int> layer_widths;
  /// Activation of hidden layers; the last layer is always affine.
  Activation hidden_activation = Activation::relu;
  /// One flag per hidden layer.
  std::vector<bool> batch_norm;
  double dropout_p = 0.0;
  std::uint64_t seed = 0;

  static MlpConfig make(std::vector<int> widths, bool batch_norm, double dropout_p,
                        std::uint64_t seed, Activation act = Activation::relu);
  int hidden_layers() const { return static_cast<int>(layer_widths.size()) - 2; }
  /// Throws InvalidConfigError.
  void validate() const;
};

/// weight is fan_in x fan_out so a batch maps as X * W + b.
struct DenseLayer {
  DenseMatrix weight;
  Vector bias;
};

struct BatchNorm {
  static constexpr double kEpsilon = 1e-5;
  static constexpr double kMomentum = 0.9;

  Vector scale;
  Vector shift;
  Vector running_mean;
  Vector running_var;
};

struct Mlp {
  MlpConfig config;
  std::vector<DenseLayer> layers;
  /// Indexed by hidden layer; empty optional when that layer is not normalised.
  std::vector<std::optional<BatchNorm>> norms;
  Mode mode = Mode::train;
  /// Bumped on every parameter update so stale forward caches are detected.
  std::uint64_t generation = 0;

  int input_width() const { return config.layer_widths.front(); }
  int output_width() const { return config.layer_widths.back(); }
  std::size_t parameter_count(bool include_batch_norm = false) const;
};

/// He-initialised weights, zero biases, unit batch-norm scale.
Mlp mlp_init(const MlpConfig& config);

struct LayerCache {
  DenseMatrix input;
  DenseMatrix normalized;
  Vector inv_std;
  DenseMatrix activated;
  DenseMatrix dropout_mask;
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  std::uint64_t generation = 0;
  Mode mode = Mode::eval;
  bool valid = false;
};

/// Forward pass in the network's current mode. Train mode uses batch
/// statistics (and updates the running ones) and draws dropout masks from `rng`.
DenseMatrix forward(Mlp& net, const DenseMatrix& batch, Rng& rng, ForwardCache* cache = nullptr);

/// Deterministic eval-mode pass; never mutates the network.
DenseMatrix predict(const Mlp& net, const DenseMatrix& batch);

struct MlpGrads {
  std::vector<DenseMatrix> weight;
  std::vector<Vector> bias;
  std::vector<Vector> bn_scale;  // empty where a layer has no batch norm
  std::vector<Vector> bn_shift;

  static MlpGrads zeros_like(const Mlp& net);
  void add_scaled(const MlpGrads& other, double factor);
  /// Same order as parameter_pointers().
  std::vector<double> flatten() const;
};

struct Backward {
  MlpGrads params;
  DenseMatrix input_grad;
};

/// Exact reverse-mode gradients of the cached train-mode forward pass.
Backward backward(const Mlp& net, const ForwardCache& cache, const DenseMatrix& output_grad);

struct AdamState {
  MlpGrads first;
  MlpGrads second;
  long step = 0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_net(const Mlp& net, double lr);
};

void adam_step(Mlp& net, const MlpGrads& grads, AdamState& state);

/// Addresses of every trainable scalar (weights, biases, batch-norm scale and shift).
std::vector<double*> parameter_pointers(Mlp& net);

}  // namespace cirrl::nn
