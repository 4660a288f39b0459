#pragma once

// Step 1: jointly train encoder, stochastic decoder and environment prior by
// minimising the autoencoder energy loss plus alpha times the prior loss.

#include "cirrl/dataset.hpp"
#include "cirrl/losses.hpp"
#include "cirrl/nn.hpp"
#include "cirrl/serialize.hpp"

#include <string>
#include <vector>

namespace cirrl::repr {

struct ReprTrainConfig {
  int latent_dim = 2;
  int width = 400;
  /// Hidden layers in each of encoder, decoder and prior network.
  int depth = 2;
  double alpha = 0.1;
  double lr = 1e-4;
  int epochs = 1000;
  int batch_size = 256;
  /// Decoder noise width; 0 means "same as the data dimension".
  int dec_noise_dim = 0;
  int draws = 2;
  bool batch_norm = true;
  losses::PriorScale prior_scale = losses::PriorScale::diagonal;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochLoss {
  int epoch = 0;
  double dpa = 0.0;
  double prior = 0.0;
  double rl = 0.0;
};

struct ReprModel {
  ReprTrainConfig config;
  nn::Mlp enc;
  nn::Mlp dec;
  nn::Mlp prior;
  /// Environment labels in one-hot column order.
  std::vector<int> env_labels;
  /// Per-column standardisation applied to X before the encoder.
  Vector input_mean;
  Vector input_scale;
  std::vector<EpochLoss> trace;

  int input_dim() const { return static_cast<int>(input_mean.size()); }
  int latent_dim() const { return enc.output_width(); }
  int dec_noise_dim() const { return dec.input_width() - latent_dim(); }
  /// Mean L_RL over the last tenth of the epochs (at least one epoch).
  double final_loss() const;
};

ReprModel train_representation(const MultiEnvDataset& data, const ReprTrainConfig& cfg);

/// Eval-mode latents, one row per row of x.
DenseMatrix encode(const ReprModel& model, const DenseMatrix& x);

/// dec(enc(x), fresh noise), on the original data scale.
DenseMatrix sample_reconstruction(const ReprModel& model, const DenseMatrix& x, Rng& rng);

/// Row-wise one-hot encoding of environment labels in the model's column order.
DenseMatrix env_onehot(const std::vector<int>& model_labels, const std::vector<int>& row_labels);

struct SweepRow {
  int dim = 0;
  double final_loss = 0.0;
  std::string error;
};

/// One model per latent dimension, all with the same seed. Failures are reported per row.
std::vector<SweepRow> latent_dim_sweep(const MultiEnvDataset& data, const ReprTrainConfig& cfg, const std::vector<int>& dims);

Json to_json(const ReprTrainConfig& cfg);
ReprTrainConfig repr_config_from_json(const Json& j);
Json to_json(const ReprModel& model);
ReprModel repr_from_json(const Json& j);

/// `epoch,loss_dpa,loss_g,loss_rl` rows.
std::string trace_csv(const ReprModel& model);

}  // namespace cirrl::repr
