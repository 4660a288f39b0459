#pragma once

// Sample estimators of the distributional autoencoder objective, the
// conditional prior-matching objective and their weighted sum, with gradients
// propagated into the encoder, decoder and prior networks.

#include "cirrl/kernels.hpp"
#include "cirrl/nn.hpp"
#include "cirrl/rng.hpp"

namespace cirrl::losses {

/// How the prior network's output parameterises the per-environment Gaussian.
/// diagonal: [mean (k), log-scale (k)]; lower_triangular additionally carries the
/// k(k-1)/2 strictly-lower entries of the Cholesky-style factor, row by row.
enum class PriorScale { diagonal, lower_triangular };

int prior_output_width(int latent_dim, PriorScale scale);

struct EnergyBatch {
  DenseMatrix x;
  DenseMatrix env_onehot;
  int draws = 2;
  /// draws blocks of n rows; row j*n + i feeds draw j of item i.
  DenseMatrix dec_noise;
  DenseMatrix prior_noise;

  Eigen::Index size() const { return x.rows(); }
  void validate() const;

  static EnergyBatch sample(DenseMatrix x, DenseMatrix env_onehot, int draws, int dec_noise_dim,
                            int latent_dim, Rng& rng);
};

/// g(e, xi) = mean(e) + scale(e) xi for every draw block.
DenseMatrix prior_samples(const DenseMatrix& prior_out, const DenseMatrix& xi, int latent_dim, PriorScale scale);

/// Gradient with respect to the prior network output, given gradients on the samples.
DenseMatrix prior_samples_backward(const DenseMatrix& prior_out, const DenseMatrix& xi,
                                   const DenseMatrix& grad_samples, int latent_dim, PriorScale scale);

/// Decoder input rows [z_i, noise_ij], draw-major.
DenseMatrix decoder_input(const DenseMatrix& z, const DenseMatrix& dec_noise, int draws);

struct LossGrads {
  double value = 0.0;
  nn::MlpGrads enc;
  nn::MlpGrads other;  // decoder for the autoencoder loss, prior network for the prior loss
};

LossGrads loss_dpa(nn::Mlp& enc, nn::Mlp& dec, const EnergyBatch& batch, Rng& rng);

LossGrads loss_prior(nn::Mlp& enc, nn::Mlp& prior, const EnergyBatch& batch, Rng& rng,
                     PriorScale scale = PriorScale::diagonal);

struct RlLoss {
  double dpa = 0.0;
  double prior = 0.0;
  double total = 0.0;
  nn::MlpGrads enc;
  nn::MlpGrads dec;
  nn::MlpGrads prior_net;
};

/// dpa + alpha * prior, with one shared encoder pass.
RlLoss loss_rl(nn::Mlp& enc, nn::Mlp& dec, nn::Mlp& prior, const EnergyBatch& batch, double alpha, Rng& rng,
               PriorScale scale = PriorScale::diagonal);

}  // namespace cirrl::losses
