#include "cirrl/losses.hpp"

#include "cirrl/errors.hpp"

#include <cmath>

namespace cirrl::losses {

using Index = Eigen::Index;

int prior_output_width(int latent_dim, PriorScale scale) {
  return scale == PriorScale::diagonal ? 2 * latent_dim : 2 * latent_dim + latent_dim * (latent_dim - 1) / 2;
}

void EnergyBatch::validate() const {
  if (draws < 2) throw InvalidConfigError("energy batch: at least 2 noise draws per item are required");
  const Index n = x.rows();
  if (n == 0) throw ShapeError("energy batch: empty");
  if (env_onehot.rows() != n) throw ShapeError("energy batch: one-hot rows differ from X rows");
  for (Index i = 0; i < n; ++i) {
    const double s = env_onehot.row(i).sum();
    if (s != 1.0 || env_onehot.row(i).minCoeff() < 0.0) throw DataError("energy batch: env one-hot row does not sum to 1");
  }
  if (dec_noise.rows() != n * draws || prior_noise.rows() != n * draws)
    throw ShapeError("energy batch: noise must hold draws blocks of n rows");
}

EnergyBatch EnergyBatch::sample(DenseMatrix x, DenseMatrix env_onehot, int draws, int dec_noise_dim,
                                int latent_dim, Rng& rng) {
  if (draws < 2) throw InvalidConfigError("energy batch: at least 2 noise draws per item are required");
  EnergyBatch b;
  const Index n = x.rows();
  b.x = std::move(x);
  b.env_onehot = std::move(env_onehot);
  b.draws = draws;
  b.dec_noise = rng.normal_matrix(n * draws, dec_noise_dim);
  b.prior_noise = rng.normal_matrix(n * draws, latent_dim);
  return b;
}

DenseMatrix prior_samples(const DenseMatrix& prior_out, const DenseMatrix& xi, int k, PriorScale scale) {
  const Index n = prior_out.rows();
  if (prior_out.cols() != prior_output_width(k, scale)) throw ShapeError("prior output width mismatch");
  if (xi.cols() != k || n == 0 || xi.rows() % n != 0) throw ShapeError("prior noise shape mismatch");
  const Index draws = xi.rows() / n;
  DenseMatrix s(xi.rows(), k);
  for (Index j = 0; j < draws; ++j) {
    for (Index i = 0; i < n; ++i) {
      const Index r = j * n + i;
      for (int a = 0; a < k; ++a) {
        double v = prior_out(i, a) + std::exp(prior_out(i, k + a)) * xi(r, a);
        if (scale == PriorScale::lower_triangular) {
          Index off = 2 * k + a * (a - 1) / 2;
          for (int b = 0; b < a; ++b) v += prior_out(i, off + b) * xi(r, b);
        }
        s(r, a) = v;
      }
    }
  }
  return s;
}

DenseMatrix prior_samples_backward(const DenseMatrix& prior_out, const DenseMatrix& xi, const DenseMatrix& grad_samples,
                                   int k, PriorScale scale) {
  const Index n = prior_out.rows();
  if (grad_samples.rows() != xi.rows() || grad_samples.cols() != k) throw ShapeError("prior gradient shape mismatch");
  const Index draws = xi.rows() / n;
  DenseMatrix g = DenseMatrix::Zero(n, prior_out.cols());
  for (Index j = 0; j < draws; ++j) {
    for (Index i = 0; i < n; ++i) {
      const Index r = j * n + i;
      for (int a = 0; a < k; ++a) {
        const double gs = grad_samples(r, a);
        g(i, a) += gs;
        g(i, k + a) += gs * std::exp(prior_out(i, k + a)) * xi(r, a);
        if (scale == PriorScale::lower_triangular) {
          Index off = 2 * k + a * (a - 1) / 2;
          for (int b = 0; b < a; ++b) g(i, off + b) += gs * xi(r, b);
        }
      }
    }
  }
  return g;
}

DenseMatrix decoder_input(const DenseMatrix& z, const DenseMatrix& dec_noise, int draws) {
  const Index n = z.rows(), k = z.cols();
  if (dec_noise.rows() != n * draws) throw ShapeError("decoder noise rows mismatch");
  DenseMatrix in(n * draws, k + dec_noise.cols());
  for (int j = 0; j < draws; ++j) {
    in.block(j * n, 0, n, k) = z;
    in.block(j * n, k, n, dec_noise.cols()) = dec_noise.middleRows(j * n, n);
  }
  return in;
}

namespace {

// Sums the latent part of the decoder input gradient over draws.
DenseMatrix latent_grad_from_decoder(const DenseMatrix& input_grad, Index n, Index k, int draws) {
  DenseMatrix g = DenseMatrix::Zero(n, k);
  for (int j = 0; j < draws; ++j) g += input_grad.block(j * n, 0, n, k);
  return g;
}

}  // namespace

LossGrads loss_dpa(nn::Mlp& enc, nn::Mlp& dec, const EnergyBatch& batch, Rng& rng) {
  batch.validate();
  nn::ForwardCache enc_cache, dec_cache;
  const DenseMatrix z = nn::forward(enc, batch.x, rng, &enc_cache);
  const DenseMatrix out = nn::forward(dec, decoder_input(z, batch.dec_noise, batch.draws), rng, &dec_cache);
  const kernels::EnergyScore es = kernels::energy_score(batch.x, out, batch.draws);
  LossGrads r;
  r.value = es.value;
  nn::Backward bd = nn::backward(dec, dec_cache, es.grad_samples);
  r.other = std::move(bd.params);
  r.enc = nn::backward(enc, enc_cache, latent_grad_from_decoder(bd.input_grad, z.rows(), z.cols(), batch.draws)).params;
  return r;
}

LossGrads loss_prior(nn::Mlp& enc, nn::Mlp& prior, const EnergyBatch& batch, Rng& rng, PriorScale scale) {
  batch.validate();
  if (batch.env_onehot.cols() != prior.input_width()) throw DataError("loss_prior: environment label outside the prior network's range");
  nn::ForwardCache enc_cache, prior_cache;
  const DenseMatrix z = nn::forward(enc, batch.x, rng, &enc_cache);
  const int k = static_cast<int>(z.cols());
  const DenseMatrix g_out = nn::forward(prior, batch.env_onehot, rng, &prior_cache);
  const DenseMatrix s = prior_samples(g_out, batch.prior_noise, k, scale);
  const kernels::EnergyScore es = kernels::energy_score(z, s, batch.draws);
  LossGrads r;
  r.value = es.value;
  r.enc = nn::backward(enc, enc_cache, es.grad_targets).params;
  r.other = nn::backward(prior, prior_cache, prior_samples_backward(g_out, batch.prior_noise, es.grad_samples, k, scale)).params;
  return r;
}

RlLoss loss_rl(nn::Mlp& enc, nn::Mlp& dec, nn::Mlp& prior, const EnergyBatch& batch, double alpha, Rng& rng,
               PriorScale scale) {
  if (!(alpha >= 0.0)) throw InvalidConfigError("loss_rl: alpha must be nonnegative");
  batch.validate();
  if (batch.env_onehot.cols() != prior.input_width()) throw DataError("loss_rl: environment label outside the prior network's range");
  nn::ForwardCache enc_cache, dec_cache, prior_cache;
  const DenseMatrix z = nn::forward(enc, batch.x, rng, &enc_cache);
  const int k = static_cast<int>(z.cols());
  const DenseMatrix out = nn::forward(dec, decoder_input(z, batch.dec_noise, batch.draws), rng, &dec_cache);
  const kernels::EnergyScore es_x = kernels::energy_score(batch.x, out, batch.draws);

  const DenseMatrix g_out = nn::forward(prior, batch.env_onehot, rng, &prior_cache);
  const DenseMatrix s = prior_samples(g_out, batch.prior_noise, k, scale);
  const kernels::EnergyScore es_z = kernels::energy_score(z, s, batch.draws);

  RlLoss r;
  r.dpa = es_x.value;
  r.prior = es_z.value;
  r.total = r.dpa + alpha * r.prior;

  nn::Backward bd = nn::backward(dec, dec_cache, es_x.grad_samples);
  r.dec = std::move(bd.params);
  DenseMatrix grad_z = latent_grad_from_decoder(bd.input_grad, z.rows(), k, batch.draws);
  grad_z += alpha * es_z.grad_targets;
  r.enc = nn::backward(enc, enc_cache, grad_z).params;
  const DenseMatrix grad_g = prior_samples_backward(g_out, batch.prior_noise, alpha * es_z.grad_samples, k, scale);
  r.prior_net = nn::backward(prior, prior_cache, grad_g).params;
  return r;
}

}  // namespace cirrl::losses
