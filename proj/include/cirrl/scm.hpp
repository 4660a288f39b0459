#pragma once

// Ground-truth generator: a random linear SCM over (Z, Y), additive random
// interventions per environment, and a nonlinear map from Z to observed X.

#include "cirrl/dataset.hpp"
#include "cirrl/linalg.hpp"
#include "cirrl/nn.hpp"
#include "cirrl/rng.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cirrl::scm {

/// Additive intervention law delta ~ N(mean, cov).
struct EnvIntervention {
  Vector mean;
  DenseMatrix cov;
};

enum class DecoderKind { polynomial, relu_net };

struct DecoderSpec {
  DecoderKind kind = DecoderKind::polynomial;
  int degree = 2;
  std::vector<int> widths{64, 64};
};

/// Map from latent Z (k) to observed X (d).
class DecoderFn {
 public:
  /// coeff is d x feature_count(k, degree); features are the monomials of degree 1..degree.
  static DecoderFn polynomial(int latent_dim, int degree, DenseMatrix coeff);
  static DecoderFn relu_net(nn::Mlp net);

  static int feature_count(int latent_dim, int degree);
  /// Monomial features of each row of z, ordered by degree then lexicographically.
  static DenseMatrix features(const DenseMatrix& z, int degree);

  DenseMatrix apply(const DenseMatrix& z) const;
  /// d x k Jacobian at one latent point.
  DenseMatrix jacobian(const Vector& z) const;

  DecoderKind kind() const { return kind_; }
  int latent_dim() const { return latent_dim_; }
  int output_dim() const { return output_dim_; }
  int degree() const { return degree_; }
  const DenseMatrix& coeff() const { return coeff_; }
  const nn::Mlp& net() const { return *net_; }

 private:
  DecoderKind kind_ = DecoderKind::polynomial;
  int latent_dim_ = 0;
  int output_dim_ = 0;
  int degree_ = 1;
  DenseMatrix coeff_;
  std::vector<std::vector<int>> exponents_;
  std::optional<nn::Mlp> net_;
};

struct ScmSystem {
  int k = 0;
  int d = 0;
  /// (k+1)x(k+1); entry (i, j) is the weight of j -> i, nonzero only for i > j.
  DenseMatrix adjacency;
  /// (I - B)^{-1}; rows 0..k-1 give Z, row k gives Y.
  DenseMatrix total_effect;
  DenseMatrix eps_cov;
  DecoderFn decoder;
  bool exclude_y_interventions = false;
  /// Intervention laws of environments 1..num_envs-1.
  std::vector<EnvIntervention> interventions;
  int num_envs = 0;
};

enum class NoiseFamily { gaussian, student_t, chi2 };

std::string to_string(NoiseFamily f);
NoiseFamily noise_family_from_string(const std::string& s);

struct GenConfig {
  int k = 2;
  int d = 10;
  /// Including the observational environment.
  int num_envs = 5;
  int n_per_env = 2000;
  DecoderSpec decoder;
  double eta = 10.0;
  NoiseFamily noise_family = NoiseFamily::gaussian;
  double nu = 5.0;
  std::optional<Vector> mu_v;
  bool exclude_y = false;
  bool enforce_assumption1 = false;
  /// When the default test mean makes the test covariance indefinite, shrink
  /// the mean onto the feasible boundary instead of failing. Never applied to
  /// an explicit mu_v.
  bool shrink_default_mean = true;
  std::uint64_t seed = 0;

  void validate() const;
};

struct DagSkeleton {
  DenseMatrix adjacency;
  DenseMatrix total_effect;
};

/// Random DAG over k+1 nodes: every ordered pair is an edge with probability 1/2,
/// kept only when it points from a lower to a higher index; weights N(0,1).
DagSkeleton sample_dag(int k, std::uint64_t seed);

/// Gram matrix of a Gaussian square matrix scaled to spectral norm 1.
DenseMatrix psd_norm1(int dim, std::uint64_t seed);
DenseMatrix psd_norm1(int dim, Rng& rng);

/// (eta / num_envs) * sum_e (cov_e + mean_e mean_e^T). num_envs defaults to the list size.
DenseMatrix xi_eta(const std::vector<EnvIntervention>& interventions, double eta, int num_envs = -1);

/// Throws GenerationError when no acceptable random decoder is found in 20 tries.
DecoderFn make_decoder(const DecoderSpec& spec, int k, int d, std::uint64_t seed);

struct GeneratedData {
  ScmSystem system;
  MultiEnvDataset data;
};

GeneratedData generate_train(const GenConfig& cfg);

/// Test-time intervention v and the law it was drawn from.
struct TestEnvironment {
  EnvData data;
  NoiseFamily family = NoiseFamily::gaussian;
  double eta = 0.0;
  Vector mu_v;
  /// Covariance of the Gaussian part of v (before any t / chi2 transform).
  DenseMatrix v_cov;
  DenseMatrix xi;
  /// Factor applied to the default mean to keep v_cov PSD (1 when untouched).
  double mean_shrink = 1.0;
  int chi2_dof = 0;
};

/// Mean and covariance of the test intervention implied by `cfg` (exposed for audits).
struct TestMoments {
  Vector mu_v;
  DenseMatrix v_cov;
  DenseMatrix xi;
  double mean_shrink = 1.0;
};
TestMoments test_moments(const ScmSystem& sys, const GenConfig& cfg);

TestEnvironment generate_test(const ScmSystem& sys, const GenConfig& cfg, int n, std::uint64_t seed);

/// Samples rows of N(mean, cov) for PSD (possibly singular) cov.
DenseMatrix sample_gaussian(const Vector& mean, const DenseMatrix& cov, Eigen::Index n, Rng& rng);

/// Latent/response rows (Z, Y) = C u for each row u of `node_noise`.
DenseMatrix propagate(const ScmSystem& sys, const DenseMatrix& node_noise);

}  // namespace cirrl::scm
