#pragma once

// Step 2: centre latents and responses on the reference environment and fit
// the distributionally robust linear coefficients.

#include "cirrl/dataset.hpp"
#include "cirrl/repr.hpp"
#include "cirrl/serialize.hpp"

#include <vector>

namespace cirrl::drig {

enum class WeightScheme { uniform, proportional };

/// Environment weights in the order of `sizes`; uniform gives 1/|E|, proportional n_e/n.
std::vector<double> make_weights(const std::vector<Eigen::Index>& sizes, WeightScheme scheme);

struct CenteredEnv {
  int label = 0;
  DenseMatrix z;
  Vector y;
  double weight = 0.0;
};

/// envs[0] is always the reference environment (label 0).
struct CenteredEnvData {
  std::vector<CenteredEnv> envs;
  Vector z_mean;
  double y_mean = 0.0;

  int latent_dim() const { return static_cast<int>(z_mean.size()); }
  const CenteredEnv& reference() const { return envs.front(); }
  std::vector<int> labels() const;
  std::vector<double> weights() const;
};

/// Subtracts the reference environment's sample means from every environment.
/// Inputs are parallel lists; weights must be positive and sum to one.
CenteredEnvData center(const std::vector<int>& labels, const std::vector<DenseMatrix>& z,
                       const std::vector<Vector>& y, const std::vector<double>& weights);

struct DrigFit {
  double gamma = 0.0;
  bool eq5_literal = false;
  Vector b_hat;
  std::vector<int> labels;
  std::vector<double> weights;
  /// Per-environment second moments of the centred latents and their cross-moments with Y.
  std::vector<DenseMatrix> grams;
  std::vector<Vector> cross;
  std::vector<double> env_mse;
  double objective = 0.0;
  Vector z_mean;
  double y_mean = 0.0;
};

/// Sample MSE of y - z b in every environment, reference first.
std::vector<double> env_mses(const CenteredEnvData& data, const Vector& b);

/// MSE^0(b) + gamma * sum_e w_e (MSE^e(b) - MSE^0(b)).
double drig_objective(const CenteredEnvData& data, const Vector& b, double gamma);
Vector drig_gradient(const CenteredEnvData& data, const Vector& b, double gamma);

/// Closed-form minimiser. With `eq5_literal` the environment cross-moments pair
/// Z^e with the reference responses instead of Y^e.
DrigFit drig_closed_form(const CenteredEnvData& data, double gamma, bool eq5_literal = false);

struct IterativeFit {
  Vector b;
  std::vector<double> trace;
  int steps = 0;
};

/// Full-batch gradient descent from b = 0; stops early once the gradient norm falls below grad_tol.
IterativeFit drig_fit_iterative(const CenteredEnvData& data, double gamma, int steps, double lr,
                                double grad_tol = 0.0);

/// b^T (z - z_mean), on the centred response scale.
Vector predict_latent(const DrigFit& fit, const DenseMatrix& z);

/// Encoder plus robust linear head.
struct CirrlModel {
  repr::ReprModel repr;
  DrigFit fit;
};

/// Encodes every environment, centres and fits.
CirrlModel fit_cirrl(const repr::ReprModel& repr, const MultiEnvDataset& data, double gamma,
                     WeightScheme weights = WeightScheme::uniform, bool eq5_literal = false);

/// Centred-scale predictions b^T (enc(x) - mean enc(X^0)).
Vector predict(const CirrlModel& model, const DenseMatrix& x);
/// Centred predictions plus the reference response mean.
Vector predict_raw(const CirrlModel& model, const DenseMatrix& x);

Json to_json(const DrigFit& fit);
DrigFit drig_fit_from_json(const Json& j);

}  // namespace cirrl::drig
