#pragma once

// Worst-case risk: the plug-in evaluator, the perturbation bound T, an
// analytic sup oracle for linear worlds, the elliptical conditional
// expectation check and out-of-distribution scoring.

#include "cirrl/dataset.hpp"
#include "cirrl/scm.hpp"

#include <functional>
#include <string>
#include <vector>

namespace cirrl::robust {

/// mse[0] is the reference environment; weights range over all environments.
double plugin_risk(const std::vector<double>& mse, const std::vector<double>& weights, double gamma);

/// Raw-scale predictions for a block of inputs.
using Predictor = std::function<Vector(const DenseMatrix&)>;

double mse(const Vector& pred, const Vector& y);

/// Per-environment MSE of a raw-scale predictor, reference environment first.
struct EnvMse {
  std::vector<int> labels;
  std::vector<double> mse;
};
EnvMse env_mses(const Predictor& f, const MultiEnvDataset& data);

/// Plug-in worst-case risk with weights over all environments (reference first).
double worst_case_plugin(const Predictor& f, const MultiEnvDataset& data, const std::vector<double>& weights, double gamma);

struct UncertaintyBound {
  double gamma = 0.0;
  DenseMatrix t;

  /// Smallest eigenvalue of T - second_moment.
  double slack(const DenseMatrix& second_moment) const;
  /// T - second_moment is PSD up to -tol.
  bool contains(const DenseMatrix& second_moment, double tol = 1e-8) const;
};

/// moments[0] is the reference environment's perturbation law.
UncertaintyBound uncertainty_bound(const std::vector<scm::EnvIntervention>& moments, const std::vector<double>& weights,
                                   double gamma);
/// Generator moments with uniform weights over all environments and a zero reference perturbation.
UncertaintyBound uncertainty_bound(const scm::ScmSystem& sys, double gamma);

/// Residual direction w with Y - b^T Z = w^T (eps + delta).
Vector residual_direction(const scm::ScmSystem& sys, const Vector& b);

/// Population per-environment MSEs of the linear predictor b^T z_c in a generated world, reference first.
std::vector<double> population_env_mses(const scm::ScmSystem& sys, const Vector& b);

struct SupOracle {
  double unperturbed = 0.0;
  double analytic = 0.0;
  /// Best value over the deterministic candidate set (excluding the optimal direction).
  double candidate_max = 0.0;
  /// Value at u proportional to T^{1/2} w.
  double at_optimum = 0.0;
  int candidates = 0;
};

SupOracle mc_sup_oracle(const scm::ScmSystem& sys, const Vector& b, const DenseMatrix& t, int candidates = 1000,
                        std::uint64_t seed = 0);

enum class Elliptical { gaussian, student_t };

/// Max absolute entry error between the sample slope of X on [1, MX] and Sigma M^T (M Sigma M^T)^{-1}.
double elliptical_condexp_oracle(const DenseMatrix& sigma, const DenseMatrix& m, Elliptical family, double nu,
                                 Eigen::Index n, std::uint64_t seed);

double ood_mse(const Predictor& f, const EnvData& test);

struct AffineLink {
  /// learned ~= n * true + m
  DenseMatrix n;
  Vector m;
  /// R^2 of each learned coordinate regressed on the true latents.
  std::vector<double> r2;
  /// R^2 of each true coordinate regressed on the learned latents.
  std::vector<double> r2_inverse;
  double condition = 0.0;
};

AffineLink fit_affine_link(const DenseMatrix& z_true, const DenseMatrix& z_learned);

struct RobustnessRow {
  double gamma = 0.0;
  double plugin_risk = 0.0;
  std::vector<double> env_mse;
  std::string ood_family;
  double ood_mse = 0.0;
};

struct RobustnessReport {
  std::string model;
  std::string dataset;
  std::vector<int> labels;
  std::vector<RobustnessRow> rows;

  /// Nonnegative risks, gamma nondecreasing along rows and strictly increasing across distinct values.
  void validate() const;
  /// `model,dataset,gamma,plugin_risk,mse_env_<label>...,ood_family,ood_mse`
  std::string to_csv() const;
};

}  // namespace cirrl::robust
