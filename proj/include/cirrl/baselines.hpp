#pragma once

// Direct X -> Y regressors: pooled least squares (ERM) and the IRMv1 penalty.

#include "cirrl/dataset.hpp"
#include "cirrl/nn.hpp"
#include "cirrl/serialize.hpp"

#include <string>
#include <vector>

namespace cirrl::baselines {

enum class BaselineKind { erm, irm };

std::string to_string(BaselineKind k);

struct BaselineConfig {
  BaselineKind kind = BaselineKind::erm;
  double lambda = 100.0;
  int width = 400;
  int depth = 2;
  bool batch_norm = true;
  double dropout_p = 0.25;
  double lr = 1e-4;
  int epochs = 1000;
  int batch_size = 256;
  std::uint64_t seed = 0;

  static BaselineConfig erm();
  static BaselineConfig irm(double lambda = 100.0);
  void validate() const;
};

struct BaselineEpoch {
  int epoch = 0;
  double risk = 0.0;
  double penalty = 0.0;
};

struct BaselineModel {
  BaselineConfig config;
  nn::Mlp net;
  Vector x_mean;
  Vector x_scale;
  double y_mean = 0.0;
  double y_scale = 1.0;
  std::vector<BaselineEpoch> trace;
};

/// Pooled MSE, environment labels ignored.
BaselineModel train_erm(const MultiEnvDataset& data, const BaselineConfig& cfg);
/// Pooled MSE plus lambda times the IRMv1 penalty; lambda = 0 follows the ERM path exactly.
BaselineModel train_irm(const MultiEnvDataset& data, const BaselineConfig& cfg);

/// Raw-scale predictions.
Vector predict(const BaselineModel& model, const DenseMatrix& x);

struct IrmPenalty {
  double value = 0.0;
  std::vector<double> per_env;
  /// d value / d f_i
  Vector grad;
};

/// sum_e (d/dw MSE_e(w f) at w = 1)^2 for predictions f grouped by `env_index` (0..num_envs-1).
IrmPenalty irm_penalty(const Vector& f, const Vector& y, const std::vector<int>& env_index, int num_envs);

Json to_json(const BaselineModel& model);
BaselineModel baseline_from_json(const Json& j);

/// `epoch,risk,penalty` rows.
std::string trace_csv(const BaselineModel& model);

}  // namespace cirrl::baselines
