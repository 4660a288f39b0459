#include "cirrl/drig.hpp"

#include "cirrl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cirrl::drig {

namespace {

constexpr double kWeightTol = 1e-12;
constexpr double kRankTol = 1e-10;

void check_weights(const std::vector<double>& w) {
  double s = 0.0;
  for (double v : w) {
    if (!(v > 0.0)) throw InvalidConfigError("environment weights must be positive");
    s += v;
  }
  if (std::abs(s - 1.0) > kWeightTol) throw InvalidConfigError("environment weights sum to " + std::to_string(s) + ", not 1");
}

}  // namespace

std::vector<double> make_weights(const std::vector<Eigen::Index>& sizes, WeightScheme scheme) {
  if (sizes.empty()) throw InvalidConfigError("make_weights: no environments");
  std::vector<double> w(sizes.size());
  if (scheme == WeightScheme::uniform) {
    std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(sizes.size()));
  } else {
    const double total = static_cast<double>(std::accumulate(sizes.begin(), sizes.end(), Eigen::Index{0}));
    for (std::size_t i = 0; i < sizes.size(); ++i) w[i] = static_cast<double>(sizes[i]) / total;
  }
  return w;
}

std::vector<int> CenteredEnvData::labels() const {
  std::vector<int> out;
  for (const auto& e : envs) out.push_back(e.label);
  return out;
}

std::vector<double> CenteredEnvData::weights() const {
  std::vector<double> out;
  for (const auto& e : envs) out.push_back(e.weight);
  return out;
}

CenteredEnvData center(const std::vector<int>& labels, const std::vector<DenseMatrix>& z,
                       const std::vector<Vector>& y, const std::vector<double>& weights) {
  if (labels.size() != z.size() || labels.size() != y.size() || labels.size() != weights.size())
    throw ShapeError("center: labels, latents, responses and weights must have equal length");
  check_weights(weights);
  const auto ref = std::find(labels.begin(), labels.end(), 0);
  if (ref == labels.end()) throw ContractError("center: reference environment 0 is missing");
  const std::size_t r = static_cast<std::size_t>(ref - labels.begin());
  if (z[r].rows() < 2) throw ContractError("center: reference environment needs at least two rows");

  CenteredEnvData out;
  out.z_mean = column_means(z[r]);
  out.y_mean = y[r].mean();
  std::vector<std::size_t> order{r};
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (i != r) order.push_back(i);
  for (std::size_t i : order) {
    if (z[i].rows() != y[i].size()) throw ShapeError("center: latent and response row counts differ");
    if (z[i].cols() != out.z_mean.size()) throw ShapeError("center: latent widths differ across environments");
    CenteredEnv e;
    e.label = labels[i];
    e.z = z[i].rowwise() - out.z_mean.transpose();
    e.y = y[i].array() - out.y_mean;
    e.weight = weights[i];
    out.envs.push_back(std::move(e));
  }
  return out;
}

std::vector<double> env_mses(const CenteredEnvData& data, const Vector& b) {
  if (b.size() != data.latent_dim()) throw ShapeError("env_mses: coefficient length differs from latent width");
  std::vector<double> out;
  for (const auto& e : data.envs) out.push_back((e.y - e.z * b).squaredNorm() / static_cast<double>(e.y.size()));
  return out;
}

double drig_objective(const CenteredEnvData& data, const Vector& b, double gamma) {
  const auto mse = env_mses(data, b);
  double s = 0.0;
  for (std::size_t i = 0; i < mse.size(); ++i) s += data.envs[i].weight * (mse[i] - mse[0]);
  return mse[0] + gamma * s;
}

Vector drig_gradient(const CenteredEnvData& data, const Vector& b, double gamma) {
  if (b.size() != data.latent_dim()) throw ShapeError("drig_gradient: coefficient length differs from latent width");
  std::vector<Vector> g;
  for (const auto& e : data.envs) {
    const Vector resid = e.y - e.z * b;
    g.push_back(-2.0 / static_cast<double>(e.y.size()) * (e.z.transpose() * resid));
  }
  Vector out = g[0];
  for (std::size_t i = 0; i < g.size(); ++i) out += gamma * data.envs[i].weight * (g[i] - g[0]);
  return out;
}

DrigFit drig_closed_form(const CenteredEnvData& data, double gamma, bool eq5_literal) {
  if (!(gamma >= 0.0)) throw InvalidConfigError("drig: gamma must be nonnegative");
  check_weights(data.weights());
  const int k = data.latent_dim();
  DrigFit fit;
  fit.gamma = gamma;
  fit.eq5_literal = eq5_literal;
  fit.labels = data.labels();
  fit.weights = data.weights();
  fit.z_mean = data.z_mean;
  fit.y_mean = data.y_mean;

  const auto& ref = data.reference();
  for (const auto& e : data.envs) {
    const double n = static_cast<double>(e.z.rows());
    DenseMatrix gram = e.z.transpose() * e.z / n;
    fit.grams.push_back(symmetrize(gram));
    if (eq5_literal) {
      const Eigen::Index m = std::min(e.z.rows(), ref.z.rows());
      fit.cross.push_back(e.z.topRows(m).transpose() * ref.y.head(m) / static_cast<double>(m));
    } else {
      fit.cross.push_back(e.z.transpose() * e.y / n);
    }
  }
  DenseMatrix a = DenseMatrix::Zero(k, k);
  Vector rhs = Vector::Zero(k);
  for (std::size_t i = 0; i < data.envs.size(); ++i) {
    const double w = gamma * data.envs[i].weight;
    a += w * fit.grams[i];
    rhs += w * fit.cross[i];
  }
  a += (1.0 - gamma) * fit.grams[0];
  rhs += (1.0 - gamma) * fit.cross[0];
  fit.b_hat = checked_solve(a, rhs, kRankTol, "drig: weighted Gram combination");
  fit.env_mse = env_mses(data, fit.b_hat);
  fit.objective = drig_objective(data, fit.b_hat, gamma);
  return fit;
}

IterativeFit drig_fit_iterative(const CenteredEnvData& data, double gamma, int steps, double lr, double grad_tol) {
  if (steps < 1 || !(lr > 0.0)) throw InvalidConfigError("drig_fit_iterative: need steps >= 1 and lr > 0");
  IterativeFit out;
  out.b = Vector::Zero(data.latent_dim());
  double prev = drig_objective(data, out.b, gamma);
  out.trace.push_back(prev);
  int rising = 0;
  for (int s = 0; s < steps; ++s) {
    const Vector g = drig_gradient(data, out.b, gamma);
    if (g.norm() <= grad_tol) break;
    out.b -= lr * g;
    const double cur = drig_objective(data, out.b, gamma);
    out.trace.push_back(cur);
    ++out.steps;
    rising = cur > prev ? rising + 1 : 0;
    if (rising >= 50 || !std::isfinite(cur))
      throw StepSizeError("drig_fit_iterative: objective increased for 50 consecutive steps; reduce lr");
    prev = cur;
  }
  return out;
}

Vector predict_latent(const DrigFit& fit, const DenseMatrix& z) {
  if (z.cols() != fit.b_hat.size()) throw ShapeError("predict: latent width differs from coefficient length");
  return (z.rowwise() - fit.z_mean.transpose()) * fit.b_hat;
}

CirrlModel fit_cirrl(const repr::ReprModel& repr, const MultiEnvDataset& data, double gamma, WeightScheme scheme,
                     bool eq5_literal) {
  data.validate();
  std::vector<int> labels;
  std::vector<DenseMatrix> z;
  std::vector<Vector> y;
  std::vector<Eigen::Index> sizes;
  for (const auto& e : data.envs) {
    labels.push_back(e.label);
    z.push_back(repr::encode(repr, e.x));
    y.push_back(e.y);
    sizes.push_back(e.size());
  }
  const auto centered = center(labels, z, y, make_weights(sizes, scheme));
  return CirrlModel{repr, drig_closed_form(centered, gamma, eq5_literal)};
}

Vector predict(const CirrlModel& model, const DenseMatrix& x) { return predict_latent(model.fit, repr::encode(model.repr, x)); }

Vector predict_raw(const CirrlModel& model, const DenseMatrix& x) {
  return predict(model, x).array() + model.fit.y_mean;
}

Json to_json(const DrigFit& fit) {
  Json grams = Json::array(), cross = Json::array();
  for (const auto& g : fit.grams) grams.push_back(matrix_to_json(g));
  for (const auto& c : fit.cross) cross.push_back(vector_to_json(c));
  return Json{{"gamma", fit.gamma},
              {"eq5_literal", fit.eq5_literal},
              {"b_hat", vector_to_json(fit.b_hat)},
              {"labels", fit.labels},
              {"weights", fit.weights},
              {"env_mse", fit.env_mse},
              {"objective", fit.objective},
              {"centering", {{"z_mean", vector_to_json(fit.z_mean)}, {"y_mean", fit.y_mean}}},
              {"grams", grams},
              {"cross", cross}};
}

DrigFit drig_fit_from_json(const Json& j) {
  DrigFit fit;
  fit.gamma = j.at("gamma").get<double>();
  fit.eq5_literal = j.at("eq5_literal").get<bool>();
  fit.b_hat = vector_from_json(j.at("b_hat"));
  fit.labels = j.at("labels").get<std::vector<int>>();
  fit.weights = j.at("weights").get<std::vector<double>>();
  fit.env_mse = j.at("env_mse").get<std::vector<double>>();
  fit.objective = j.at("objective").get<double>();
  fit.z_mean = vector_from_json(j.at("centering").at("z_mean"));
  fit.y_mean = j.at("centering").at("y_mean").get<double>();
  for (const auto& g : j.at("grams")) fit.grams.push_back(matrix_from_json(g));
  for (const auto& c : j.at("cross")) fit.cross.push_back(vector_from_json(c));
  return fit;
}

}  // namespace cirrl::drig
