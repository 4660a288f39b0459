#include "cirrl/baselines.hpp"

#include "cirrl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace cirrl::baselines {

namespace {

enum : std::uint64_t { kNetSeed = 21, kLoopSeed = 22 };

BaselineModel fit(const MultiEnvDataset& data, const BaselineConfig& cfg, double lambda) {
  cfg.validate();
  data.validate();
  const int d = data.dim();
  BaselineModel model;
  model.config = cfg;

  std::vector<DenseMatrix> xs;
  std::vector<int> env_of_row;
  Vector y(data.total_size());
  Eigen::Index off = 0;
  for (std::size_t e = 0; e < data.envs.size(); ++e) {
    xs.push_back(data.envs[e].x);
    y.segment(off, data.envs[e].size()) = data.envs[e].y;
    off += data.envs[e].size();
    env_of_row.insert(env_of_row.end(), static_cast<std::size_t>(data.envs[e].size()), static_cast<int>(e));
  }
  DenseMatrix x = vstack(xs);
  if (x.rows() == 0) throw ContractError("baseline training: no data");
  model.x_mean = column_means(x);
  x.rowwise() -= model.x_mean.transpose();
  model.x_scale = x.array().square().colwise().mean().sqrt().transpose();
  for (Eigen::Index c = 0; c < model.x_scale.size(); ++c)
    if (!(model.x_scale(c) > 1e-12)) model.x_scale(c) = 1.0;
  x.array().rowwise() /= model.x_scale.transpose().array();
  model.y_mean = y.mean();
  const double ysd = std::sqrt((y.array() - model.y_mean).square().mean());
  model.y_scale = ysd > 1e-12 ? ysd : 1.0;
  y = (y.array() - model.y_mean) / model.y_scale;

  std::vector<int> widths{d};
  widths.insert(widths.end(), static_cast<std::size_t>(cfg.depth), cfg.width);
  widths.push_back(1);
  model.net = nn::mlp_init(nn::MlpConfig::make(widths, cfg.batch_norm, cfg.dropout_p, derive_seed(cfg.seed, kNetSeed)));
  auto adam = nn::AdamState::for_net(model.net, cfg.lr);
  Rng rng(derive_seed(cfg.seed, kLoopSeed));

  const Eigen::Index n = x.rows();
  const int num_envs = static_cast<int>(data.envs.size());
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const Eigen::Index bs = std::min<Eigen::Index>(cfg.batch_size, n);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    BaselineEpoch acc;
    acc.epoch = epoch;
    int batches = 0;
    for (Eigen::Index start = 0; start + 2 <= n; start += bs) {
      const Eigen::Index len = std::min(bs, n - start);
      if (len < 2) break;
      DenseMatrix xb(len, d);
      Vector yb(len);
      std::vector<int> eb(static_cast<std::size_t>(len));
      for (Eigen::Index i = 0; i < len; ++i) {
        const Eigen::Index r = order[static_cast<std::size_t>(start + i)];
        xb.row(i) = x.row(r);
        yb(i) = y(r);
        eb[static_cast<std::size_t>(i)] = env_of_row[static_cast<std::size_t>(r)];
      }
      nn::ForwardCache cache;
      const Vector f = nn::forward(model.net, xb, rng, &cache).col(0);
      const Vector resid = f - yb;
      const double risk = resid.squaredNorm() / static_cast<double>(len);
      Vector grad = 2.0 / static_cast<double>(len) * resid;
      double penalty = 0.0;
      if (lambda > 0.0) {
        const auto p = irm_penalty(f, yb, eb, num_envs);
        penalty = p.value;
        grad += lambda * p.grad;
      }
      const double total = risk + lambda * penalty;
      if (!std::isfinite(total)) {
        throw DivergedTrainingError(to_string(cfg.kind) + " training diverged (non-finite loss) in epoch " + std::to_string(epoch),
                                    epoch);
      }
      const auto back = nn::backward(model.net, cache, DenseMatrix(grad));
      nn::adam_step(model.net, back.params, adam);
      acc.risk += risk;
      acc.penalty += penalty;
      ++batches;
    }
    acc.risk /= batches;
    acc.penalty /= batches;
    model.trace.push_back(acc);
  }
  model.net.mode = nn::Mode::eval;
  return model;
}

}  // namespace

std::string to_string(BaselineKind k) { return k == BaselineKind::erm ? "erm" : "irm"; }

BaselineConfig BaselineConfig::erm() { return BaselineConfig{}; }

BaselineConfig BaselineConfig::irm(double lambda) {
  BaselineConfig c;
  c.kind = BaselineKind::irm;
  c.lambda = lambda;
  return c;
}

void BaselineConfig::validate() const {
  if (kind == BaselineKind::irm && !(lambda >= 0.0)) throw InvalidConfigError("BaselineConfig: lambda must be nonnegative");
  if (width < 1 || depth < 0) throw InvalidConfigError("BaselineConfig: bad width or depth");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw InvalidConfigError("BaselineConfig: dropout_p must lie in [0, 1)");
  if (!(lr > 0.0)) throw InvalidConfigError("BaselineConfig: lr must be positive");
  if (epochs < 1) throw InvalidConfigError("BaselineConfig: epochs must be at least 1");
  if (batch_size < 2) throw InvalidConfigError("BaselineConfig: batch_size must be at least 2");
}

IrmPenalty irm_penalty(const Vector& f, const Vector& y, const std::vector<int>& env_index, int num_envs) {
  if (f.size() != y.size() || static_cast<std::size_t>(f.size()) != env_index.size())
    throw ShapeError("irm_penalty: lengths differ");
  std::vector<double> sum(static_cast<std::size_t>(num_envs), 0.0);
  std::vector<int> count(static_cast<std::size_t>(num_envs), 0);
  for (Eigen::Index i = 0; i < f.size(); ++i) {
    const int e = env_index[static_cast<std::size_t>(i)];
    if (e < 0 || e >= num_envs) throw ShapeError("irm_penalty: environment index out of range");
    sum[static_cast<std::size_t>(e)] += (f(i) - y(i)) * f(i);
    ++count[static_cast<std::size_t>(e)];
  }
  IrmPenalty out;
  std::vector<double> deriv(static_cast<std::size_t>(num_envs), 0.0);
  for (int e = 0; e < num_envs; ++e) {
    const auto u = static_cast<std::size_t>(e);
    if (count[u] > 0) deriv[u] = 2.0 * sum[u] / count[u];
    out.per_env.push_back(deriv[u] * deriv[u]);
    out.value += deriv[u] * deriv[u];
  }
  out.grad.resize(f.size());
  for (Eigen::Index i = 0; i < f.size(); ++i) {
    const auto u = static_cast<std::size_t>(env_index[static_cast<std::size_t>(i)]);
    out.grad(i) = 2.0 * deriv[u] * (2.0 / count[u]) * (2.0 * f(i) - y(i));
  }
  return out;
}

BaselineModel train_erm(const MultiEnvDataset& data, const BaselineConfig& cfg) { return fit(data, cfg, 0.0); }

BaselineModel train_irm(const MultiEnvDataset& data, const BaselineConfig& cfg) {
  if (data.envs.size() < 2) throw ContractError("train_irm: need at least two environments");
  return fit(data, cfg, cfg.lambda);
}

Vector predict(const BaselineModel& model, const DenseMatrix& x) {
  if (x.cols() != model.x_mean.size()) throw ShapeError("baseline predict: wrong input width");
  DenseMatrix xs = x.rowwise() - model.x_mean.transpose();
  xs.array().rowwise() /= model.x_scale.transpose().array();
  return (nn::predict(model.net, xs).col(0).array() * model.y_scale + model.y_mean).matrix();
}

Json to_json(const BaselineModel& m) {
  const auto& c = m.config;
  Json trace_json = Json::array();
  for (const auto& e : m.trace) trace_json.push_back({e.epoch, e.risk, e.penalty});
  return Json{{"kind", "cirrl_baseline"},
              {"config",
               {{"method", to_string(c.kind)},
                {"lambda", c.lambda},
                {"width", c.width},
                {"depth", c.depth},
                {"batch_norm", c.batch_norm},
                {"dropout_p", c.dropout_p},
                {"lr", c.lr},
                {"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"lambda_schedule", "constant"},
                {"adam", {{"beta1", 0.9}, {"beta2", 0.999}, {"eps", 1e-8}, {"weight_decay", 0.0}}},
                {"seed", c.seed}}},
              {"x_mean", vector_to_json(m.x_mean)},
              {"x_scale", vector_to_json(m.x_scale)},
              {"y_mean", m.y_mean},
              {"y_scale", m.y_scale},
              {"net", nn::to_json(m.net)},
              {"trace", trace_json}};
}

BaselineModel baseline_from_json(const Json& j) {
  if (j.value("kind", std::string()) != "cirrl_baseline") throw DataError("checkpoint is not a baseline model");
  BaselineModel m;
  const auto& c = j.at("config");
  m.config.kind = c.at("method").get<std::string>() == "irm" ? BaselineKind::irm : BaselineKind::erm;
  m.config.lambda = c.at("lambda").get<double>();
  m.config.width = c.at("width").get<int>();
  m.config.depth = c.at("depth").get<int>();
  m.config.batch_norm = c.at("batch_norm").get<bool>();
  m.config.dropout_p = c.at("dropout_p").get<double>();
  m.config.lr = c.at("lr").get<double>();
  m.config.epochs = c.at("epochs").get<int>();
  m.config.batch_size = c.at("batch_size").get<int>();
  m.config.seed = c.at("seed").get<std::uint64_t>();
  m.x_mean = vector_from_json(j.at("x_mean"));
  m.x_scale = vector_from_json(j.at("x_scale"));
  m.y_mean = j.at("y_mean").get<double>();
  m.y_scale = j.at("y_scale").get<double>();
  m.net = nn::mlp_from_json(j.at("net"));
  for (const auto& e : j.value("trace", Json::array()))
    m.trace.push_back({e.at(0).get<int>(), e.at(1).get<double>(), e.at(2).get<double>()});
  return m;
}

std::string trace_csv(const BaselineModel& model) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,risk,penalty\n";
  for (const auto& e : model.trace) os << e.epoch << ',' << e.risk << ',' << e.penalty << '\n';
  return os.str();
}

}  // namespace cirrl::baselines
