#include "cirrl/repr.hpp"

#include "cirrl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace cirrl::repr {

namespace {

enum : std::uint64_t { kEncSeed = 11, kDecSeed = 12, kPriorSeed = 13, kLoopSeed = 14 };

std::vector<int> hidden_widths(const ReprTrainConfig& cfg) { return std::vector<int>(cfg.depth, cfg.width); }

nn::MlpConfig net_config(int in, int out, const ReprTrainConfig& cfg, std::uint64_t seed) {
  std::vector<int> widths{in};
  for (int w : hidden_widths(cfg)) widths.push_back(w);
  widths.push_back(out);
  return nn::MlpConfig::make(widths, cfg.batch_norm, 0.0, seed);
}

DenseMatrix standardize(const DenseMatrix& x, const Vector& mean, const Vector& scale) {
  DenseMatrix out = x;
  out.rowwise() -= mean.transpose();
  out.array().rowwise() /= scale.transpose().array();
  return out;
}

}  // namespace

void ReprTrainConfig::validate() const {
  if (latent_dim < 1) throw InvalidConfigError("ReprTrainConfig: latent_dim must be at least 1");
  if (epochs < 1) throw InvalidConfigError("ReprTrainConfig: epochs must be at least 1");
  if (width < 1 || depth < 0) throw InvalidConfigError("ReprTrainConfig: bad width or depth");
  if (batch_size < 2) throw InvalidConfigError("ReprTrainConfig: batch_size must be at least 2");
  if (draws < 2) throw InvalidConfigError("ReprTrainConfig: draws must be at least 2");
  if (!(alpha >= 0.0)) throw InvalidConfigError("ReprTrainConfig: alpha must be nonnegative");
  if (!(lr > 0.0)) throw InvalidConfigError("ReprTrainConfig: lr must be positive");
  if (dec_noise_dim < 0) throw InvalidConfigError("ReprTrainConfig: dec_noise_dim must be nonnegative");
}

double ReprModel::final_loss() const {
  if (trace.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t tail = std::max<std::size_t>(1, trace.size() / 10);
  double s = 0.0;
  for (std::size_t i = trace.size() - tail; i < trace.size(); ++i) s += trace[i].rl;
  return s / static_cast<double>(tail);
}

DenseMatrix env_onehot(const std::vector<int>& model_labels, const std::vector<int>& row_labels) {
  DenseMatrix oh = DenseMatrix::Zero(static_cast<Eigen::Index>(row_labels.size()),
                                     static_cast<Eigen::Index>(model_labels.size()));
  for (std::size_t i = 0; i < row_labels.size(); ++i) {
    const auto it = std::find(model_labels.begin(), model_labels.end(), row_labels[i]);
    if (it == model_labels.end()) throw DataError("unknown environment label " + std::to_string(row_labels[i]));
    oh(static_cast<Eigen::Index>(i), it - model_labels.begin()) = 1.0;
  }
  return oh;
}

ReprModel train_representation(const MultiEnvDataset& data, const ReprTrainConfig& cfg) {
  cfg.validate();
  data.validate();
  if (data.envs.size() < 2) throw ContractError("train_representation: need at least two environments");

  ReprModel model;
  model.config = cfg;
  model.env_labels = data.labels();
  std::sort(model.env_labels.begin(), model.env_labels.end());
  const int d = data.dim();
  const int k = cfg.latent_dim;
  const int noise_dim = cfg.dec_noise_dim > 0 ? cfg.dec_noise_dim : d;
  model.config.dec_noise_dim = noise_dim;

  std::vector<DenseMatrix> blocks;
  std::vector<int> row_labels;
  for (const auto& e : data.envs) {
    blocks.push_back(e.x);
    row_labels.insert(row_labels.end(), static_cast<std::size_t>(e.size()), e.label);
  }
  const DenseMatrix pooled_raw = vstack(blocks);
  model.input_mean = column_means(pooled_raw);
  DenseMatrix centered = pooled_raw.rowwise() - model.input_mean.transpose();
  model.input_scale = (centered.array().square().colwise().mean()).sqrt().transpose();
  for (Eigen::Index c = 0; c < model.input_scale.size(); ++c)
    if (!(model.input_scale(c) > 1e-12)) model.input_scale(c) = 1.0;
  const DenseMatrix pooled = standardize(pooled_raw, model.input_mean, model.input_scale);
  const DenseMatrix onehot = env_onehot(model.env_labels, row_labels);
  const int num_envs = static_cast<int>(model.env_labels.size());

  model.enc = nn::mlp_init(net_config(d, k, cfg, derive_seed(cfg.seed, kEncSeed)));
  model.dec = nn::mlp_init(net_config(k + noise_dim, d, cfg, derive_seed(cfg.seed, kDecSeed)));
  model.prior = nn::mlp_init(net_config(num_envs, losses::prior_output_width(k, cfg.prior_scale), cfg,
                                        derive_seed(cfg.seed, kPriorSeed)));
  auto enc_adam = nn::AdamState::for_net(model.enc, cfg.lr);
  auto dec_adam = nn::AdamState::for_net(model.dec, cfg.lr);
  auto prior_adam = nn::AdamState::for_net(model.prior, cfg.lr);

  Rng rng(derive_seed(cfg.seed, kLoopSeed));
  const Eigen::Index n = pooled.rows();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const Eigen::Index bs = std::min<Eigen::Index>(cfg.batch_size, n);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    EpochLoss acc;
    acc.epoch = epoch;
    int batches = 0;
    for (Eigen::Index start = 0; start + 2 <= n; start += bs) {
      const Eigen::Index len = std::min(bs, n - start);
      if (len < 2) break;
      DenseMatrix xb(len, d), ob(len, num_envs);
      for (Eigen::Index i = 0; i < len; ++i) {
        const Eigen::Index r = order[static_cast<std::size_t>(start + i)];
        xb.row(i) = pooled.row(r);
        ob.row(i) = onehot.row(r);
      }
      const auto batch = losses::EnergyBatch::sample(std::move(xb), std::move(ob), cfg.draws, noise_dim, k, rng);
      losses::RlLoss loss = losses::loss_rl(model.enc, model.dec, model.prior, batch, cfg.alpha, rng, cfg.prior_scale);
      if (!std::isfinite(loss.total)) {
        throw DivergedTrainingError("representation training diverged (non-finite loss) in epoch " + std::to_string(epoch), epoch);
      }
      nn::adam_step(model.enc, loss.enc, enc_adam);
      nn::adam_step(model.dec, loss.dec, dec_adam);
      nn::adam_step(model.prior, loss.prior_net, prior_adam);
      acc.dpa += loss.dpa;
      acc.prior += loss.prior;
      acc.rl += loss.total;
      ++batches;
    }
    acc.dpa /= batches;
    acc.prior /= batches;
    acc.rl /= batches;
    model.trace.push_back(acc);
  }
  model.enc.mode = nn::Mode::eval;
  model.dec.mode = nn::Mode::eval;
  model.prior.mode = nn::Mode::eval;
  return model;
}

DenseMatrix encode(const ReprModel& model, const DenseMatrix& x) {
  if (x.cols() != model.input_dim())
    throw ShapeError("encode: X has " + std::to_string(x.cols()) + " columns, model expects " + std::to_string(model.input_dim()));
  return nn::predict(model.enc, standardize(x, model.input_mean, model.input_scale));
}

DenseMatrix sample_reconstruction(const ReprModel& model, const DenseMatrix& x, Rng& rng) {
  const DenseMatrix z = encode(model, x);
  const DenseMatrix noise = rng.normal_matrix(x.rows(), model.dec_noise_dim());
  DenseMatrix out = nn::predict(model.dec, losses::decoder_input(z, noise, 1));
  out.array().rowwise() *= model.input_scale.transpose().array();
  out.rowwise() += model.input_mean.transpose();
  return out;
}

std::vector<SweepRow> latent_dim_sweep(const MultiEnvDataset& data, const ReprTrainConfig& cfg, const std::vector<int>& dims) {
  if (dims.empty()) throw InvalidConfigError("latent_dim_sweep: no dimensions given");
  if (!std::is_sorted(dims.begin(), dims.end()) || std::adjacent_find(dims.begin(), dims.end()) != dims.end())
    throw InvalidConfigError("latent_dim_sweep: dimensions must be strictly ascending");
  std::vector<SweepRow> rows;
  for (int dim : dims) {
    SweepRow row;
    row.dim = dim;
    try {
      ReprTrainConfig c = cfg;
      c.latent_dim = dim;
      row.final_loss = train_representation(data, c).final_loss();
    } catch (const Error& e) {
      row.final_loss = std::numeric_limits<double>::quiet_NaN();
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

Json to_json(const ReprTrainConfig& c) {
  return Json{{"latent_dim", c.latent_dim}, {"width", c.width},       {"depth", c.depth},
              {"alpha", c.alpha},           {"lr", c.lr},             {"epochs", c.epochs},
              {"batch_size", c.batch_size}, {"dec_noise_dim", c.dec_noise_dim},
              {"draws", c.draws},           {"batch_norm", c.batch_norm},
              {"prior_scale", c.prior_scale == losses::PriorScale::diagonal ? "diagonal" : "lower_triangular"},
              {"adam", {{"beta1", 0.9}, {"beta2", 0.999}, {"eps", 1e-8}, {"weight_decay", 0.0}}},
              {"seed", c.seed}};
}

ReprTrainConfig repr_config_from_json(const Json& j) {
  ReprTrainConfig c;
  c.latent_dim = j.at("latent_dim").get<int>();
  c.width = j.at("width").get<int>();
  c.depth = j.at("depth").get<int>();
  c.alpha = j.at("alpha").get<double>();
  c.lr = j.at("lr").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.dec_noise_dim = j.at("dec_noise_dim").get<int>();
  c.draws = j.at("draws").get<int>();
  c.batch_norm = j.at("batch_norm").get<bool>();
  c.prior_scale = j.at("prior_scale").get<std::string>() == "diagonal" ? losses::PriorScale::diagonal
                                                                       : losses::PriorScale::lower_triangular;
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

Json to_json(const ReprModel& m) {
  Json trace_json = Json::array();
  for (const auto& e : m.trace) trace_json.push_back({e.epoch, e.dpa, e.prior, e.rl});
  return Json{{"kind", "cirrl_representation"},
              {"config", to_json(m.config)},
              {"k", m.latent_dim()},
              {"alpha", m.config.alpha},
              {"env_labels", m.env_labels},
              {"input_mean", vector_to_json(m.input_mean)},
              {"input_scale", vector_to_json(m.input_scale)},
              {"final_loss", m.final_loss()},
              {"enc", nn::to_json(m.enc)},
              {"dec", nn::to_json(m.dec)},
              {"prior", nn::to_json(m.prior)},
              {"trace", trace_json}};
}

ReprModel repr_from_json(const Json& j) {
  if (j.value("kind", std::string()) != "cirrl_representation") throw DataError("checkpoint is not a representation model");
  ReprModel m;
  m.config = repr_config_from_json(j.at("config"));
  m.env_labels = j.at("env_labels").get<std::vector<int>>();
  m.input_mean = vector_from_json(j.at("input_mean"));
  m.input_scale = vector_from_json(j.at("input_scale"));
  m.enc = nn::mlp_from_json(j.at("enc"));
  m.dec = nn::mlp_from_json(j.at("dec"));
  m.prior = nn::mlp_from_json(j.at("prior"));
  for (const auto& e : j.value("trace", Json::array()))
    m.trace.push_back({e.at(0).get<int>(), e.at(1).get<double>(), e.at(2).get<double>(), e.at(3).get<double>()});
  return m;
}

std::string trace_csv(const ReprModel& model) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,loss_dpa,loss_g,loss_rl\n";
  for (const auto& e : model.trace) os << e.epoch << ',' << e.dpa << ',' << e.prior << ',' << e.rl << '\n';
  return os.str();
}

}  // namespace cirrl::repr
