#include "cirrl/serialize.hpp"

#include "cirrl/errors.hpp"

namespace cirrl {

Json matrix_to_json(const DenseMatrix& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return Json{{"rows", m.rows()}, {"cols", m.cols()}, {"values", std::move(rows)}};
}

DenseMatrix matrix_from_json(const Json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const Json& values = j.at("values");
  if (static_cast<Eigen::Index>(values.size()) != rows) throw DataError("matrix json: row count mismatch");
  DenseMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const Json& row = values[static_cast<std::size_t>(i)];
    if (static_cast<Eigen::Index>(row.size()) != cols) throw DataError("matrix json: column count mismatch");
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

Json vector_to_json(const Vector& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

Vector vector_from_json(const Json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

namespace nn {

Json to_json(const Mlp& net) {
  Json config{{"layer_widths", net.config.layer_widths},
              {"hidden_activation", net.config.hidden_activation == Activation::relu ? "relu" : "identity"},
              {"batch_norm", net.config.batch_norm},
              {"dropout_p", net.config.dropout_p},
              {"seed", net.config.seed}};
  Json layers = Json::array();
  for (const auto& l : net.layers) layers.push_back({{"weight", matrix_to_json(l.weight)}, {"bias", vector_to_json(l.bias)}});
  Json norms = Json::array();
  for (const auto& bn : net.norms) {
    if (!bn) {
      norms.push_back(nullptr);
      continue;
    }
    norms.push_back({{"scale", vector_to_json(bn->scale)},
                     {"shift", vector_to_json(bn->shift)},
                     {"running_mean", vector_to_json(bn->running_mean)},
                     {"running_var", vector_to_json(bn->running_var)}});
  }
  return Json{{"config", config},
              {"mode", net.mode == Mode::train ? "train" : "eval"},
              {"layers", layers},
              {"batch_norm", norms}};
}

Mlp mlp_from_json(const Json& j) {
  MlpConfig config;
  const Json& c = j.at("config");
  config.layer_widths = c.at("layer_widths").get<std::vector<int>>();
  config.hidden_activation = c.at("hidden_activation").get<std::string>() == "relu" ? Activation::relu : Activation::identity;
  config.batch_norm = c.at("batch_norm").get<std::vector<bool>>();
  config.dropout_p = c.at("dropout_p").get<double>();
  config.seed = c.at("seed").get<std::uint64_t>();
  Mlp net = mlp_init(config);
  const Json& layers = j.at("layers");
  if (layers.size() != net.layers.size()) throw DataError("mlp json: layer count mismatch");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    DenseMatrix w = matrix_from_json(layers[l].at("weight"));
    Vector b = vector_from_json(layers[l].at("bias"));
    if (w.rows() != net.layers[l].weight.rows() || w.cols() != net.layers[l].weight.cols() ||
        b.size() != net.layers[l].bias.size())
      throw DataError("mlp json: layer shape mismatch");
    net.layers[l].weight = std::move(w);
    net.layers[l].bias = std::move(b);
  }
  const Json& norms = j.at("batch_norm");
  if (norms.size() != net.norms.size()) throw DataError("mlp json: batch-norm count mismatch");
  for (std::size_t h = 0; h < norms.size(); ++h) {
    if (norms[h].is_null() != !net.norms[h].has_value()) throw DataError("mlp json: batch-norm layout mismatch");
    if (norms[h].is_null()) continue;
    net.norms[h]->scale = vector_from_json(norms[h].at("scale"));
    net.norms[h]->shift = vector_from_json(norms[h].at("shift"));
    net.norms[h]->running_mean = vector_from_json(norms[h].at("running_mean"));
    net.norms[h]->running_var = vector_from_json(norms[h].at("running_var"));
  }
  net.mode = j.value("mode", std::string("eval")) == "train" ? Mode::train : Mode::eval;
  return net;
}

}  // namespace nn
}  // namespace cirrl
