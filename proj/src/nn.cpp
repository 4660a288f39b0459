#include "cirrl/nn.hpp"

#include "cirrl/errors.hpp"
#include "cirrl/kernels.hpp"

#include <cmath>
#include <string>

namespace cirrl::nn {

namespace {

void add_bias(DenseMatrix& a, const Vector& bias) { a.rowwise() += bias.transpose(); }

void check_grad_shapes(const Mlp& net, const MlpGrads& g) {
  if (g.weight.size() != net.layers.size() || g.bias.size() != net.layers.size())
    throw ShapeError("gradient layer count does not match network");
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    if (g.weight[l].rows() != net.layers[l].weight.rows() ||
        g.weight[l].cols() != net.layers[l].weight.cols() ||
        g.bias[l].size() != net.layers[l].bias.size())
      throw ShapeError("gradient shape mismatch at layer " + std::to_string(l));
  }
  for (std::size_t h = 0; h < net.norms.size(); ++h) {
    const Eigen::Index want = net.norms[h] ? net.norms[h]->scale.size() : 0;
    if (g.bn_scale.at(h).size() != want || g.bn_shift.at(h).size() != want)
      throw ShapeError("batch-norm gradient shape mismatch at layer " + std::to_string(h));
  }
}

}  // namespace

MlpConfig MlpConfig::make(std::vector<int> widths, bool batch_norm, double dropout_p,
                          std::uint64_t seed, Activation act) {
  MlpConfig c;
  c.layer_widths = std::move(widths);
  c.hidden_activation = act;
  c.batch_norm.assign(c.layer_widths.size() >= 2 ? c.layer_widths.size() - 2 : 0, batch_norm);
  c.dropout_p = dropout_p;
  c.seed = seed;
  return c;
}

void MlpConfig::validate() const {
  if (layer_widths.size() < 2) throw InvalidConfigError("MlpConfig: need at least input and output widths");
  for (int w : layer_widths)
    if (w <= 0) throw InvalidConfigError("MlpConfig: layer width must be positive");
  if (!batch_norm.empty() && static_cast<int>(batch_norm.size()) != hidden_layers())
    throw InvalidConfigError("MlpConfig: one batch-norm flag per hidden layer");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw InvalidConfigError("MlpConfig: dropout_p must lie in [0,1)");
}

std::size_t Mlp::parameter_count(bool include_batch_norm) const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  if (include_batch_norm)
    for (const auto& bn : norms)
      if (bn) n += bn->scale.size() + bn->shift.size();
  return n;
}

Mlp mlp_init(const MlpConfig& config) {
  config.validate();
  Mlp net;
  net.config = config;
  Rng rng(config.seed);
  const auto& w = config.layer_widths;
  for (std::size_t l = 0; l + 1 < w.size(); ++l) {
    DenseLayer layer;
    const double scale = std::sqrt(2.0 / w[l]);
    layer.weight = rng.normal_matrix(w[l], w[l + 1]) * scale;
    layer.bias = Vector::Zero(w[l + 1]);
    net.layers.push_back(std::move(layer));
  }
  for (int h = 0; h < config.hidden_layers(); ++h) {
    const bool on = !config.batch_norm.empty() && config.batch_norm[h];
    if (!on) {
      net.norms.emplace_back();
      continue;
    }
    const int width = w[h + 1];
    BatchNorm bn;
    bn.scale = Vector::Ones(width);
    bn.shift = Vector::Zero(width);
    bn.running_mean = Vector::Zero(width);
    bn.running_var = Vector::Ones(width);
    net.norms.emplace_back(std::move(bn));
  }
  return net;
}

namespace {

DenseMatrix run_forward(const Mlp& net, Mlp* mutable_net, const DenseMatrix& batch, Mode mode,
                        Rng* rng, ForwardCache* cache) {
  if (batch.cols() != net.input_width())
    throw ShapeError("mlp forward: batch has " + std::to_string(batch.cols()) + " columns, network expects " +
                     std::to_string(net.input_width()));
  require_finite(batch, "mlp forward input");

  const bool train = mode == Mode::train;
  const int hidden = net.config.hidden_layers();
  const double keep = 1.0 - net.config.dropout_p;
  if (cache) {
    cache->layers.assign(net.layers.size(), LayerCache{});
    cache->generation = net.generation;
    cache->mode = mode;
    cache->valid = true;
  }

  DenseMatrix h = batch;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const DenseLayer& layer = net.layers[l];
    DenseMatrix a;
    kernels::gemm_nn(h, layer.weight, a);
    add_bias(a, layer.bias);
    LayerCache* lc = cache ? &cache->layers[l] : nullptr;
    if (lc) lc->input = std::move(h);

    if (static_cast<int>(l) < hidden) {
      const Eigen::Index rows = a.rows(), w = a.cols();
      double* pa = a.data();
      if (const auto& bn = net.norms[l]) {
        Vector mean, inv_std;
        if (train) {
          const double n = static_cast<double>(rows);
          mean = Vector::Zero(w);
          Vector var = Vector::Zero(w);
          for (Eigen::Index i = 0; i < rows; ++i) mean += a.row(i).transpose();
          mean /= n;
          for (Eigen::Index i = 0; i < rows; ++i) {
            double* r = pa + i * w;
#pragma omp simd
            for (Eigen::Index j = 0; j < w; ++j) {
              r[j] -= mean[j];
              var[j] += r[j] * r[j];
            }
          }
          var /= n;
          inv_std = (var.array() + BatchNorm::kEpsilon).rsqrt().matrix();
          for (Eigen::Index i = 0; i < rows; ++i) {
            double* r = pa + i * w;
#pragma omp simd
            for (Eigen::Index j = 0; j < w; ++j) r[j] *= inv_std[j];
          }
          if (lc) {
            lc->normalized = a;
            lc->inv_std = inv_std;
          }
          if (mutable_net) {
            BatchNorm& state = *mutable_net->norms[l];
            const double unbiased = rows > 1 ? n / (n - 1.0) : 1.0;
            state.running_mean = BatchNorm::kMomentum * state.running_mean + (1.0 - BatchNorm::kMomentum) * mean;
            state.running_var =
                BatchNorm::kMomentum * state.running_var + (1.0 - BatchNorm::kMomentum) * unbiased * var;
          }
        } else {
          inv_std = (bn->running_var.array() + BatchNorm::kEpsilon).rsqrt().matrix();
          for (Eigen::Index i = 0; i < rows; ++i) {
            double* r = pa + i * w;
            const double* m = bn->running_mean.data();
#pragma omp simd
            for (Eigen::Index j = 0; j < w; ++j) r[j] = (r[j] - m[j]) * inv_std[j];
          }
        }
        const double* sc = bn->scale.data();
        const double* sh = bn->shift.data();
        for (Eigen::Index i = 0; i < rows; ++i) {
          double* r = pa + i * w;
#pragma omp simd
          for (Eigen::Index j = 0; j < w; ++j) r[j] = r[j] * sc[j] + sh[j];
        }
      }
      if (net.config.hidden_activation == Activation::relu) {
#pragma omp simd
        for (Eigen::Index i = 0; i < a.size(); ++i) pa[i] = pa[i] > 0.0 ? pa[i] : 0.0;
      }
      if (lc) lc->activated = a;
      if (train && net.config.dropout_p > 0.0) {
        DenseMatrix mask(a.rows(), a.cols());
        for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng->uniform() < keep ? 1.0 / keep : 0.0;
        a.array() *= mask.array();
        if (lc) lc->dropout_mask = std::move(mask);
      }
    }
    h = std::move(a);
  }
  return h;
}

}  // namespace

DenseMatrix forward(Mlp& net, const DenseMatrix& batch, Rng& rng, ForwardCache* cache) {
  return run_forward(net, &net, batch, net.mode, &rng, cache);
}

DenseMatrix predict(const Mlp& net, const DenseMatrix& batch) {
  return run_forward(net, nullptr, batch, Mode::eval, nullptr, nullptr);
}

MlpGrads MlpGrads::zeros_like(const Mlp& net) {
  MlpGrads g;
  for (const auto& l : net.layers) {
    g.weight.push_back(DenseMatrix::Zero(l.weight.rows(), l.weight.cols()));
    g.bias.push_back(Vector::Zero(l.bias.size()));
  }
  for (const auto& bn : net.norms) {
    const Eigen::Index w = bn ? bn->scale.size() : 0;
    g.bn_scale.push_back(Vector::Zero(w));
    g.bn_shift.push_back(Vector::Zero(w));
  }
  return g;
}

void MlpGrads::add_scaled(const MlpGrads& other, double factor) {
  if (other.weight.size() != weight.size() || other.bn_scale.size() != bn_scale.size())
    throw ShapeError("MlpGrads::add_scaled: layer count mismatch");
  for (std::size_t l = 0; l < weight.size(); ++l) {
    weight[l] += factor * other.weight[l];
    bias[l] += factor * other.bias[l];
  }
  for (std::size_t h = 0; h < bn_scale.size(); ++h) {
    bn_scale[h] += factor * other.bn_scale[h];
    bn_shift[h] += factor * other.bn_shift[h];
  }
}

std::vector<double> MlpGrads::flatten() const {
  std::vector<double> out;
  for (std::size_t l = 0; l < weight.size(); ++l) {
    out.insert(out.end(), weight[l].data(), weight[l].data() + weight[l].size());
    out.insert(out.end(), bias[l].data(), bias[l].data() + bias[l].size());
  }
  for (std::size_t h = 0; h < bn_scale.size(); ++h) {
    out.insert(out.end(), bn_scale[h].data(), bn_scale[h].data() + bn_scale[h].size());
    out.insert(out.end(), bn_shift[h].data(), bn_shift[h].data() + bn_shift[h].size());
  }
  return out;
}

std::vector<double*> parameter_pointers(Mlp& net) {
  std::vector<double*> out;
  for (auto& l : net.layers) {
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) out.push_back(l.weight.data() + i);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) out.push_back(l.bias.data() + i);
  }
  for (auto& bn : net.norms) {
    if (!bn) continue;
    for (Eigen::Index i = 0; i < bn->scale.size(); ++i) out.push_back(bn->scale.data() + i);
    for (Eigen::Index i = 0; i < bn->shift.size(); ++i) out.push_back(bn->shift.data() + i);
  }
  return out;
}

Backward backward(const Mlp& net, const ForwardCache& cache, const DenseMatrix& output_grad) {
  if (!cache.valid || cache.generation != net.generation || cache.layers.size() != net.layers.size())
    throw ContractError("mlp backward: cache is stale or from another network");
  if (cache.mode != Mode::train) throw ContractError("mlp backward: cache must come from a train-mode forward");
  const Eigen::Index n = cache.layers.front().input.rows();
  if (output_grad.rows() != n || output_grad.cols() != net.output_width())
    throw ShapeError("mlp backward: output gradient shape mismatch");

  Backward out;
  out.params = MlpGrads::zeros_like(net);
  const int hidden = net.config.hidden_layers();
  DenseMatrix g = output_grad;
  for (int l = static_cast<int>(net.layers.size()) - 1; l >= 0; --l) {
    const LayerCache& lc = cache.layers[l];
    if (l < hidden) {
      const Eigen::Index w = g.cols();
      double* pg = g.data();
      const bool relu = net.config.hidden_activation == Activation::relu;
      const double* act = lc.activated.data();
      const double* mask = lc.dropout_mask.size() > 0 ? lc.dropout_mask.data() : nullptr;
#pragma omp simd
      for (Eigen::Index i = 0; i < g.size(); ++i) {
        double v = mask ? pg[i] * mask[i] : pg[i];
        pg[i] = relu && !(act[i] > 0.0) ? 0.0 : v;
      }
      if (const auto& bn = net.norms[l]) {
        const double* xhat = lc.normalized.data();
        Vector gs = Vector::Zero(w), gb = Vector::Zero(w);
        for (Eigen::Index i = 0; i < n; ++i) {
          const double* gr = pg + i * w;
          const double* xr = xhat + i * w;
#pragma omp simd
          for (Eigen::Index j = 0; j < w; ++j) {
            gs[j] += gr[j] * xr[j];
            gb[j] += gr[j];
          }
        }
        // with dxhat = g * scale: sum(dxhat) = scale * gb, sum(dxhat * xhat) = scale * gs
        const double nn = static_cast<double>(n);
        const Vector& sc = bn->scale;
        const Vector c2 = (sc.array() * gb.array() / nn).matrix();
        const Vector c3 = (sc.array() * gs.array() / nn).matrix();
        for (Eigen::Index i = 0; i < n; ++i) {
          double* gr = pg + i * w;
          const double* xr = xhat + i * w;
#pragma omp simd
          for (Eigen::Index j = 0; j < w; ++j) gr[j] = lc.inv_std[j] * (sc[j] * gr[j] - c2[j] - xr[j] * c3[j]);
        }
        out.params.bn_scale[l] = std::move(gs);
        out.params.bn_shift[l] = std::move(gb);
      }
    }
    kernels::gemm_tn(lc.input, g, out.params.weight[l]);
    Vector bias_grad = Vector::Zero(g.cols());
    for (Eigen::Index i = 0; i < n; ++i) bias_grad += g.row(i).transpose();
    out.params.bias[l] = std::move(bias_grad);
    DenseMatrix next;
    kernels::gemm_nt(g, net.layers[l].weight, next);
    g = std::move(next);
  }
  out.input_grad = std::move(g);
  return out;
}

AdamState AdamState::for_net(const Mlp& net, double lr) {
  AdamState s;
  s.first = MlpGrads::zeros_like(net);
  s.second = MlpGrads::zeros_like(net);
  s.lr = lr;
  return s;
}

namespace {

template <typename Param, typename Grad>
void adam_update(Param& p, const Grad& g, Grad& m, Grad& v, const AdamState& s, double c1, double c2) {
  m = s.beta1 * m + (1.0 - s.beta1) * g;
  v = s.beta2 * v + (1.0 - s.beta2) * g.cwiseProduct(g);
  p.array() -= s.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + s.eps);
}

}  // namespace

void adam_step(Mlp& net, const MlpGrads& grads, AdamState& state) {
  check_grad_shapes(net, grads);
  check_grad_shapes(net, state.first);
  state.step += 1;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    adam_update(net.layers[l].weight, grads.weight[l], state.first.weight[l], state.second.weight[l], state, c1, c2);
    adam_update(net.layers[l].bias, grads.bias[l], state.first.bias[l], state.second.bias[l], state, c1, c2);
  }
  for (std::size_t h = 0; h < net.norms.size(); ++h) {
    if (!net.norms[h]) continue;
    adam_update(net.norms[h]->scale, grads.bn_scale[h], state.first.bn_scale[h], state.second.bn_scale[h], state, c1, c2);
    adam_update(net.norms[h]->shift, grads.bn_shift[h], state.first.bn_shift[h], state.second.bn_shift[h], state, c1, c2);
  }
  net.generation += 1;
}

}  // namespace cirrl::nn
