#include "cirrl/scm.hpp"

#include "cirrl/errors.hpp"

#include <cmath>
#include <sstream>

namespace cirrl::scm {

namespace {

enum StreamTag : std::uint64_t {
  kDagStream = 1,
  kEpsStream = 2,
  kInterventionStream = 3,
  kDecoderStream = 4,
  kEnvStream = 100,
};

// Exponent vectors of all monomials of total degree 1..degree in k variables,
// grouped by degree, lexicographic within a degree.
std::vector<std::vector<int>> monomial_exponents(int k, int degree) {
  std::vector<std::vector<int>> out;
  for (int q = 1; q <= degree; ++q) {
    // Nondecreasing index tuples i1 <= ... <= iq.
    std::vector<int> idx(q, 0);
    while (true) {
      std::vector<int> e(k, 0);
      for (int i : idx) e[i] += 1;
      out.push_back(std::move(e));
      int pos = q - 1;
      while (pos >= 0 && idx[pos] == k - 1) --pos;
      if (pos < 0) break;
      idx[pos] += 1;
      for (int p = pos + 1; p < q; ++p) idx[p] = idx[pos];
    }
  }
  return out;
}

double monomial(const Vector& z, const std::vector<int>& e) {
  double v = 1.0;
  for (std::size_t i = 0; i < e.size(); ++i)
    for (int p = 0; p < e[i]; ++p) v *= z(static_cast<Eigen::Index>(i));
  return v;
}

bool full_column_rank(const DenseMatrix& m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const Vector sv = svd.singularValues();
  if (sv.size() == 0 || sv(0) == 0.0) return false;
  if (sv.size() < m.cols()) return false;
  return sv(sv.size() - 1) > 1e-8 * sv(0);
}

// Pseudo-inverse of a symmetric PSD matrix.
DenseMatrix psd_pinv(const DenseMatrix& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(symmetrize(m));
  const Vector ev = solver.eigenvalues();
  const double cutoff = 1e-12 * std::max(1.0, ev.cwiseAbs().maxCoeff());
  Vector inv(ev.size());
  for (Eigen::Index i = 0; i < ev.size(); ++i) inv(i) = ev(i) > cutoff ? 1.0 / ev(i) : 0.0;
  return solver.eigenvectors() * inv.asDiagonal() * solver.eigenvectors().transpose();
}

}  // namespace

std::string to_string(NoiseFamily f) {
  switch (f) {
    case NoiseFamily::gaussian: return "gaussian";
    case NoiseFamily::student_t: return "student_t";
    case NoiseFamily::chi2: return "chi2";
  }
  return "gaussian";
}

NoiseFamily noise_family_from_string(const std::string& s) {
  if (s == "gaussian") return NoiseFamily::gaussian;
  if (s == "student_t" || s == "t") return NoiseFamily::student_t;
  if (s == "chi2") return NoiseFamily::chi2;
  throw InvalidConfigError("unknown noise family '" + s + "'");
}

void GenConfig::validate() const {
  if (k < 1) throw InvalidConfigError("GenConfig: k must be at least 1");
  if (d < 2 || d < k) throw InvalidConfigError("GenConfig: need d >= 2 and d >= k");
  if (num_envs < 1) throw InvalidConfigError("GenConfig: need at least the observational environment");
  if (n_per_env < 1) throw InvalidConfigError("GenConfig: n_per_env must be positive");
  if (!(eta >= 0.0)) throw InvalidConfigError("GenConfig: eta must be nonnegative");
  if (noise_family == NoiseFamily::student_t && !(nu >= 1.0)) throw InvalidConfigError("GenConfig: nu must be >= 1");
  if (decoder.kind == DecoderKind::polynomial && decoder.degree < 1)
    throw InvalidConfigError("GenConfig: polynomial degree must be >= 1");
  if (mu_v && mu_v->size() != k + 1) throw InvalidConfigError("GenConfig: mu_v must have length k+1");
}

// ---------------------------------------------------------------------------
// Decoder

DecoderFn DecoderFn::polynomial(int latent_dim, int degree, DenseMatrix coeff) {
  if (latent_dim < 1 || degree < 1) throw InvalidConfigError("polynomial decoder: bad latent dim or degree");
  if (coeff.cols() != feature_count(latent_dim, degree))
    throw ShapeError("polynomial decoder: coefficient matrix must have one column per monomial");
  DecoderFn f;
  f.kind_ = DecoderKind::polynomial;
  f.latent_dim_ = latent_dim;
  f.output_dim_ = static_cast<int>(coeff.rows());
  f.degree_ = degree;
  f.coeff_ = std::move(coeff);
  f.exponents_ = monomial_exponents(latent_dim, degree);
  return f;
}

DecoderFn DecoderFn::relu_net(nn::Mlp net) {
  DecoderFn f;
  f.kind_ = DecoderKind::relu_net;
  f.latent_dim_ = net.input_width();
  f.output_dim_ = net.output_width();
  net.mode = nn::Mode::eval;
  f.net_ = std::move(net);
  return f;
}

int DecoderFn::feature_count(int latent_dim, int degree) {
  // sum_{q=1}^{degree} C(k+q-1, q)
  long total = 0, term = 1;
  for (int q = 1; q <= degree; ++q) {
    term = term * (latent_dim + q - 1) / q;
    total += term;
  }
  return static_cast<int>(total);
}

DenseMatrix DecoderFn::features(const DenseMatrix& z, int degree) {
  const auto exps = monomial_exponents(static_cast<int>(z.cols()), degree);
  DenseMatrix f(z.rows(), static_cast<Eigen::Index>(exps.size()));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const Vector zi = z.row(i).transpose();
    for (std::size_t c = 0; c < exps.size(); ++c) f(i, static_cast<Eigen::Index>(c)) = monomial(zi, exps[c]);
  }
  return f;
}

DenseMatrix DecoderFn::apply(const DenseMatrix& z) const {
  if (z.cols() != latent_dim_) throw ShapeError("decoder: latent width mismatch");
  if (kind_ == DecoderKind::relu_net) return nn::predict(*net_, z);
  return features(z, degree_) * coeff_.transpose();
}

DenseMatrix DecoderFn::jacobian(const Vector& z) const {
  if (z.size() != latent_dim_) throw ShapeError("decoder jacobian: latent width mismatch");
  if (kind_ == DecoderKind::polynomial) {
    DenseMatrix dfeat(static_cast<Eigen::Index>(exponents_.size()), latent_dim_);
    for (std::size_t c = 0; c < exponents_.size(); ++c) {
      for (int a = 0; a < latent_dim_; ++a) {
        const auto& e = exponents_[c];
        if (e[a] == 0) {
          dfeat(static_cast<Eigen::Index>(c), a) = 0.0;
          continue;
        }
        std::vector<int> reduced = e;
        reduced[a] -= 1;
        dfeat(static_cast<Eigen::Index>(c), a) = e[a] * monomial(z, reduced);
      }
    }
    return coeff_ * dfeat;
  }
  nn::Mlp probe = *net_;
  probe.mode = nn::Mode::train;  // no batch norm or dropout, so identical to eval
  Rng unused(0);
  nn::ForwardCache cache;
  DenseMatrix row = z.transpose();
  nn::forward(probe, row, unused, &cache);
  DenseMatrix jac(output_dim_, latent_dim_);
  for (int o = 0; o < output_dim_; ++o) {
    DenseMatrix g = DenseMatrix::Zero(1, output_dim_);
    g(0, o) = 1.0;
    jac.row(o) = nn::backward(probe, cache, g).input_grad.row(0);
  }
  return jac;
}

DecoderFn make_decoder(const DecoderSpec& spec, int k, int d, std::uint64_t seed) {
  Rng rng(seed);
  constexpr int kAttempts = 20;
  constexpr int kProbePoints = 50;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    DecoderFn candidate;
    if (spec.kind == DecoderKind::polynomial) {
      const int p = DecoderFn::feature_count(k, spec.degree);
      DenseMatrix coeff = rng.normal_matrix(d, p) / std::sqrt(static_cast<double>(p));
      if (d >= p && !full_column_rank(coeff)) continue;
      candidate = DecoderFn::polynomial(k, spec.degree, std::move(coeff));
    } else {
      std::vector<int> widths{k};
      widths.insert(widths.end(), spec.widths.begin(), spec.widths.end());
      widths.push_back(d);
      candidate = DecoderFn::relu_net(nn::mlp_init(nn::MlpConfig::make(widths, false, 0.0, rng.next_u64())));
    }
    bool ok = true;
    for (int i = 0; i < kProbePoints && ok; ++i) ok = full_column_rank(candidate.jacobian(rng.normal_vector(k)));
    if (ok) return candidate;
  }
  throw GenerationError("make_decoder: no decoder with full-rank Jacobian after 20 attempts");
}

// ---------------------------------------------------------------------------
// Graph and moments

DagSkeleton sample_dag(int k, std::uint64_t seed) {
  if (k < 1) throw InvalidConfigError("sample_dag: k must be at least 1");
  Rng rng(seed);
  const int nodes = k + 1;
  DagSkeleton s;
  s.adjacency = DenseMatrix::Zero(nodes, nodes);
  for (int target = 0; target < nodes; ++target) {
    for (int source = 0; source < nodes; ++source) {
      if (source == target) continue;
      const bool edge = rng.uniform() < 0.5;
      if (edge && source < target) s.adjacency(target, source) = rng.normal();
    }
  }
  const Eigen::MatrixXd i_minus_b = Eigen::MatrixXd::Identity(nodes, nodes) - Eigen::MatrixXd(s.adjacency);
  s.total_effect = i_minus_b.partialPivLu().solve(Eigen::MatrixXd::Identity(nodes, nodes));
  return s;
}

DenseMatrix psd_norm1(int dim, Rng& rng) {
  if (dim < 1) throw InvalidConfigError("psd_norm1: dim must be at least 1");
  const DenseMatrix a = rng.normal_matrix(dim, dim);
  DenseMatrix g = symmetrize(a * a.transpose());
  const double top = symmetric_eigenvalues(g).maxCoeff();
  g /= top;
  return symmetrize(g);
}

DenseMatrix psd_norm1(int dim, std::uint64_t seed) {
  Rng rng(seed);
  return psd_norm1(dim, rng);
}

DenseMatrix xi_eta(const std::vector<EnvIntervention>& interventions, double eta, int num_envs) {
  if (interventions.empty()) throw InvalidConfigError("xi_eta: no interventions");
  const int count = num_envs > 0 ? num_envs : static_cast<int>(interventions.size());
  const auto dim = interventions.front().mean.size();
  DenseMatrix sum = DenseMatrix::Zero(dim, dim);
  for (const auto& iv : interventions) sum += iv.cov + iv.mean * iv.mean.transpose();
  return (eta / count) * sum;
}

DenseMatrix sample_gaussian(const Vector& mean, const DenseMatrix& cov, Eigen::Index n, Rng& rng) {
  const DenseMatrix root = psd_sqrt(cov);
  DenseMatrix g = rng.normal_matrix(n, mean.size());
  DenseMatrix out = g * root;  // root is symmetric
  out.rowwise() += mean.transpose();
  return out;
}

DenseMatrix propagate(const ScmSystem& sys, const DenseMatrix& node_noise) {
  return node_noise * sys.total_effect.transpose();
}

namespace {

EnvData make_env(const ScmSystem& sys, int label, const DenseMatrix& node_noise) {
  EnvData env;
  env.label = label;
  const DenseMatrix zy = propagate(sys, node_noise);
  env.z_true = zy.leftCols(sys.k);
  env.y = zy.col(sys.k);
  env.x = sys.decoder.apply(env.z_true);
  env.node_noise = node_noise;
  return env;
}

}  // namespace

GeneratedData generate_train(const GenConfig& cfg) {
  cfg.validate();
  GeneratedData out;
  ScmSystem& sys = out.system;
  sys.k = cfg.k;
  sys.d = cfg.d;
  sys.num_envs = cfg.num_envs;
  sys.exclude_y_interventions = cfg.exclude_y;
  const int nodes = cfg.k + 1;

  DagSkeleton dag = sample_dag(cfg.k, derive_seed(cfg.seed, kDagStream));
  sys.adjacency = std::move(dag.adjacency);
  sys.total_effect = std::move(dag.total_effect);
  sys.eps_cov = psd_norm1(nodes, derive_seed(cfg.seed, kEpsStream));

  Rng iv_rng(derive_seed(cfg.seed, kInterventionStream));
  for (int e = 1; e < cfg.num_envs; ++e) {
    EnvIntervention iv;
    iv.mean = iv_rng.normal_vector(nodes);
    iv.mean /= iv.mean.norm();
    iv.cov = psd_norm1(nodes, iv_rng);
    if (cfg.exclude_y) {
      iv.mean(cfg.k) = 0.0;
      iv.cov.row(cfg.k).setZero();
      iv.cov.col(cfg.k).setZero();
    }
    sys.interventions.push_back(std::move(iv));
  }
  sys.decoder = make_decoder(cfg.decoder, cfg.k, cfg.d, derive_seed(cfg.seed, kDecoderStream));

  for (int e = 0; e < cfg.num_envs; ++e) {
    Rng rng(derive_seed(cfg.seed, kEnvStream + static_cast<std::uint64_t>(e)));
    DenseMatrix noise = sample_gaussian(Vector::Zero(nodes), sys.eps_cov, cfg.n_per_env, rng);
    Vector mean = Vector::Zero(nodes);
    DenseMatrix cov = DenseMatrix::Zero(nodes, nodes);
    if (e > 0) {
      const auto& iv = sys.interventions[static_cast<std::size_t>(e - 1)];
      noise += sample_gaussian(iv.mean, iv.cov, cfg.n_per_env, rng);
      mean = iv.mean;
      cov = iv.cov;
    }
    EnvData env = make_env(sys, e, noise);
    env.delta_mean = mean;
    env.delta_cov = cov;
    out.data.envs.push_back(std::move(env));
  }
  return out;
}

TestMoments test_moments(const ScmSystem& sys, const GenConfig& cfg) {
  const int nodes = sys.k + 1;
  TestMoments tm;
  if (sys.interventions.empty()) {
    tm.xi = DenseMatrix::Zero(nodes, nodes);
  } else {
    tm.xi = xi_eta(sys.interventions, cfg.eta, sys.num_envs);
  }
  const bool explicit_mean = cfg.mu_v.has_value();
  if (explicit_mean) {
    tm.mu_v = *cfg.mu_v;
  } else {
    tm.mu_v = Vector::Zero(nodes);
    for (const auto& iv : sys.interventions) tm.mu_v += iv.mean;
    tm.mu_v *= cfg.eta / std::max(1, sys.num_envs);
  }
  if (cfg.enforce_assumption1) {
    const DenseMatrix second_moment = sys.eps_cov + tm.xi;
    const DenseMatrix basis = second_moment * sys.total_effect.topRows(sys.k).transpose();
    const Eigen::MatrixXd gram = basis.transpose() * basis;
    tm.mu_v = basis * gram.ldlt().solve(basis.transpose() * tm.mu_v);
  }

  DenseMatrix v_cov = symmetrize(tm.xi - tm.mu_v * tm.mu_v.transpose());
  const Vector ev = symmetric_eigenvalues(v_cov);
  const double tol = 1e-9 * std::max(1.0, tm.xi.norm());
  if (ev.minCoeff() < -tol) {
    if (explicit_mean || !cfg.shrink_default_mean) {
      std::ostringstream msg;
      msg << "test perturbation too strong: Xi - mu_v mu_v^T has eigenvalue " << ev.minCoeff();
      throw PerturbationTooStrongError(msg.str(), ev.minCoeff());
    }
    // Largest t with Xi - t^2 mu mu^T PSD is 1/sqrt(mu^T Xi^+ mu), provided mu lies in range(Xi).
    const DenseMatrix pinv = psd_pinv(tm.xi);
    const Vector in_range = tm.xi * (pinv * tm.mu_v);
    double t = 0.0;
    if ((in_range - tm.mu_v).norm() <= 1e-9 * std::max(1.0, tm.mu_v.norm())) {
      const double q = tm.mu_v.dot(pinv * tm.mu_v);
      t = q > 0.0 ? std::min(1.0, 1.0 / std::sqrt(q)) : 1.0;
    }
    tm.mu_v *= t;
    tm.mean_shrink = t;
    v_cov = symmetrize(tm.xi - tm.mu_v * tm.mu_v.transpose());
  }
  tm.v_cov = v_cov;
  return tm;
}

TestEnvironment generate_test(const ScmSystem& sys, const GenConfig& cfg, int n, std::uint64_t seed) {
  cfg.validate();
  if (n < 1) throw InvalidConfigError("generate_test: n must be positive");
  const int nodes = sys.k + 1;
  TestMoments tm = test_moments(sys, cfg);
  TestEnvironment test;
  test.family = cfg.noise_family;
  test.eta = cfg.eta;
  test.mu_v = tm.mu_v;
  test.v_cov = tm.v_cov;
  test.xi = tm.xi;
  test.mean_shrink = tm.mean_shrink;

  Rng rng(seed);
  DenseMatrix noise = sample_gaussian(Vector::Zero(nodes), sys.eps_cov, n, rng);
  switch (cfg.noise_family) {
    case NoiseFamily::gaussian:
      noise += sample_gaussian(tm.mu_v, tm.v_cov, n, rng);
      break;
    case NoiseFamily::student_t: {
      noise += sample_gaussian(tm.mu_v, tm.v_cov, n, rng);
      // zeta' = (zeta - E zeta) sqrt(nu/u) + E zeta, u ~ chi2_nu, one u per row.
      for (Eigen::Index i = 0; i < n; ++i) {
        const double u = rng.chi_squared(cfg.nu);
        const double s = std::sqrt(cfg.nu / u);
        noise.row(i) = (noise.row(i) - tm.mu_v.transpose()) * s + tm.mu_v.transpose();
      }
      break;
    }
    case NoiseFamily::chi2: {
      const int dof = std::max(1, static_cast<int>(std::lround(tm.mu_v.lpNorm<1>())));
      test.chi2_dof = dof;
      const Vector sd = tm.v_cov.diagonal().cwiseMax(0.0).cwiseSqrt();
      const double norm = std::sqrt(2.0 * dof);
      for (Eigen::Index i = 0; i < n; ++i)
        for (int c = 0; c < nodes; ++c)
          noise(i, c) += tm.mu_v(c) + sd(c) * (rng.chi_squared(dof) - dof) / norm;
      break;
    }
  }
  test.data = make_env(sys, -1, noise);
  test.data.delta_mean = tm.mu_v;
  test.data.delta_cov = tm.v_cov;
  return test;
}

}  // namespace cirrl::scm
