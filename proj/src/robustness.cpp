#include "cirrl/robustness.hpp"

#include "cirrl/errors.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace cirrl::robust {

namespace {

constexpr double kRankTol = 1e-10;

/// Least-squares coefficients of y on [1, x]; row 0 is the intercept.
DenseMatrix affine_fit(const DenseMatrix& x, const DenseMatrix& y, const std::string& what) {
  const Eigen::Index n = x.rows();
  DenseMatrix design(n, x.cols() + 1);
  design.col(0).setOnes();
  design.rightCols(x.cols()) = x;
  const DenseMatrix gram = design.transpose() * design;
  const DenseMatrix rhs = design.transpose() * y;
  DenseMatrix coef(design.cols(), y.cols());
  for (Eigen::Index c = 0; c < y.cols(); ++c) coef.col(c) = checked_solve(gram, rhs.col(c), kRankTol, what);
  return coef;
}

std::vector<double> r_squared(const DenseMatrix& x, const DenseMatrix& y, const DenseMatrix& coef) {
  const DenseMatrix fitted = (x * coef.bottomRows(x.cols())).rowwise() + coef.row(0);
  const DenseMatrix centered = y.rowwise() - column_means(y).transpose();
  std::vector<double> out;
  for (Eigen::Index c = 0; c < y.cols(); ++c) {
    const double sst = centered.col(c).squaredNorm();
    const double ssr = (y.col(c) - fitted.col(c)).squaredNorm();
    out.push_back(sst > 0.0 ? 1.0 - ssr / sst : 0.0);
  }
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

double plugin_risk(const std::vector<double>& mse, const std::vector<double>& weights, double gamma) {
  if (mse.empty() || mse.size() != weights.size()) throw ShapeError("plugin_risk: need one weight per environment MSE");
  double s = 0.0;
  for (std::size_t i = 0; i < mse.size(); ++i) s += weights[i] * (mse[i] - mse[0]);
  return mse[0] + gamma * s;
}

double mse(const Vector& pred, const Vector& y) {
  if (pred.size() != y.size()) throw ShapeError("mse: prediction and response lengths differ");
  if (y.size() == 0) throw ShapeError("mse: empty sample");
  return (pred - y).squaredNorm() / static_cast<double>(y.size());
}

EnvMse env_mses(const Predictor& f, const MultiEnvDataset& data) {
  if (!data.has_env(0)) throw ContractError("env_mses: reference environment 0 is missing");
  EnvMse out;
  const auto& ref = data.env(0);
  out.labels.push_back(0);
  out.mse.push_back(mse(f(ref.x), ref.y));
  for (const auto& e : data.envs) {
    if (e.label == 0) continue;
    out.labels.push_back(e.label);
    out.mse.push_back(mse(f(e.x), e.y));
  }
  return out;
}

double worst_case_plugin(const Predictor& f, const MultiEnvDataset& data, const std::vector<double>& weights, double gamma) {
  return plugin_risk(env_mses(f, data).mse, weights, gamma);
}

double UncertaintyBound::slack(const DenseMatrix& second_moment) const {
  if (second_moment.rows() != t.rows() || second_moment.cols() != t.cols())
    throw ShapeError("UncertaintyBound: second moment has the wrong shape");
  return symmetric_eigenvalues(t - second_moment)(0);
}

bool UncertaintyBound::contains(const DenseMatrix& second_moment, double tol) const { return slack(second_moment) >= -tol; }

UncertaintyBound uncertainty_bound(const std::vector<scm::EnvIntervention>& moments, const std::vector<double>& weights,
                                   double gamma) {
  if (moments.empty() || moments.size() != weights.size()) throw ShapeError("uncertainty_bound: need one weight per environment");
  const auto& s0 = moments.front().cov;
  for (const auto& m : moments) {
    if (m.cov.rows() != s0.rows() || m.cov.cols() != s0.cols() || m.mean.size() != s0.rows())
      throw ShapeError("uncertainty_bound: moment shapes differ");
    const double scale = std::max(1.0, m.cov.cwiseAbs().maxCoeff());
    if ((m.cov - m.cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
      throw DataError("uncertainty_bound: intervention covariance is not symmetric");
  }
  UncertaintyBound out;
  out.gamma = gamma;
  DenseMatrix slack = DenseMatrix::Zero(s0.rows(), s0.cols());
  for (std::size_t i = 0; i < moments.size(); ++i)
    slack += weights[i] * (moments[i].cov - s0 + moments[i].mean * moments[i].mean.transpose());
  out.t = s0 + gamma * slack;
  return out;
}

UncertaintyBound uncertainty_bound(const scm::ScmSystem& sys, double gamma) {
  std::vector<scm::EnvIntervention> moments;
  moments.push_back({Vector::Zero(sys.k + 1), DenseMatrix::Zero(sys.k + 1, sys.k + 1)});
  for (const auto& iv : sys.interventions) moments.push_back(iv);
  const std::vector<double> w(moments.size(), 1.0 / static_cast<double>(moments.size()));
  return uncertainty_bound(moments, w, gamma);
}

Vector residual_direction(const scm::ScmSystem& sys, const Vector& b) {
  if (b.size() != sys.k) throw ShapeError("residual_direction: coefficient length differs from k");
  const auto& c = sys.total_effect;
  return c.row(sys.k).transpose() - c.topRows(sys.k).transpose() * b;
}

std::vector<double> population_env_mses(const scm::ScmSystem& sys, const Vector& b) {
  const Vector w = residual_direction(sys, b);
  const double base = w.dot(sys.eps_cov * w);
  std::vector<double> out{base};
  for (const auto& iv : sys.interventions) {
    const double shift = w.dot(iv.mean);
    out.push_back(base + w.dot(iv.cov * w) + shift * shift);
  }
  return out;
}

SupOracle mc_sup_oracle(const scm::ScmSystem& sys, const Vector& b, const DenseMatrix& t, int candidates, std::uint64_t seed) {
  if (t.rows() != sys.k + 1 || t.cols() != sys.k + 1) throw ShapeError("mc_sup_oracle: T must be (k+1)x(k+1)");
  const Vector ev = symmetric_eigenvalues(t);
  if (ev(0) < -1e-10 * std::max(1.0, std::abs(ev(ev.size() - 1))))
    throw DomainError("mc_sup_oracle: T is not positive semidefinite (eigenvalue " + fmt(ev(0)) + ")");
  const Vector w = residual_direction(sys, b);
  SupOracle out;
  out.unperturbed = w.dot(sys.eps_cov * w);
  out.analytic = out.unperturbed + w.dot(t * w);
  out.candidates = candidates;

  const DenseMatrix root = psd_sqrt(t);
  const Vector rw = root * w;  // (u^T T^{1/2} w) = u . rw
  Rng rng(seed);
  out.candidate_max = out.unperturbed;
  for (int i = 0; i < candidates; ++i) {
    Vector u = rng.normal_vector(sys.k + 1);
    u /= u.norm();
    const double p = u.dot(rw);
    out.candidate_max = std::max(out.candidate_max, out.unperturbed + p * p);
  }
  const double len = rw.norm();
  out.at_optimum = out.unperturbed + (len > 0.0 ? len * len : 0.0);
  return out;
}

double elliptical_condexp_oracle(const DenseMatrix& sigma, const DenseMatrix& m, Elliptical family, double nu, Eigen::Index n,
                                 std::uint64_t seed) {
  const Eigen::Index p = sigma.rows();
  if (sigma.cols() != p || m.cols() != p) throw ShapeError("elliptical_condexp_oracle: shapes of Sigma and M disagree");
  if (m.rows() < 1 || m.rows() > p) throw ContractError("elliptical_condexp_oracle: M must have between 1 and p rows");
  Eigen::JacobiSVD<DenseMatrix> svd(m);
  const Vector sv = svd.singularValues();
  if (sv(sv.size() - 1) < kRankTol * sv(0)) throw ContractError("elliptical_condexp_oracle: M is rank deficient");
  if (family == Elliptical::student_t && !(nu >= 3.0)) throw InvalidConfigError("elliptical_condexp_oracle: need nu >= 3");
  if (n <= p + 1) throw InvalidConfigError("elliptical_condexp_oracle: sample too small");

  Rng rng(seed);
  const DenseMatrix root = psd_sqrt(sigma);
  DenseMatrix x = rng.normal_matrix(n, p) * root;
  if (family == Elliptical::student_t) {
    for (Eigen::Index i = 0; i < n; ++i) x.row(i) *= std::sqrt(nu / rng.chi_squared(nu));
  }
  const DenseMatrix mx = x * m.transpose();
  const DenseMatrix coef = affine_fit(mx, x, "elliptical_condexp_oracle: regression design");
  const DenseMatrix slope = coef.bottomRows(m.rows()).transpose();  // p x r
  const DenseMatrix msm = m * sigma * m.transpose();
  const DenseMatrix target = sigma * m.transpose() * msm.inverse();
  return (slope - target).cwiseAbs().maxCoeff();
}

double ood_mse(const Predictor& f, const EnvData& test) { return mse(f(test.x), test.y); }

AffineLink fit_affine_link(const DenseMatrix& z_true, const DenseMatrix& z_learned) {
  if (z_true.rows() != z_learned.rows()) throw ShapeError("fit_affine_link: row counts differ");
  if (z_true.rows() <= std::max(z_true.cols(), z_learned.cols()) + 1)
    throw ShapeError("fit_affine_link: need more rows than latent coordinates");
  AffineLink out;
  const DenseMatrix coef = affine_fit(z_true, z_learned, "fit_affine_link: true latents");
  out.m = coef.row(0).transpose();
  out.n = coef.bottomRows(z_true.cols()).transpose();
  out.r2 = r_squared(z_true, z_learned, coef);
  const DenseMatrix inv = affine_fit(z_learned, z_true, "fit_affine_link: learned latents");
  out.r2_inverse = r_squared(z_learned, z_true, inv);
  out.condition = condition_number(out.n);
  return out;
}

void RobustnessReport::validate() const {
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (!(r.plugin_risk >= 0.0)) throw DataError("RobustnessReport: negative or NaN plug-in risk");
    if (r.env_mse.size() != labels.size()) throw ShapeError("RobustnessReport: env MSE count differs from labels");
    if (i > 0 && r.gamma < rows[i - 1].gamma) throw DataError("RobustnessReport: gamma grid not increasing");
  }
}

std::string RobustnessReport::to_csv() const {
  validate();
  std::ostringstream os;
  os << "model,dataset,gamma,plugin_risk";
  for (int l : labels) os << ",mse_env_" << l;
  os << ",ood_family,ood_mse\n";
  for (const auto& r : rows) {
    os << model << ',' << dataset << ',' << fmt(r.gamma) << ',' << fmt(r.plugin_risk);
    for (double v : r.env_mse) os << ',' << fmt(v);
    os << ',' << r.ood_family << ',' << fmt(r.ood_mse) << '\n';
  }
  return os.str();
}

}  // namespace cirrl::robust
