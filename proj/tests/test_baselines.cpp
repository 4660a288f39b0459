#include "cirrl/baselines.hpp"
#include "cirrl/errors.hpp"
#include "cirrl/robustness.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace cirrl;
using namespace cirrl::baselines;
using cirrl::testing::random_matrix;
using cirrl::testing::same_bytes;

namespace {

BaselineConfig quick(BaselineKind kind, std::uint64_t seed, int epochs = 10) {
  BaselineConfig c = kind == BaselineKind::erm ? BaselineConfig::erm() : BaselineConfig::irm();
  c.width = 32;
  c.epochs = epochs;
  c.batch_size = 64;
  c.lr = 1e-3;
  c.seed = seed;
  return c;
}

MultiEnvDataset linear_data(std::uint64_t seed, int envs = 3, int n = 300) {
  Rng rng(seed);
  Vector beta(4);
  beta << 1.0, -2.0, 0.5, 0.0;
  MultiEnvDataset d;
  for (int e = 0; e < envs; ++e) {
    EnvData env;
    env.label = e;
    env.x = rng.normal_matrix(n, 4).array() + e;
    env.y = env.x * beta + 0.5 * rng.normal_vector(n);
    d.envs.push_back(std::move(env));
  }
  return d;
}

// Y = X1 + N(0,1); X2 = Y + N(0, s_e^2): X2 is predictive only through an environment-dependent channel.
MultiEnvDataset spurious_data(std::uint64_t seed) {
  Rng rng(seed);
  const double spread[] = {0.1, 0.5, 2.0};
  MultiEnvDataset d;
  for (int e = 0; e < 3; ++e) {
    EnvData env;
    env.label = e;
    const int n = 500;
    env.x.resize(n, 2);
    env.y.resize(n);
    for (int i = 0; i < n; ++i) {
      const double x1 = rng.normal();
      const double y = x1 + rng.normal();
      env.x(i, 0) = x1;
      env.x(i, 1) = y + spread[e] * rng.normal();
      env.y(i) = y;
    }
    d.envs.push_back(std::move(env));
  }
  return d;
}

double train_mse(const BaselineModel& m, const MultiEnvDataset& d) {
  double s = 0.0;
  Eigen::Index n = 0;
  for (const auto& e : d.envs) {
    s += (predict(m, e.x) - e.y).squaredNorm();
    n += e.size();
  }
  return s / static_cast<double>(n);
}

}  // namespace

TEST(BaselineConfig, Defaults) {
  const auto erm = BaselineConfig::erm();
  EXPECT_EQ(erm.kind, BaselineKind::erm);
  EXPECT_EQ(erm.dropout_p, 0.25);
  EXPECT_EQ(erm.lr, 1e-4);
  const auto irm = BaselineConfig::irm(7.0);
  EXPECT_EQ(irm.kind, BaselineKind::irm);
  EXPECT_EQ(irm.lambda, 7.0);
  BaselineConfig bad = irm;
  bad.lambda = -1.0;
  EXPECT_THROW(bad.validate(), InvalidConfigError);
  bad = erm;
  bad.dropout_p = 1.0;
  EXPECT_THROW(bad.validate(), InvalidConfigError);
}

TEST(IrmPenalty, HandExample) {
  // env 0: f = (1, 2), y = (0, 1): D = (2/2) * (1*1 + 1*2) = 3
  Vector f(3), y(3);
  f << 1.0, 2.0, 0.5;
  y << 0.0, 1.0, 0.5;
  const auto p = irm_penalty(f, y, {0, 0, 1}, 2);
  EXPECT_DOUBLE_EQ(p.per_env[0], 9.0);
  EXPECT_DOUBLE_EQ(p.per_env[1], 0.0);
  EXPECT_DOUBLE_EQ(p.value, 9.0);
  EXPECT_THROW(irm_penalty(f, y, {0, 0, 2}, 2), ShapeError);
}

TEST(IrmPenalty, NonnegativeWithMatchingGradient) {
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    Vector f = rng.normal_vector(12), y = rng.normal_vector(12);
    std::vector<int> env(12);
    for (int i = 0; i < 12; ++i) env[static_cast<std::size_t>(i)] = i % 3;
    const auto p = irm_penalty(f, y, env, 3);
    EXPECT_GE(p.value, 0.0);
    for (Eigen::Index i = 0; i < 12; ++i) {
      const double fd = cirrl::testing::central_difference([&] { return irm_penalty(f, y, env, 3).value; }, f.data() + i, 1e-6);
      EXPECT_NEAR(fd, p.grad[i], 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST(IrmPenalty, SymmetricEnvironmentsContributeEqually) {
  Rng rng(4);
  const Vector f0 = rng.normal_vector(8), y0 = rng.normal_vector(8);
  Vector f(16), y(16);
  f << f0, f0.reverse();
  y << y0, y0.reverse();
  std::vector<int> env(16, 0);
  for (int i = 8; i < 16; ++i) env[static_cast<std::size_t>(i)] = 1;
  const auto p = irm_penalty(f, y, env, 2);
  EXPECT_NEAR(p.per_env[0], p.per_env[1], 1e-12 * std::max(1.0, p.per_env[0]));
}

TEST(Erm, Deterministic) {
  const auto d = linear_data(1);
  const auto a = train_erm(d, quick(BaselineKind::erm, 5));
  const auto b = train_erm(d, quick(BaselineKind::erm, 5));
  EXPECT_TRUE(same_bytes(predict(a, d.envs[1].x), predict(b, d.envs[1].x)));
  ASSERT_EQ(a.trace.size(), 10u);
  EXPECT_EQ(a.trace.back().risk, b.trace.back().risk);
}

TEST(Erm, LinearNetReachesOlsResidualVariance) {
  const auto d = linear_data(2);
  BaselineConfig c = quick(BaselineKind::erm, 2, 200);
  c.depth = 0;
  c.dropout_p = 0.0;
  c.lr = 1e-2;
  const auto m = train_erm(d, c);
  DenseMatrix x(900, 5);
  Vector y(900);
  for (int e = 0; e < 3; ++e) {
    x.block(300 * e, 0, 300, 4) = d.envs[e].x;
    y.segment(300 * e, 300) = d.envs[e].y;
  }
  x.col(4).setOnes();
  const Vector coef = (x.transpose() * x).ldlt().solve(x.transpose() * y);
  const double ols = (x * coef - y).squaredNorm() / 900.0;
  EXPECT_LE(std::abs(train_mse(m, d) / ols - 1.0), 0.05);
}

TEST(Erm, ConstantResponseIsFitExactly) {
  auto d = linear_data(3);
  for (auto& e : d.envs) e.y.setConstant(4.5);
  const auto m = train_erm(d, quick(BaselineKind::erm, 3, 150));
  EXPECT_LE(train_mse(m, d), 1e-3);
}

TEST(Irm, LambdaZeroFollowsErmExactly) {
  const auto d = linear_data(4);
  BaselineConfig irm = quick(BaselineKind::irm, 6);
  irm.lambda = 0.0;
  const auto a = train_irm(d, irm);
  const auto b = train_erm(d, quick(BaselineKind::erm, 6));
  EXPECT_TRUE(same_bytes(predict(a, d.envs[0].x), predict(b, d.envs[0].x)));
  for (std::size_t i = 0; i < a.trace.size(); ++i) EXPECT_EQ(a.trace[i].risk, b.trace[i].risk);
}

TEST(Irm, NeedsTwoEnvironments) {
  auto d = linear_data(5, 1);
  EXPECT_THROW(train_irm(d, quick(BaselineKind::irm, 1)), ContractError);
}

TEST(Irm, LargePenaltyEqualisesEnvironmentRisk) {
  int better = 0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto d = spurious_data(s);
    auto spread = [&](const BaselineModel& m) {
      const auto r = robust::env_mses([&](const DenseMatrix& x) { return predict(m, x); }, d);
      return *std::max_element(r.mse.begin(), r.mse.end()) - *std::min_element(r.mse.begin(), r.mse.end());
    };
    BaselineConfig c = quick(BaselineKind::irm, s, 40);
    c.dropout_p = 0.0;
    c.lambda = 0.0;
    const double plain = spread(train_irm(d, c));
    c.lambda = 1e4;
    const double penalised = spread(train_irm(d, c));
    better += penalised < plain;
  }
  EXPECT_GE(better, 8);
}

TEST(Serialize, BaselineRoundTripIsBitExact) {
  const auto d = linear_data(6);
  const auto m = train_irm(d, quick(BaselineKind::irm, 7, 3));
  const auto back = baseline_from_json(Json::parse(to_json(m).dump()));
  EXPECT_EQ(back.config.kind, BaselineKind::irm);
  EXPECT_EQ(back.config.lambda, m.config.lambda);
  EXPECT_EQ(back.y_mean, m.y_mean);
  EXPECT_TRUE(same_bytes(predict(back, d.envs[2].x), predict(m, d.envs[2].x)));
  EXPECT_EQ(trace_csv(back), trace_csv(m));
  EXPECT_EQ(trace_csv(m).substr(0, 19), "epoch,risk,penalty\n");
  EXPECT_THROW(baseline_from_json(Json{{"kind", "cirrl_representation"}}), DataError);
}
