#include "cirrl/config.hpp"
#include "cirrl/dataset_io.hpp"
#include "cirrl/errors.hpp"
#include "cirrl/experiment.hpp"
#include "cirrl/robustness.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

using namespace cirrl;
using namespace cirrl::harness;
using cirrl::testing::same_bytes;
namespace fs = std::filesystem;

namespace {

const std::string kTiny = std::string(CIRRL_SOURCE_DIR) + "/tests/data/tiny.toml";

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cirrl_test_" + name);
  fs::remove_all(p);
  return p;
}

config::ExperimentConfig tiny() { return config::load_experiment(kTiny); }

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(DatasetCsv, RoundTripIsExact) {
  scm::GenConfig g;
  g.n_per_env = 40;
  const auto data = scm::generate_train(g).data;
  const auto back = io::parse_dataset_csv(io::dataset_csv(data));
  ASSERT_EQ(back.envs.size(), data.envs.size());
  for (std::size_t e = 0; e < data.envs.size(); ++e) {
    EXPECT_EQ(back.envs[e].label, data.envs[e].label);
    EXPECT_TRUE(same_bytes(back.envs[e].x, data.envs[e].x));
    EXPECT_TRUE(same_bytes(back.envs[e].y, data.envs[e].y));
    EXPECT_TRUE(same_bytes(back.envs[e].z_true, data.envs[e].z_true));
  }
  const auto no_latents = io::parse_dataset_csv(io::dataset_csv(data, false));
  EXPECT_FALSE(no_latents.has_latents());
}

TEST(DatasetCsv, ShapeFromHeader) {
  const std::string text =
      "env,y,x1,x2,x3\n"
      "0,1.5,1,2,3\n"
      "1,2.5,4,5,6\n"
      "0,0.5,7,8,9\n";
  const auto d = io::parse_dataset_csv(text);
  EXPECT_EQ(d.dim(), 3);
  EXPECT_EQ(d.envs.size(), 2u);
  EXPECT_EQ(d.env(0).size(), 2);
  EXPECT_EQ(d.env(0).x(1, 2), 9.0);
  EXPECT_FALSE(d.has_latents());
}

TEST(DatasetCsv, ParseErrorNamesTheLine) {
  std::ostringstream os;
  os << "env,y,x1,x2\n";
  for (int i = 2; i <= 20; ++i) os << (i % 2) << ",1.0," << (i == 17 ? "abc" : "2.0") << ",3.0\n";
  try {
    io::parse_dataset_csv(os.str());
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 17);
    EXPECT_NE(std::string(e.what()).find("17"), std::string::npos);
  }
}

TEST(DatasetCsv, MissingReferenceAndRaggedRows) {
  EXPECT_THROW(io::parse_dataset_csv("env,y,x1\n1,0,0\n2,0,0\n"), ContractError);
  EXPECT_NO_THROW(io::parse_dataset_csv("env,y,x1\n1,0,0\n", false));
  EXPECT_THROW(io::parse_dataset_csv("env,y,x1,x2\n0,0,0\n"), ParseError);
  EXPECT_THROW(io::load_csv_dataset("/nonexistent/file.csv"), IoError);
}

TEST(Config, ReferenceFileParses) {
  const auto cfg = config::load_experiment(std::string(CIRRL_SOURCE_DIR) + "/configs/reference.toml");
  EXPECT_EQ(cfg.seeds.size(), 10u);
  EXPECT_EQ(cfg.repr.width, 400);
  EXPECT_EQ(cfg.repr.lr, 1e-4);
  EXPECT_EQ(cfg.irm.lambda, 100.0);
  EXPECT_EQ(cfg.families.size(), 3u);
  EXPECT_FALSE(cfg.csv_path.has_value());
}

TEST(Config, UnknownKeysAndBadValuesAreRejected) {
  EXPECT_THROW(config::experiment_from_toml("[representation]\nwidht = 3\n"), InvalidConfigError);
  EXPECT_THROW(config::experiment_from_toml("[nonsense]\nx = 1\n"), InvalidConfigError);
  EXPECT_THROW(config::experiment_from_toml("[experiment]\nname = unquoted\n"), Error);
  EXPECT_THROW(config::experiment_from_toml("[drig]\ngammas = [0, -1]\n"), InvalidConfigError);
  EXPECT_THROW(config::experiment_from_toml("[drig]\ngammas = [0, 1\n"), ParseError);
  const auto c = config::experiment_from_toml("[drig]\ngammas = [0, 2.5]  # comment\n[irm]\nenabled = false\n");
  EXPECT_EQ(c.gammas, (std::vector<double>{0.0, 2.5}));
  EXPECT_FALSE(c.run_irm);
  EXPECT_EQ(config::parse_number_list("0,1,5.5"), (std::vector<double>{0.0, 1.0, 5.5}));
}

TEST(Config, JsonEchoesSettings) {
  const auto j = config::to_json(tiny());
  EXPECT_EQ(j.at("representation").at("batch_size").get<int>(), 64);
  EXPECT_EQ(j.at("name").get<std::string>(), "tiny");
}

TEST(Pool, RunsEveryJobAndRethrowsFirstError) {
  std::vector<int> hit(20, 0);
  run_jobs(20, [&](std::size_t i) { hit[i] = 1; });
  EXPECT_EQ(std::count(hit.begin(), hit.end(), 1), 20);
  try {
    run_jobs(6, [](std::size_t i) {
      if (i == 2 || i == 4) throw DataError("job " + std::to_string(i));
    });
    FAIL();
  } catch (const DataError& e) {
    EXPECT_STREQ(e.what(), "job 2");
  }
}

TEST(Results, RowCountFollowsGrid) {
  auto cfg = tiny();
  cfg.seeds = {0};
  const auto sd = generate_seed(cfg, 0);
  EXPECT_EQ(sd.tests.size(), 4u);
  const auto models = train_seed(cfg, 0, sd.train);
  std::vector<CellError> errors;
  const auto rows = evaluate_seed(cfg, 0, sd, models, &errors);
  EXPECT_TRUE(errors.empty());
  // per (method, gamma): train_mse, 5 env MSEs, plugin risk, 4 OOD cells; cirrl adds the final loss
  const std::size_t per_cell = 1 + 5 + 1 + 4;
  EXPECT_EQ(rows.size(), 4 * 3 * per_cell + 3);
  const std::string csv = results_csv(rows);
  EXPECT_EQ(count_lines(csv), rows.size() + 1);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "run_id,seed,method,gamma,eta,family,metric,value");
}

TEST(Results, OracleAtGammaZeroIsOlsOnLatents) {
  auto cfg = tiny();
  cfg.gen.n_per_env = 2000;
  cfg.gammas = {0.0};
  cfg.etas = {0.0};
  cfg.families = {scm::NoiseFamily::gaussian};
  cfg.n_test = 20000;
  cfg.run_erm = cfg.run_irm = false;
  scm::GenConfig g = cfg.gen;
  g.seed = 3;
  const auto sys = scm::generate_train(g).system;
  const auto sd = generate_seed(cfg, 3);
  const auto models = train_seed(cfg, 3, sd.train);
  const auto rows = evaluate_seed(cfg, 3, sd, models, nullptr);

  const auto& ref = sd.train.env(0);
  DenseMatrix design(ref.size(), 3);
  design << DenseMatrix::Ones(ref.size(), 1), ref.z_true;
  const Vector coef = (design.transpose() * design).ldlt().solve(design.transpose() * ref.y);
  const double ols_mse = (design * coef - ref.y).squaredNorm() / static_cast<double>(ref.size());
  const double irreducible = robust::population_env_mses(sys, coef.tail(2))[0];
  int seen = 0;
  for (const auto& r : rows) {
    if (r.method != "oracle") continue;
    if (r.metric == "env_mse_0") {
      EXPECT_NEAR(r.value, ols_mse, 1e-10);
      ++seen;
    }
    if (r.metric == "ood_mse") {
      EXPECT_LE(std::abs(r.value / irreducible - 1.0), 0.05);
      ++seen;
    }
  }
  EXPECT_EQ(seen, 2);
}

TEST(Results, FailedCellsBecomeNanRows) {
  auto cfg = tiny();
  cfg.seeds = {0};
  cfg.run_erm = cfg.run_irm = false;
  const auto sd = generate_seed(cfg, 0);
  auto models = train_seed(cfg, 0, sd.train);
  SeedData broken = sd;
  for (auto& t : broken.tests) t.data.x.conservativeResize(Eigen::NoChange, 3);  // wrong width for the encoder
  std::vector<CellError> errors;
  const auto rows = evaluate_seed(cfg, 0, broken, models, &errors);
  int nan = 0;
  for (const auto& r : rows)
    if (r.method == "cirrl" && r.metric == "ood_mse") nan += std::isnan(r.value);
  EXPECT_EQ(nan, 3 * 4);
  EXPECT_EQ(errors.size(), 3u * 4u);
  EXPECT_NE(errors_csv(errors).find("ood eta=0 gaussian"), std::string::npos);
}

TEST(Pipeline, FilesDeterminismAndCheckpointReplay) {
  const auto cfg = tiny();
  const fs::path a = scratch("sweep_a"), b = scratch("sweep_b");
  cmd_sweep(cfg, a.string());
  cmd_sweep(cfg, b.string());
  for (auto seed : cfg.seeds) {
    const fs::path dir = a / ("seed_" + std::to_string(seed));
    for (const char* f : {"train.csv", "manifest.json", "test_eta0_gaussian.csv", "test_eta10_chi2.csv",
                          "checkpoints/repr.json", "checkpoints/erm.json", "checkpoints/irm.json",
                          "checkpoints/repr_trace.csv", "fits/drig_gamma5.json"})
      EXPECT_TRUE(fs::exists(dir / f)) << dir / f;
  }
  const std::string ra = io::read_text((a / "results.csv").string());
  EXPECT_EQ(ra, io::read_text((b / "results.csv").string()));
  EXPECT_EQ(io::read_text((a / "seed_1/checkpoints/repr.json").string()),
            io::read_text((b / "seed_1/checkpoints/repr.json").string()));

  // evaluation from files equals evaluation in memory
  std::vector<ResultRow> rows;
  for (auto seed : cfg.seeds) {
    const auto sd = generate_seed(cfg, seed);
    const auto m = train_seed(cfg, seed, sd.train);
    const auto r = evaluate_seed(cfg, seed, sd, m, nullptr);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  EXPECT_EQ(results_csv(rows), ra);

  const auto manifest = Json::parse(io::read_text((a / "seed_0/manifest.json").string()));
  EXPECT_EQ(manifest.at("tests").size(), 4u);
  for (const auto& t : manifest.at("tests")) {
    if (t.at("eta").get<double>() != 0.0) continue;
    for (const auto& row : t.at("xi").at("values"))
      for (const auto& v : row) EXPECT_EQ(v.get<double>(), 0.0);
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Pipeline, AlphaOverrideReachesCheckpoint) {
  auto cfg = tiny();
  cfg.seeds = {4};
  cfg.repr.alpha = 0.37;
  cfg.run_erm = cfg.run_irm = false;
  const fs::path out = scratch("alpha");
  cmd_generate(cfg, out.string());
  cmd_train(cfg, out.string());
  const auto j = Json::parse(io::read_text((out / "seed_4/checkpoints/repr.json").string()));
  EXPECT_EQ(j.at("config").at("alpha").get<double>(), 0.37);
  EXPECT_EQ(j.at("alpha").get<double>(), 0.37);
  fs::remove_all(out);
}

TEST(Pipeline, ElbowTableHasOneRowPerDim) {
  auto cfg = tiny();
  cfg.seeds = {0};
  const fs::path out = scratch("elbow");
  cmd_generate(cfg, out.string());
  cmd_elbow(cfg, out.string());
  const std::string csv = io::read_text((out / "seed_0/elbow.csv").string());
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "dim,final_loss");
  EXPECT_EQ(count_lines(csv), 4u);
  fs::remove_all(out);
}

TEST(Pipeline, CsvInputSkipsGeneration) {
  auto cfg = tiny();
  cfg.seeds = {0};
  const fs::path out = scratch("csv_input");
  cmd_generate(cfg, out.string());
  cfg.csv_path = (out / "seed_0/train.csv").string();
  cfg.run_irm = false;
  EXPECT_THROW(generate_seed(cfg, 0), ContractError);
  cmd_sweep(cfg, (out / "from_csv").string());
  EXPECT_TRUE(fs::exists(out / "from_csv/results.csv"));
  fs::remove_all(out);
}
