#include "cirrl/experiment.hpp"

#include "cirrl/dataset_io.hpp"
#include "cirrl/errors.hpp"
#include "cirrl/robustness.hpp"

#include <omp.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>
#include <tuple>

namespace cirrl::harness {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string short_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

MultiEnvDataset load_train(const config::ExperimentConfig& cfg, const std::string& out, std::uint64_t seed) {
  if (cfg.csv_path) return io::load_csv_dataset(*cfg.csv_path);
  return io::load_csv_dataset(seed_dir(out, seed) + "/train.csv");
}

SeedData load_seed(const config::ExperimentConfig& cfg, const std::string& out, std::uint64_t seed) {
  SeedData sd;
  sd.train = load_train(cfg, out, seed);
  if (cfg.csv_path) return sd;
  for (double eta : cfg.etas) {
    for (auto fam : cfg.families) {
      auto ds = io::load_csv_dataset(seed_dir(out, seed) + "/" + test_file_name(eta, fam), false);
      if (ds.envs.size() != 1) throw DataError("test file must contain exactly one environment");
      sd.tests.push_back({eta, fam, std::move(ds.envs.front())});
    }
  }
  return sd;
}

TrainedModels load_models(const config::ExperimentConfig& cfg, const std::string& out, std::uint64_t seed) {
  const std::string dir = seed_dir(out, seed) + "/checkpoints/";
  TrainedModels m;
  m.repr = repr::repr_from_json(Json::parse(io::read_text(dir + "repr.json")));
  if (cfg.run_erm) m.erm = baselines::baseline_from_json(Json::parse(io::read_text(dir + "erm.json")));
  if (cfg.run_irm) m.irm = baselines::baseline_from_json(Json::parse(io::read_text(dir + "irm.json")));
  return m;
}

/// Raw-scale predictions for one environment block.
using EnvPredictor = std::function<Vector(const EnvData&)>;

}  // namespace

std::string run_id(std::uint64_t seed) { return "seed" + std::to_string(seed); }

std::string seed_dir(const std::string& out, std::uint64_t seed) { return out + "/seed_" + std::to_string(seed); }

std::string test_file_name(double eta, scm::NoiseFamily family) {
  return "test_eta" + short_number(eta) + "_" + scm::to_string(family) + ".csv";
}

std::string results_csv(std::vector<ResultRow> rows) {
  const auto key = [](const ResultRow& r) {
    return std::make_tuple(r.seed, r.run_id, r.method, r.gamma, r.eta.has_value(), r.eta.value_or(0.0), r.family, r.metric);
  };
  std::stable_sort(rows.begin(), rows.end(), [&](const ResultRow& a, const ResultRow& b) { return key(a) < key(b); });
  std::string out = "run_id,seed,method,gamma,eta,family,metric,value\n";
  for (const auto& r : rows) {
    out += r.run_id + ',' + std::to_string(r.seed) + ',' + r.method + ',' + io::format_double(r.gamma) + ',' +
           (r.eta ? io::format_double(*r.eta) : std::string()) + ',' + r.family + ',' + r.metric + ',' +
           io::format_double(r.value) + '\n';
  }
  return out;
}

std::string errors_csv(std::vector<CellError> errors) {
  std::stable_sort(errors.begin(), errors.end(), [](const CellError& a, const CellError& b) {
    return std::tie(a.run_id, a.method, a.gamma) < std::tie(b.run_id, b.method, b.gamma);
  });
  std::string out = "run_id,method,gamma,error\n";
  for (const auto& e : errors) {
    std::string msg = e.message;
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::replace(msg.begin(), msg.end(), '"', '\'');
    out += e.run_id + ',' + e.method + ',' + io::format_double(e.gamma) + ",\"" + msg + "\"\n";
  }
  return out;
}

int worker_limit() {
  if (const char* s = std::getenv("CIRRL_THREADS")) {
    const int v = std::atoi(s);
    if (v >= 1) return v;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void run_jobs(std::size_t n, const std::function<void(std::size_t)>& job) {
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(worker_limit()), n);
  std::vector<std::exception_ptr> errors(n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        omp_set_num_threads(1);
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            job(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

SeedData generate_seed(const config::ExperimentConfig& cfg, std::uint64_t seed, Json* manifest) {
  if (cfg.csv_path) throw ContractError("generate: configuration reads data from a CSV file");
  scm::GenConfig gen = cfg.gen;
  gen.seed = seed;
  auto generated = scm::generate_train(gen);
  SeedData sd;
  sd.train = std::move(generated.data);
  Json tests = Json::array();
  std::uint64_t idx = 0;
  for (double eta : cfg.etas) {
    for (auto fam : cfg.families) {
      scm::GenConfig tc = gen;
      tc.eta = eta;
      tc.noise_family = fam;
      const std::uint64_t test_seed = derive_seed(seed, 1000 + idx++);
      auto test = scm::generate_test(generated.system, tc, cfg.n_test, test_seed);
      Json law = io::test_law_json(test);
      law["file"] = test_file_name(eta, fam);
      law["seed"] = test_seed;
      tests.push_back(std::move(law));
      sd.tests.push_back({eta, fam, std::move(test.data)});
    }
  }
  if (manifest) {
    *manifest = Json{{"format", "cirrl-dataset-1"},
                     {"seed", seed},
                     {"gen_config", io::to_json(gen)},
                     {"system", io::to_json(generated.system)},
                     {"xi", matrix_to_json(scm::xi_eta(generated.system.interventions, gen.eta, generated.system.num_envs))},
                     {"train_file", "train.csv"},
                     {"tests", tests}};
  }
  return sd;
}

TrainedModels train_seed(const config::ExperimentConfig& cfg, std::uint64_t seed, const MultiEnvDataset& train) {
  TrainedModels m;
  std::vector<std::string> tasks{"repr"};
  if (cfg.run_erm) tasks.push_back("erm");
  if (cfg.run_irm) tasks.push_back("irm");
  std::vector<std::string> failures(tasks.size());
  std::mutex mu;
  run_jobs(tasks.size(), [&](std::size_t i) {
    try {
      if (tasks[i] == "repr") {
        auto rc = cfg.repr;
        rc.seed = seed;
        auto model = repr::train_representation(train, rc);
        std::lock_guard lock(mu);
        m.repr = std::move(model);
      } else {
        auto bc = tasks[i] == "erm" ? cfg.erm : cfg.irm;
        bc.seed = seed;
        auto model = tasks[i] == "erm" ? baselines::train_erm(train, bc) : baselines::train_irm(train, bc);
        std::lock_guard lock(mu);
        (tasks[i] == "erm" ? m.erm : m.irm) = std::move(model);
      }
    } catch (const std::exception& e) {
      failures[i] = "[" + tasks[i] + " " + run_id(seed) + "] " + e.what();
    }
  });
  std::string msg;
  for (const auto& f : failures)
    if (!f.empty()) msg += (msg.empty() ? "" : "; ") + f;
  if (!msg.empty()) throw Error(msg);
  return m;
}

std::vector<ResultRow> evaluate_seed(const config::ExperimentConfig& cfg, std::uint64_t seed, const SeedData& data,
                                     const TrainedModels& models, std::vector<CellError>* errors,
                                     std::map<double, drig::DrigFit>* fits) {
  const auto& train = data.train;
  train.validate();
  const std::string rid = run_id(seed);

  std::vector<int> labels{0};
  std::vector<Eigen::Index> sizes{train.env(0).size()};
  for (const auto& e : train.envs)
    if (e.label != 0) {
      labels.push_back(e.label);
      sizes.push_back(e.size());
    }
  const auto weights = drig::make_weights(sizes, cfg.weights);

  std::vector<std::string> methods{"cirrl"};
  if (train.has_latents()) methods.push_back("oracle");
  if (models.erm) methods.push_back("erm");
  if (models.irm) methods.push_back("irm");

  std::vector<ResultRow> rows;
  std::mutex mu;
  const std::size_t cells = methods.size() * cfg.gammas.size();
  run_jobs(cells, [&](std::size_t cell) {
    const std::string& method = methods[cell / cfg.gammas.size()];
    const double gamma = cfg.gammas[cell % cfg.gammas.size()];
    std::vector<ResultRow> out;
    const auto emit = [&](const std::string& metric, std::optional<double> eta, const std::string& family, double v) {
      out.push_back({rid, seed, method, gamma, eta, family, metric, v});
    };
    const auto emit_all_nan = [&] {
      out.clear();
      emit("train_mse", std::nullopt, "", kNaN);
      for (int l : labels) emit("env_mse_" + std::to_string(l), std::nullopt, "", kNaN);
      emit("plugin_risk", std::nullopt, "", kNaN);
      for (const auto& t : data.tests) emit("ood_mse", t.eta, scm::to_string(t.family), kNaN);
      if (method == "cirrl") emit("loss_rl_final", std::nullopt, "", kNaN);
    };
    try {
      EnvPredictor predict;
      if (method == "cirrl") {
        auto model = std::make_shared<drig::CirrlModel>(drig::fit_cirrl(models.repr, train, gamma, cfg.weights, cfg.eq5_literal));
        if (fits) {
          std::lock_guard lock(mu);
          (*fits)[gamma] = model->fit;
        }
        predict = [model](const EnvData& e) { return drig::predict_raw(*model, e.x); };
      } else if (method == "oracle") {
        std::vector<int> ls;
        std::vector<DenseMatrix> zs;
        std::vector<Vector> ys;
        std::vector<Eigen::Index> sz;
        for (const auto& e : train.envs) {
          ls.push_back(e.label);
          zs.push_back(e.z_true);
          ys.push_back(e.y);
          sz.push_back(e.size());
        }
        auto fit = std::make_shared<drig::DrigFit>(
            drig::drig_closed_form(drig::center(ls, zs, ys, drig::make_weights(sz, cfg.weights)), gamma, cfg.eq5_literal));
        predict = [fit](const EnvData& e) {
          if (!e.has_latents()) throw DataError("oracle: environment has no latent columns");
          return Vector(drig::predict_latent(*fit, e.z_true).array() + fit->y_mean);
        };
      } else {
        const auto& bm = method == "erm" ? *models.erm : *models.irm;
        predict = [&bm](const EnvData& e) { return baselines::predict(bm, e.x); };
      }

      std::vector<double> env_mse;
      double sse = 0.0;
      Eigen::Index n = 0;
      for (int l : labels) {
        const auto& e = train.env(l);
        env_mse.push_back(robust::mse(predict(e), e.y));
        sse += env_mse.back() * static_cast<double>(e.size());
        n += e.size();
      }
      emit("train_mse", std::nullopt, "", sse / static_cast<double>(n));
      for (std::size_t i = 0; i < labels.size(); ++i) emit("env_mse_" + std::to_string(labels[i]), std::nullopt, "", env_mse[i]);
      emit("plugin_risk", std::nullopt, "", robust::plugin_risk(env_mse, weights, gamma));
      for (const auto& t : data.tests) {
        double v = kNaN;
        try {
          v = robust::mse(predict(t.data), t.data.y);
        } catch (const std::exception& e) {
          if (errors) {
            std::lock_guard lock(mu);
            errors->push_back({rid, method, gamma, "ood eta=" + short_number(t.eta) + " " + scm::to_string(t.family) + ": " + e.what()});
          }
        }
        emit("ood_mse", t.eta, scm::to_string(t.family), v);
      }
      if (method == "cirrl") emit("loss_rl_final", std::nullopt, "", models.repr.final_loss());
    } catch (const std::exception& e) {
      emit_all_nan();
      if (errors) {
        std::lock_guard lock(mu);
        errors->push_back({rid, method, gamma, e.what()});
      }
    }
    std::lock_guard lock(mu);
    rows.insert(rows.end(), out.begin(), out.end());
  });
  return rows;
}

void cmd_generate(const config::ExperimentConfig& cfg, const std::string& out) {
  cfg.validate();
  run_jobs(cfg.seeds.size(), [&](std::size_t i) {
    const auto seed = cfg.seeds[i];
    Json manifest;
    const auto sd = generate_seed(cfg, seed, &manifest);
    const std::string dir = seed_dir(out, seed);
    io::write_dataset_csv(dir + "/train.csv", sd.train);
    for (const auto& t : sd.tests) {
      MultiEnvDataset one;
      one.envs.push_back(t.data);
      io::write_dataset_csv(dir + "/" + test_file_name(t.eta, t.family), one);
    }
    io::write_text(dir + "/manifest.json", manifest.dump(2) + "\n");
  });
}

void cmd_train(const config::ExperimentConfig& cfg, const std::string& out) {
  cfg.validate();
  for (auto seed : cfg.seeds) {
    const auto train = load_train(cfg, out, seed);
    const auto m = train_seed(cfg, seed, train);
    const std::string dir = seed_dir(out, seed) + "/checkpoints/";
    io::write_text(dir + "repr.json", repr::to_json(m.repr).dump() + "\n");
    io::write_text(dir + "repr_trace.csv", repr::trace_csv(m.repr));
    if (m.erm) {
      io::write_text(dir + "erm.json", baselines::to_json(*m.erm).dump() + "\n");
      io::write_text(dir + "erm_trace.csv", baselines::trace_csv(*m.erm));
    }
    if (m.irm) {
      io::write_text(dir + "irm.json", baselines::to_json(*m.irm).dump() + "\n");
      io::write_text(dir + "irm_trace.csv", baselines::trace_csv(*m.irm));
    }
  }
  io::write_text(out + "/experiment.json", config::to_json(cfg).dump(2) + "\n");
}

void cmd_evaluate(const config::ExperimentConfig& cfg, const std::string& out) {
  cfg.validate();
  std::vector<ResultRow> rows;
  std::vector<CellError> errors;
  for (auto seed : cfg.seeds) {
    const auto data = load_seed(cfg, out, seed);
    const auto models = load_models(cfg, out, seed);
    std::map<double, drig::DrigFit> fits;
    auto r = evaluate_seed(cfg, seed, data, models, &errors, &fits);
    rows.insert(rows.end(), r.begin(), r.end());
    for (const auto& [gamma, fit] : fits)
      io::write_text(seed_dir(out, seed) + "/fits/drig_gamma" + short_number(gamma) + ".json", drig::to_json(fit).dump(2) + "\n");
  }
  io::write_text(out + "/results.csv", results_csv(std::move(rows)));
  io::write_text(out + "/errors.csv", errors_csv(std::move(errors)));
}

void cmd_elbow(const config::ExperimentConfig& cfg, const std::string& out) {
  cfg.validate();
  for (auto seed : cfg.seeds) {
    const auto train = load_train(cfg, out, seed);
    auto rc = cfg.repr;
    rc.seed = seed;
    const auto rows = repr::latent_dim_sweep(train, rc, cfg.elbow_dims);
    std::string csv = "dim,final_loss\n";
    std::string errs;
    for (const auto& r : rows) {
      csv += std::to_string(r.dim) + ',' + io::format_double(r.final_loss) + '\n';
      if (!r.error.empty()) errs += std::to_string(r.dim) + ": " + r.error + '\n';
    }
    io::write_text(seed_dir(out, seed) + "/elbow.csv", csv);
    if (!errs.empty()) io::write_text(seed_dir(out, seed) + "/elbow_errors.log", errs);
  }
}

void cmd_sweep(const config::ExperimentConfig& cfg, const std::string& out) {
  if (!cfg.csv_path) cmd_generate(cfg, out);
  cmd_train(cfg, out);
  cmd_evaluate(cfg, out);
}

}  // namespace cirrl::harness
