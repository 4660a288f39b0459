#pragma once

// Experiment orchestration: data generation, training, evaluation over the
// gamma / eta grids and CSV result emission.

#include "cirrl/baselines.hpp"
#include "cirrl/config.hpp"
#include "cirrl/drig.hpp"
#include "cirrl/repr.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace cirrl::harness {

struct ResultRow {
  std::string run_id;
  std::uint64_t seed = 0;
  std::string method;
  double gamma = 0.0;
  /// Empty for metrics that do not depend on a test environment.
  std::optional<double> eta;
  std::string family;
  std::string metric;
  double value = 0.0;
};

/// Sorts canonically and renders `run_id,seed,method,gamma,eta,family,metric,value`.
std::string results_csv(std::vector<ResultRow> rows);

struct CellError {
  std::string run_id;
  std::string method;
  double gamma = 0.0;
  std::string message;
};

std::string errors_csv(std::vector<CellError> errors);

/// Worker pool size: CIRRL_THREADS when set, otherwise the hardware concurrency.
int worker_limit();
/// Runs job(0..n-1) over the pool. With more than one worker each runs its kernels single-threaded.
/// The first exception (by job index) is rethrown after all jobs finish.
void run_jobs(std::size_t n, const std::function<void(std::size_t)>& job);

struct TestSet {
  double eta = 0.0;
  scm::NoiseFamily family = scm::NoiseFamily::gaussian;
  EnvData data;
};

struct SeedData {
  MultiEnvDataset train;
  std::vector<TestSet> tests;
};

struct TrainedModels {
  repr::ReprModel repr;
  std::optional<baselines::BaselineModel> erm;
  std::optional<baselines::BaselineModel> irm;
};

std::string run_id(std::uint64_t seed);
std::string seed_dir(const std::string& out, std::uint64_t seed);
std::string test_file_name(double eta, scm::NoiseFamily family);

/// Generated training data plus one test environment per (eta, family); fills `manifest` when given.
SeedData generate_seed(const config::ExperimentConfig& cfg, std::uint64_t seed, Json* manifest = nullptr);

TrainedModels train_seed(const config::ExperimentConfig& cfg, std::uint64_t seed, const MultiEnvDataset& train);

/// Result rows of one seed for every method and gamma. Failed cells become NaN rows and an entry in `errors`.
std::vector<ResultRow> evaluate_seed(const config::ExperimentConfig& cfg, std::uint64_t seed, const SeedData& data,
                                     const TrainedModels& models, std::vector<CellError>* errors,
                                     std::map<double, drig::DrigFit>* fits = nullptr);

void cmd_generate(const config::ExperimentConfig& cfg, const std::string& out);
void cmd_train(const config::ExperimentConfig& cfg, const std::string& out);
void cmd_evaluate(const config::ExperimentConfig& cfg, const std::string& out);
void cmd_elbow(const config::ExperimentConfig& cfg, const std::string& out);
/// generate, train, evaluate.
void cmd_sweep(const config::ExperimentConfig& cfg, const std::string& out);

}  // namespace cirrl::harness
