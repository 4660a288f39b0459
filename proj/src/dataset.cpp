#include "cirrl/dataset.hpp"

#include "cirrl/errors.hpp"

#include <set>
#include <string>

namespace cirrl {

Eigen::Index MultiEnvDataset::total_size() const {
  Eigen::Index n = 0;
  for (const auto& e : envs) n += e.size();
  return n;
}

bool MultiEnvDataset::has_env(int label) const {
  for (const auto& e : envs)
    if (e.label == label) return true;
  return false;
}

std::size_t MultiEnvDataset::position(int label) const {
  for (std::size_t i = 0; i < envs.size(); ++i)
    if (envs[i].label == label) return i;
  throw DataError("dataset has no environment " + std::to_string(label));
}

const EnvData& MultiEnvDataset::env(int label) const { return envs[position(label)]; }

std::vector<int> MultiEnvDataset::labels() const {
  std::vector<int> out;
  for (const auto& e : envs) out.push_back(e.label);
  return out;
}

bool MultiEnvDataset::has_latents() const {
  if (envs.empty()) return false;
  for (const auto& e : envs)
    if (!e.has_latents()) return false;
  return true;
}

void MultiEnvDataset::validate() const {
  if (envs.empty()) throw DataError("dataset has no environments");
  std::set<int> seen;
  const auto d = envs.front().x.cols();
  for (const auto& e : envs) {
    if (!seen.insert(e.label).second) throw DataError("duplicate environment label " + std::to_string(e.label));
    if (e.x.cols() != d) throw DataError("environment " + std::to_string(e.label) + " has a different width");
    if (e.y.size() != e.x.rows()) throw DataError("environment " + std::to_string(e.label) + ": X and Y lengths differ");
    if (e.has_latents() && e.z_true.rows() != e.x.rows())
      throw DataError("environment " + std::to_string(e.label) + ": latent rows differ from X rows");
  }
  if (!seen.count(0)) throw ContractError("dataset lacks the reference environment 0");
  const EnvData& ref = env(0);
  if ((ref.delta_mean.size() && !ref.delta_mean.isZero(0.0)) || (ref.delta_cov.size() && !ref.delta_cov.isZero(0.0)))
    throw DataError("reference environment must carry zero intervention moments");
}

}  // namespace cirrl
