#pragma once

// Dataset CSV files (`env,y,x1..xd[,z1..zk]`) and the generator manifest.

#include "cirrl/dataset.hpp"
#include "cirrl/scm.hpp"
#include "cirrl/serialize.hpp"

#include <string>

namespace cirrl::io {

/// %.17g, the rendering used by every CSV writer.
std::string format_double(double v);

std::string read_text(const std::string& path);
/// Creates parent directories; throws IoError on failure.
void write_text(const std::string& path, const std::string& content);

std::string dataset_csv(const MultiEnvDataset& data, bool include_latents = true);
void write_dataset_csv(const std::string& path, const MultiEnvDataset& data, bool include_latents = true);

/// Rows are grouped by env label in order of first appearance. ParseError carries the 1-based line.
MultiEnvDataset parse_dataset_csv(const std::string& text, bool require_reference = true);
MultiEnvDataset load_csv_dataset(const std::string& path, bool require_reference = true);

Json to_json(const scm::GenConfig& cfg);
scm::GenConfig gen_config_from_json(const Json& j);
Json to_json(const scm::ScmSystem& sys);
scm::ScmSystem system_from_json(const Json& j);
/// Law of a generated test environment (samples excluded).
Json test_law_json(const scm::TestEnvironment& test);

}  // namespace cirrl::io
