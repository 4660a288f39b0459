#include "cirrl/dataset_io.hpp"

#include "cirrl/errors.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace cirrl::io {

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

double parse_cell(std::string_view cell, int line) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty())
    throw ParseError("non-numeric cell '" + std::string(cell) + "' at line " + std::to_string(line), line);
  return v;
}

int parse_label(std::string_view cell, int line) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty())
    throw ParseError("environment label '" + std::string(cell) + "' is not an integer at line " + std::to_string(line), line);
  return v;
}

/// Counts consecutive `prefix1, prefix2, ...` columns starting at `from`.
int count_run(const std::vector<std::string_view>& head, std::size_t from, const std::string& prefix) {
  int n = 0;
  while (from + static_cast<std::size_t>(n) < head.size() &&
         head[from + static_cast<std::size_t>(n)] == prefix + std::to_string(n + 1))
    ++n;
  return n;
}

Json intervention_json(const scm::EnvIntervention& iv) {
  return Json{{"mean", vector_to_json(iv.mean)}, {"cov", matrix_to_json(iv.cov)}};
}

}  // namespace

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  std::error_code ec;
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path(), ec);
  if (ec) throw IoError("cannot create directory for '" + path + "': " + ec.message());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << content;
  out.flush();
  if (!out) throw IoError("write to '" + path + "' failed");
}

std::string dataset_csv(const MultiEnvDataset& data, bool include_latents) {
  const int d = data.dim();
  const bool z = include_latents && data.has_latents();
  const Eigen::Index k = z ? data.envs.front().z_true.cols() : 0;
  std::string out = "env,y";
  for (int j = 1; j <= d; ++j) out += ",x" + std::to_string(j);
  for (Eigen::Index j = 1; j <= k; ++j) out += ",z" + std::to_string(j);
  out += '\n';
  for (const auto& e : data.envs) {
    const std::string label = std::to_string(e.label);
    for (Eigen::Index i = 0; i < e.size(); ++i) {
      out += label;
      out += ',';
      out += format_double(e.y(i));
      for (Eigen::Index j = 0; j < d; ++j) {
        out += ',';
        out += format_double(e.x(i, j));
      }
      for (Eigen::Index j = 0; j < k; ++j) {
        out += ',';
        out += format_double(e.z_true(i, j));
      }
      out += '\n';
    }
  }
  return out;
}

void write_dataset_csv(const std::string& path, const MultiEnvDataset& data, bool include_latents) {
  write_text(path, dataset_csv(data, include_latents));
}

MultiEnvDataset parse_dataset_csv(const std::string& text, bool require_reference) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  if (!std::getline(in, line)) throw ParseError("empty dataset file", 1);
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto head = split_commas(line);
  if (head.size() < 3 || head[0] != "env" || head[1] != "y")
    throw ParseError("header must start with 'env,y,x1' (line 1)", 1);
  const int d = count_run(head, 2, "x");
  const int k = count_run(head, 2 + static_cast<std::size_t>(d), "z");
  if (d < 1 || head.size() != 2 + static_cast<std::size_t>(d + k))
    throw ParseError("malformed header: expected env,y,x1..xd[,z1..zk] (line 1)", 1);

  std::map<int, std::size_t> slot;
  std::vector<int> labels;
  std::vector<std::vector<double>> ys, xs, zs;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() != head.size())
      throw ParseError("line " + std::to_string(lineno) + " has " + std::to_string(cells.size()) + " cells, expected " +
                           std::to_string(head.size()),
                       lineno);
    const int label = parse_label(cells[0], lineno);
    auto [it, inserted] = slot.try_emplace(label, labels.size());
    if (inserted) {
      labels.push_back(label);
      ys.emplace_back();
      xs.emplace_back();
      zs.emplace_back();
    }
    const std::size_t s = it->second;
    ys[s].push_back(parse_cell(cells[1], lineno));
    for (int j = 0; j < d; ++j) xs[s].push_back(parse_cell(cells[2 + static_cast<std::size_t>(j)], lineno));
    for (int j = 0; j < k; ++j) zs[s].push_back(parse_cell(cells[2 + static_cast<std::size_t>(d + j)], lineno));
  }
  MultiEnvDataset out;
  for (std::size_t s = 0; s < labels.size(); ++s) {
    EnvData e;
    e.label = labels[s];
    const auto n = static_cast<Eigen::Index>(ys[s].size());
    e.y = Eigen::Map<const Vector>(ys[s].data(), n);
    e.x = Eigen::Map<const DenseMatrix>(xs[s].data(), n, d);
    if (k > 0) e.z_true = Eigen::Map<const DenseMatrix>(zs[s].data(), n, k);
    out.envs.push_back(std::move(e));
  }
  if (out.envs.empty()) throw ParseError("dataset has no rows", lineno);
  if (require_reference) out.validate();
  return out;
}

MultiEnvDataset load_csv_dataset(const std::string& path, bool require_reference) {
  return parse_dataset_csv(read_text(path), require_reference);
}

Json to_json(const scm::GenConfig& c) {
  Json j{{"k", c.k},
         {"d", c.d},
         {"num_envs", c.num_envs},
         {"n_per_env", c.n_per_env},
         {"decoder",
          {{"kind", c.decoder.kind == scm::DecoderKind::polynomial ? "polynomial" : "relu_net"},
           {"degree", c.decoder.degree},
           {"widths", c.decoder.widths}}},
         {"eta", c.eta},
         {"noise_family", scm::to_string(c.noise_family)},
         {"nu", c.nu},
         {"mu_v", c.mu_v ? vector_to_json(*c.mu_v) : Json(nullptr)},
         {"exclude_y", c.exclude_y},
         {"enforce_assumption1", c.enforce_assumption1},
         {"shrink_default_mean", c.shrink_default_mean},
         {"intervention_cov_norm", "spectral"},
         {"seed", c.seed}};
  if (c.noise_family == scm::NoiseFamily::chi2) j["chi2_rule"] = "dof=max(1,round(|E v|_1)); recentred to mu_v, scaled to diag(Xi - mu_v mu_v^T)";
  return j;
}

scm::GenConfig gen_config_from_json(const Json& j) {
  scm::GenConfig c;
  c.k = j.at("k").get<int>();
  c.d = j.at("d").get<int>();
  c.num_envs = j.at("num_envs").get<int>();
  c.n_per_env = j.at("n_per_env").get<int>();
  const auto& dec = j.at("decoder");
  c.decoder.kind = dec.at("kind").get<std::string>() == "polynomial" ? scm::DecoderKind::polynomial : scm::DecoderKind::relu_net;
  c.decoder.degree = dec.at("degree").get<int>();
  c.decoder.widths = dec.at("widths").get<std::vector<int>>();
  c.eta = j.at("eta").get<double>();
  c.noise_family = scm::noise_family_from_string(j.at("noise_family").get<std::string>());
  c.nu = j.at("nu").get<double>();
  if (!j.at("mu_v").is_null()) c.mu_v = vector_from_json(j.at("mu_v"));
  c.exclude_y = j.at("exclude_y").get<bool>();
  c.enforce_assumption1 = j.at("enforce_assumption1").get<bool>();
  c.shrink_default_mean = j.at("shrink_default_mean").get<bool>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

Json to_json(const scm::ScmSystem& s) {
  Json decoder;
  if (s.decoder.kind() == scm::DecoderKind::polynomial) {
    decoder = {{"kind", "polynomial"}, {"degree", s.decoder.degree()}, {"coeff", matrix_to_json(s.decoder.coeff())}};
  } else {
    decoder = {{"kind", "relu_net"}, {"net", nn::to_json(s.decoder.net())}};
  }
  Json ivs = Json::array();
  for (const auto& iv : s.interventions) ivs.push_back(intervention_json(iv));
  return Json{{"k", s.k},
              {"d", s.d},
              {"B", matrix_to_json(s.adjacency)},
              {"total_effect", matrix_to_json(s.total_effect)},
              {"eps_cov", matrix_to_json(s.eps_cov)},
              {"decoder", decoder},
              {"exclude_y_interventions", s.exclude_y_interventions},
              {"interventions", ivs},
              {"num_envs", s.num_envs}};
}

scm::ScmSystem system_from_json(const Json& j) {
  scm::ScmSystem s;
  s.k = j.at("k").get<int>();
  s.d = j.at("d").get<int>();
  s.adjacency = matrix_from_json(j.at("B"));
  s.total_effect = matrix_from_json(j.at("total_effect"));
  s.eps_cov = matrix_from_json(j.at("eps_cov"));
  const auto& dec = j.at("decoder");
  if (dec.at("kind").get<std::string>() == "polynomial") {
    s.decoder = scm::DecoderFn::polynomial(s.k, dec.at("degree").get<int>(), matrix_from_json(dec.at("coeff")));
  } else {
    s.decoder = scm::DecoderFn::relu_net(nn::mlp_from_json(dec.at("net")));
  }
  s.exclude_y_interventions = j.at("exclude_y_interventions").get<bool>();
  for (const auto& iv : j.at("interventions"))
    s.interventions.push_back({vector_from_json(iv.at("mean")), matrix_from_json(iv.at("cov"))});
  s.num_envs = j.at("num_envs").get<int>();
  return s;
}

Json test_law_json(const scm::TestEnvironment& t) {
  return Json{{"family", scm::to_string(t.family)},
              {"eta", t.eta},
              {"mu_v", vector_to_json(t.mu_v)},
              {"v_cov", matrix_to_json(t.v_cov)},
              {"xi", matrix_to_json(t.xi)},
              {"mean_shrink", t.mean_shrink},
              {"chi2_dof", t.chi2_dof},
              {"n", t.data.size()}};
}

}  // namespace cirrl::io
