#include "cirrl/config.hpp"

#include "cirrl/dataset_io.hpp"
#include "cirrl/errors.hpp"

#include <charconv>
#include <set>
#include <sstream>

namespace cirrl::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Drops a trailing `# comment` that is not inside a string.
std::string strip_comment(const std::string& s) {
  bool in_str = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') in_str = !in_str;
    if (s[i] == '#' && !in_str) return s.substr(0, i);
  }
  return s;
}

std::string unquote(const std::string& item, int line, bool* quoted) {
  if (item.size() >= 2 && item.front() == '"' && item.back() == '"') {
    *quoted = true;
    return item.substr(1, item.size() - 2);
  }
  if (item.find('"') != std::string::npos) throw ParseError("unbalanced quote at line " + std::to_string(line), line);
  return item;
}

template <typename T>
T parse_number(const std::string& s, const std::string& key, int line) {
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
    throw ParseError("key '" + key + "' at line " + std::to_string(line) + ": '" + s + "' is not a valid number", line);
  return v;
}

}  // namespace

TomlDoc TomlDoc::parse(const std::string& text) {
  TomlDoc doc;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::string s = trim(strip_comment(raw));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']' || s.size() < 3) throw ParseError("malformed section header at line " + std::to_string(line), line);
      section = trim(s.substr(1, s.size() - 2));
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value' at line " + std::to_string(line), line);
    const std::string key = trim(s.substr(0, eq));
    std::string value = trim(s.substr(eq + 1));
    if (key.empty() || value.empty()) throw ParseError("empty key or value at line " + std::to_string(line), line);
    const std::string full = section.empty() ? key : section + "." + key;
    if (doc.values_.count(full)) throw ParseError("duplicate key '" + full + "' at line " + std::to_string(line), line);
    TomlValue v;
    v.line = line;
    if (value.front() == '[') {
      if (value.back() != ']') throw ParseError("unterminated list at line " + std::to_string(line), line);
      v.is_list = true;
      const std::string body = trim(value.substr(1, value.size() - 2));
      if (!body.empty()) {
        std::string item;
        std::istringstream items(body);
        while (std::getline(items, item, ',')) {
          const std::string t = trim(item);
          if (t.empty()) throw ParseError("empty list element at line " + std::to_string(line), line);
          v.items.push_back(unquote(t, line, &v.quoted));
        }
      }
    } else {
      v.items.push_back(unquote(value, line, &v.quoted));
    }
    doc.values_.emplace(full, std::move(v));
  }
  return doc;
}

std::vector<std::string> TomlDoc::keys() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_) out.push_back(k);
  return out;
}

const TomlValue& TomlDoc::at(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw InvalidConfigError("missing config key '" + key + "'");
  return it->second;
}

namespace {

const std::string& scalar(const TomlValue& v, const std::string& key) {
  if (v.is_list || v.items.size() != 1)
    throw ParseError("key '" + key + "' at line " + std::to_string(v.line) + " must be a scalar", v.line);
  return v.items.front();
}

void require_list(const TomlValue& v, const std::string& key) {
  if (!v.is_list) throw ParseError("key '" + key + "' at line " + std::to_string(v.line) + " must be a list", v.line);
}

}  // namespace

int TomlDoc::get_int(const std::string& key) const {
  const auto& v = at(key);
  return parse_number<int>(scalar(v, key), key, v.line);
}

std::uint64_t TomlDoc::get_u64(const std::string& key) const {
  const auto& v = at(key);
  return parse_number<std::uint64_t>(scalar(v, key), key, v.line);
}

double TomlDoc::get_double(const std::string& key) const {
  const auto& v = at(key);
  return parse_number<double>(scalar(v, key), key, v.line);
}

bool TomlDoc::get_bool(const std::string& key) const {
  const auto& v = at(key);
  const auto& s = scalar(v, key);
  if (s == "true") return true;
  if (s == "false") return false;
  throw ParseError("key '" + key + "' at line " + std::to_string(v.line) + " must be true or false", v.line);
}

std::string TomlDoc::get_string(const std::string& key) const {
  const auto& v = at(key);
  const auto& s = scalar(v, key);
  if (!v.quoted) throw ParseError("key '" + key + "' at line " + std::to_string(v.line) + " must be a quoted string", v.line);
  return s;
}

std::vector<double> TomlDoc::get_doubles(const std::string& key) const {
  const auto& v = at(key);
  require_list(v, key);
  std::vector<double> out;
  for (const auto& s : v.items) out.push_back(parse_number<double>(s, key, v.line));
  return out;
}

std::vector<int> TomlDoc::get_ints(const std::string& key) const {
  const auto& v = at(key);
  require_list(v, key);
  std::vector<int> out;
  for (const auto& s : v.items) out.push_back(parse_number<int>(s, key, v.line));
  return out;
}

std::vector<std::uint64_t> TomlDoc::get_u64s(const std::string& key) const {
  const auto& v = at(key);
  require_list(v, key);
  std::vector<std::uint64_t> out;
  for (const auto& s : v.items) out.push_back(parse_number<std::uint64_t>(s, key, v.line));
  return out;
}

std::vector<std::string> TomlDoc::get_strings(const std::string& key) const {
  const auto& v = at(key);
  require_list(v, key);
  if (!v.items.empty() && !v.quoted)
    throw ParseError("key '" + key + "' at line " + std::to_string(v.line) + " must list quoted strings", v.line);
  return v.items;
}

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw InvalidConfigError("experiment: seeds must be nonempty");
  if (gammas.empty()) throw InvalidConfigError("drig: gamma grid must be nonempty");
  for (double g : gammas)
    if (!(g >= 0.0)) throw InvalidConfigError("drig: gamma values must be nonnegative");
  for (double e : etas)
    if (!(e >= 0.0)) throw InvalidConfigError("evaluation: eta values must be nonnegative");
  if (n_test < 1) throw InvalidConfigError("evaluation: n_test must be positive");
  if (!csv_path) gen.validate();
  repr.validate();
  if (run_erm) erm.validate();
  if (run_irm) irm.validate();
}

ExperimentConfig experiment_from_toml(const std::string& text) {
  const TomlDoc doc = TomlDoc::parse(text);
  ExperimentConfig c;
  std::set<std::string> used;
  const auto has = [&](const std::string& k) {
    if (!doc.has(k)) return false;
    used.insert(k);
    return true;
  };

  if (has("experiment.name")) c.name = doc.get_string("experiment.name");
  if (has("experiment.seeds")) c.seeds = doc.get_u64s("experiment.seeds");
  if (has("experiment.out_dir")) c.out_dir = doc.get_string("experiment.out_dir");

  auto& g = c.gen;
  if (has("generation.csv_path")) {
    const auto p = doc.get_string("generation.csv_path");
    if (!p.empty()) c.csv_path = p;
  }
  if (has("generation.k")) g.k = doc.get_int("generation.k");
  if (has("generation.d")) g.d = doc.get_int("generation.d");
  if (has("generation.num_envs")) g.num_envs = doc.get_int("generation.num_envs");
  if (has("generation.n_per_env")) g.n_per_env = doc.get_int("generation.n_per_env");
  if (has("generation.decoder")) {
    const auto kind = doc.get_string("generation.decoder");
    if (kind == "polynomial") g.decoder.kind = scm::DecoderKind::polynomial;
    else if (kind == "relu_net") g.decoder.kind = scm::DecoderKind::relu_net;
    else throw InvalidConfigError("generation.decoder must be \"polynomial\" or \"relu_net\"");
  }
  if (has("generation.degree")) g.decoder.degree = doc.get_int("generation.degree");
  if (has("generation.decoder_widths")) g.decoder.widths = doc.get_ints("generation.decoder_widths");
  if (has("generation.eta")) g.eta = doc.get_double("generation.eta");
  if (has("generation.nu")) g.nu = doc.get_double("generation.nu");
  if (has("generation.exclude_y")) g.exclude_y = doc.get_bool("generation.exclude_y");
  if (has("generation.enforce_assumption1")) g.enforce_assumption1 = doc.get_bool("generation.enforce_assumption1");
  if (has("generation.shrink_default_mean")) g.shrink_default_mean = doc.get_bool("generation.shrink_default_mean");

  auto& r = c.repr;
  if (has("representation.latent_dim")) r.latent_dim = doc.get_int("representation.latent_dim");
  if (has("representation.width")) r.width = doc.get_int("representation.width");
  if (has("representation.depth")) r.depth = doc.get_int("representation.depth");
  if (has("representation.alpha")) r.alpha = doc.get_double("representation.alpha");
  if (has("representation.lr")) r.lr = doc.get_double("representation.lr");
  if (has("representation.epochs")) r.epochs = doc.get_int("representation.epochs");
  if (has("representation.batch_size")) r.batch_size = doc.get_int("representation.batch_size");
  if (has("representation.dec_noise_dim")) r.dec_noise_dim = doc.get_int("representation.dec_noise_dim");
  if (has("representation.draws")) r.draws = doc.get_int("representation.draws");
  if (has("representation.batch_norm")) r.batch_norm = doc.get_bool("representation.batch_norm");
  if (has("representation.prior_scale")) {
    const auto s = doc.get_string("representation.prior_scale");
    if (s == "diagonal") r.prior_scale = losses::PriorScale::diagonal;
    else if (s == "lower_triangular") r.prior_scale = losses::PriorScale::lower_triangular;
    else throw InvalidConfigError("representation.prior_scale must be \"diagonal\" or \"lower_triangular\"");
  }

  if (has("drig.gammas")) c.gammas = doc.get_doubles("drig.gammas");
  if (has("drig.weights")) {
    const auto s = doc.get_string("drig.weights");
    if (s == "uniform") c.weights = drig::WeightScheme::uniform;
    else if (s == "proportional") c.weights = drig::WeightScheme::proportional;
    else throw InvalidConfigError("drig.weights must be \"uniform\" or \"proportional\"");
  }
  if (has("drig.eq5_literal")) c.eq5_literal = doc.get_bool("drig.eq5_literal");

  for (auto [sec, enabled, b] : {std::tuple{std::string("erm"), &c.run_erm, &c.erm}, std::tuple{std::string("irm"), &c.run_irm, &c.irm}}) {
    if (has(sec + ".enabled")) *enabled = doc.get_bool(sec + ".enabled");
    if (has(sec + ".width")) b->width = doc.get_int(sec + ".width");
    if (has(sec + ".depth")) b->depth = doc.get_int(sec + ".depth");
    if (has(sec + ".batch_norm")) b->batch_norm = doc.get_bool(sec + ".batch_norm");
    if (has(sec + ".dropout_p")) b->dropout_p = doc.get_double(sec + ".dropout_p");
    if (has(sec + ".lr")) b->lr = doc.get_double(sec + ".lr");
    if (has(sec + ".epochs")) b->epochs = doc.get_int(sec + ".epochs");
    if (has(sec + ".batch_size")) b->batch_size = doc.get_int(sec + ".batch_size");
  }
  if (has("irm.lambda")) c.irm.lambda = doc.get_double("irm.lambda");

  if (has("evaluation.etas")) c.etas = doc.get_doubles("evaluation.etas");
  if (has("evaluation.families")) {
    c.families.clear();
    for (const auto& f : doc.get_strings("evaluation.families")) c.families.push_back(scm::noise_family_from_string(f));
  }
  if (has("evaluation.n_test")) c.n_test = doc.get_int("evaluation.n_test");
  if (has("elbow.dims")) c.elbow_dims = doc.get_ints("elbow.dims");

  for (const auto& k : doc.keys())
    if (!used.count(k)) throw InvalidConfigError("unknown config key '" + k + "'");
  c.validate();
  return c;
}

ExperimentConfig load_experiment(const std::string& path) { return experiment_from_toml(io::read_text(path)); }

Json to_json(const ExperimentConfig& c) {
  std::vector<std::string> fams;
  for (auto f : c.families) fams.push_back(scm::to_string(f));
  const auto base = [](const baselines::BaselineConfig& b) {
    return Json{{"lambda", b.lambda},   {"width", b.width}, {"depth", b.depth},   {"batch_norm", b.batch_norm},
                {"dropout_p", b.dropout_p}, {"lr", b.lr},   {"epochs", b.epochs}, {"batch_size", b.batch_size}};
  };
  return Json{{"name", c.name},
              {"seeds", c.seeds},
              {"generation", c.csv_path ? Json{{"csv_path", *c.csv_path}} : io::to_json(c.gen)},
              {"representation", repr::to_json(c.repr)},
              {"drig",
               {{"gammas", c.gammas},
                {"weights", c.weights == drig::WeightScheme::uniform ? "uniform" : "proportional"},
                {"eq5_literal", c.eq5_literal}}},
              {"erm", c.run_erm ? base(c.erm) : Json(nullptr)},
              {"irm", c.run_irm ? base(c.irm) : Json(nullptr)},
              {"evaluation", {{"etas", c.etas}, {"families", fams}, {"n_test", c.n_test}}},
              {"elbow", {{"dims", c.elbow_dims}}}};
}

std::vector<double> parse_number_list(const std::string& text) {
  std::vector<double> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const std::string t = trim(item);
    out.push_back(parse_number<double>(t, "list", 0));
  }
  if (out.empty()) throw InvalidConfigError("empty number list");
  return out;
}

}  // namespace cirrl::config
