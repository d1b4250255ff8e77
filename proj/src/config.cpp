#include "deepcam/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace deepcam {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str());
}

KeyValueConfig KeyValueConfig::parse_text(const std::string& text) {
  KeyValueConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ValidationError("config line " + std::to_string(lineno) + ": empty key");
    if (cfg.values_.count(key))
      throw ValidationError("config: duplicate key '" + key + "'");
    cfg.values_[key] = value;
  }
  return cfg;
}

std::string KeyValueConfig::get_string(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ValidationError("config: missing key '" + key + "'");
  return it->second;
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::logic_error&) {
    throw ValidationError("config: '" + key + "' is not a number");
  }
}

long long KeyValueConfig::get_int(const std::string& key, long long fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    size_t used = 0;
    const long long v = std::stoll(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::logic_error&) {
    throw ValidationError("config: '" + key + "' is not an integer");
  }
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw ValidationError("config: '" + key + "' is not a boolean");
}

std::vector<int> KeyValueConfig::get_int_list(const std::string& key) const {
  std::vector<int> out;
  std::string raw = get_string(key);
  std::replace(raw.begin(), raw.end(), ',', ' ');
  std::istringstream ss(raw);
  int v;
  while (ss >> v) out.push_back(v);
  if (!ss.eof()) throw ValidationError("config: '" + key + "' is not an integer list");
  if (out.empty()) throw ValidationError("config: '" + key + "' is empty");
  return out;
}

void KeyValueConfig::require_known(const std::vector<std::string>& known) const {
  for (const auto& [key, value] : values_) {
    (void)value;
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ValidationError("config: unknown key '" + key + "'");
  }
}

std::vector<int> RunConfig::chain_with_synth() const {
  std::vector<int> chain = model.layer_sides;
  chain.push_back(model.synth_side);
  return chain;
}

RunConfig RunConfig::from_file(const std::string& path) {
  const KeyValueConfig cfg = KeyValueConfig::parse_file(path);
  cfg.require_known({
      "scale", "layer_p", "layer_d", "synth_p", "d_ipad", "allow_undersized",
      "train_dir", "train_cache", "n1", "n2", "seed", "subspace_energy",
      "tau", "batches", "eps_halt", "grid_min_exp", "grid_max_exp",
      "ipad_nu", "ipad_kappa", "ipad_upsilon", "cad_nu", "cad_kappa",
      "cad_upsilon", "cad_mu",
  });

  RunConfig rc;
  rc.model.scale = static_cast<int>(cfg.get_int("scale", 2));
  if (cfg.has("layer_p")) rc.model.layer_sides = cfg.get_int_list("layer_p");
  if (cfg.has("layer_d")) rc.model.layer_filters = cfg.get_int_list("layer_d");
  rc.model.synth_side = static_cast<int>(cfg.get_int("synth_p", 3));
  if (cfg.has("d_ipad")) rc.model.ipad_counts = cfg.get_int_list("d_ipad");
  rc.model.allow_undersized = cfg.get_bool("allow_undersized", false);

  rc.train_dir = cfg.get_string("train_dir", "");
  rc.train_cache = cfg.get_string("train_cache", "");
  rc.n1 = cfg.get_int("n1", 20'000);
  rc.settings.n2 = cfg.get_int("n2", 50'000);
  rc.settings.subspace_energy = cfg.get_double("subspace_energy", 0.9999);
  rc.settings.opt.max_batch_iters = static_cast<int>(cfg.get_int("tau", 100));
  rc.settings.opt.num_batches = static_cast<int>(cfg.get_int("batches", 10));
  rc.settings.opt.eps_halt = cfg.get_double("eps_halt", 1e-4);
  rc.settings.opt.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
  if (const char* env = std::getenv("DEEPCAM_SEED"))
    rc.settings.opt.seed = static_cast<std::uint64_t>(std::stoll(env));
  rc.settings.grid = default_search_grid(static_cast<int>(cfg.get_int("grid_min_exp", -3)),
                                         static_cast<int>(cfg.get_int("grid_max_exp", 0)));

  auto opt_key = [&](const char* key) -> std::optional<double> {
    if (!cfg.has(key)) return std::nullopt;
    return cfg.get_double(key, 0);
  };
  rc.settings.weights.ipad_nu = opt_key("ipad_nu");
  rc.settings.weights.ipad_kappa = opt_key("ipad_kappa");
  rc.settings.weights.ipad_upsilon = opt_key("ipad_upsilon");
  rc.settings.weights.cad_nu = opt_key("cad_nu");
  rc.settings.weights.cad_kappa = opt_key("cad_kappa");
  rc.settings.weights.cad_upsilon = opt_key("cad_upsilon");
  rc.settings.weights.cad_mu = opt_key("cad_mu");

  if (rc.model.layer_sides.size() != rc.model.layer_filters.size())
    throw ValidationError("config: layer_p and layer_d must have the same length");
  if (rc.model.scale < 1) throw ValidationError("config: scale must be >= 1");
  if (rc.train_dir.empty() && rc.train_cache.empty())
    throw ValidationError("config: one of train_dir / train_cache is required");
  return rc;
}

}  // namespace deepcam
