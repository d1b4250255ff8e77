#pragma once

#include "deepcam/deepcam.hpp"
#include "deepcam/types.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace deepcam {

/// Plain `key = value` configuration, one pair per line, '#' comments.
class KeyValueConfig {
public:
  static KeyValueConfig parse_file(const std::string& path);
  static KeyValueConfig parse_text(const std::string& text);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<int> get_int_list(const std::string& key) const;

  /// Throws if the file contains keys outside the allowed set.
  void require_known(const std::vector<std::string>& known) const;

private:
  std::map<std::string, std::string> values_;
};

/// Everything a training run needs, as read from a config file.
struct RunConfig {
  ModelConfig model;
  TrainSettings settings;
  std::string train_dir;    // directory of HR images, or
  std::string train_cache;  // a cache file written by `prepare`
  Index n1 = 20'000;

  /// Parses and validates; DEEPCAM_SEED in the environment overrides the
  /// configured seed.
  static RunConfig from_file(const std::string& path);

  std::vector<int> chain_with_synth() const;
};

}  // namespace deepcam
