#pragma once

#include <filesystem>
#include <istream>
#include <map>
#include <string>
#include <vector>

#include "restr/config.hpp"
#include "restr/training.hpp"

namespace restr {

// Everything a training run needs: architecture plus optimization recipe.
// `train.seed` also seeds parameter initialization.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

struct ConfigKey {
  std::string name;
  std::string doc;
  bool model = true;  // false for TrainConfig keys
};

// Every recognised key with its documentation, in file order.
const std::vector<ConfigKey>& config_keys();
bool is_config_key(const std::string& key);

// Sets one key from text. Throws ConfigError on unknown keys or bad values.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& cfg, const std::string& key);

// `key = value` lines; `#` starts a comment; blank lines ignored.
// Keys not present keep their defaults. Duplicate keys are an error.
RunConfig parse_run_config(std::istream& in, const std::string& origin = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

// Full listing of every key (optionally with doc comments).
std::string format_run_config(const RunConfig& cfg, bool with_docs = false);
// Only the model keys; used inside checkpoints.
std::string format_model_config(const ModelConfig& cfg);
ModelConfig parse_model_config(const std::string& text);

void apply_overrides(RunConfig& cfg, const std::map<std::string, std::string>& overrides);

}  // namespace restr
