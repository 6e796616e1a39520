#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "mwp/dataset.hpp"
#include "mwp/model.hpp"
#include "mwp/trainer.hpp"

namespace mwp {

// Everything a run needs, merged from defaults, an optional config file and
// command-line overrides. The flat key-value form (one `section.key = value`
// per line, `#` comments) doubles as the config snapshot embedded in
// checkpoints and echoed into output directories.
struct RunConfig {
  GeneratorConfig gen;
  ModelConfig model;
  TrainConfig train;
  double split_train = 0.70;
  double split_val = 0.15;
  double split_test = 0.15;
  std::uint64_t split_seed = 7;
  std::string eval_split = "test";
  int threads = 1;
};

using KvMap = std::map<std::string, std::string>;

KvMap model_config_to_kv(const ModelConfig& cfg);
ModelConfig model_config_from_kv(const KvMap& kv);
KvMap train_config_to_kv(const TrainConfig& cfg);
TrainConfig train_config_from_kv(const KvMap& kv);

// Applies one key; unknown keys or malformed values raise ConfigError.
// Category rows use `category.<index>.<field>` and must form a dense prefix
// (extending the list one index past the end is allowed).
void apply_config_kv(RunConfig& rc, const std::string& key, const std::string& value);

RunConfig load_config_file(const std::filesystem::path& path);

// Canonical echo: every key with its effective value, stable order.
std::string render_config(const RunConfig& rc);

void write_config_echo(const RunConfig& rc, const std::filesystem::path& dir);

}  // namespace mwp
