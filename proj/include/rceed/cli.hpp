#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "rceed/model.hpp"
#include "rceed/training.hpp"

namespace rceed::cli {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct RunConfig {
  ModelConfig model = ModelConfig::desk();
  TrainConfig train;
  std::size_t checkpoint_every = 500;
  std::size_t eval_every = 0;     // 0 disables periodic training-set evaluation
  double stop_at_accuracy = 0.0;  // stop early once periodic evaluation reaches this; 0 = never
};

// Keys accepted by config files and (as --key) on the command line.
const std::vector<std::string>& setting_keys();
bool is_model_setting(const std::string& key);
// Throws ConfigError on unknown keys or unparsable values. "preset" resets
// the model section to that preset.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);

// key=value lines; blank lines and lines starting with '#' are ignored.
std::vector<std::pair<std::string, std::string>> read_config_file(const std::filesystem::path& path);

// Entry point shared by the executable and the tests; args exclude argv[0].
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rceed::cli
