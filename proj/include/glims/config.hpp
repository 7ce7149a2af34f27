#pragma once

// Sectioned key/value run configuration:
//
//   [model]      every ModelConfig field
//   [train]      TrainOptions, AdamW and loss settings
//   [data]       phantom generator settings and the case count
//   [runtime]    thread count
//
// Lists are comma separated. Unknown sections or keys are rejected.

#include <filesystem>
#include <string>

#include "glims/model.hpp"
#include "glims/phantom.hpp"
#include "glims/trainer.hpp"

namespace glims {

struct RunConfig {
  ModelConfig model = ModelConfig::full();
  TrainOptions train;
  /// Parameter initialization seed; --seed leaves it alone.
  std::uint64_t init_seed = 1;
  PhantomSpec data;
  std::int64_t dataset_cases = 10;
  double train_fraction = 0.8;
  int threads = 0;  // 0: OpenMP default
};

/// Parses INI text on top of `base`. Throws ConfigError on syntax errors,
/// unknown keys or unparsable values.
RunConfig parse_run_config(const std::string& text, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

/// Writes every field; parse_run_config(to_ini(c)) == c.
std::string to_ini(const RunConfig& config);

}  // namespace glims
