#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pnerf/optimizer.hpp"
#include "pnerf/scenes.hpp"

namespace pnerf {

/// Everything a command needs. Text form:
///
///   # comment
///   seed = 7
///   [train]
///   gains = 1, 1, 1
///
/// Keys inside a section are addressed as "section.key"; unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = 0;
  int threads = 1;
  bool deterministic = true;

  std::string scene = "tri_sphere";
  DatasetSpec dataset;
  TrainConfig train;

  std::filesystem::path dataset_dir;
  std::filesystem::path out_dir = "out";
  std::filesystem::path checkpoint_dir;
  std::filesystem::path poses_file;
  Split eval_split = Split::test;

  /// Parses and applies one "section.key" assignment; ConfigError on unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  /// Every key and its current value, in the file format.
  std::string to_text() const;
  /// TrainConfig with the top-level seed, threads and deterministic flag applied.
  TrainConfig train_config() const;
  DatasetSpec dataset_spec() const;

  static std::vector<std::string> keys();
};

RunConfig parse_config(const std::string& text, const std::string& source = "config");
RunConfig load_config(const std::filesystem::path& path);
void write_config(const std::filesystem::path& path, const RunConfig& config);

/// "1,0,0" to gains (color, density, depth).
LossGains parse_gains(const std::string& text);
std::string format_gains(const LossGains& gains);

}  // namespace pnerf
