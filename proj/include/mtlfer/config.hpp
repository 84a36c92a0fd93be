#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "mtlfer/train.hpp"

// Run configuration documents (JSON). Every section rejects unknown keys and
// every error names the offending field by its dotted path, e.g.
// "train.lambda: must be a finite value >= 0".

namespace mtlfer {

struct DataConfig {
  std::filesystem::path root;
  double val_fraction = 1.0 / 3.0;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "run";
  DataConfig data;
  TrainConfig train;        // seed filled from the "train" sub-stream, member 0
  EnsembleConfig ensemble;  // member seeds from "train"/i, bag seeds from "bag"/i

  /// Seed of the stratified train/val split.
  std::uint64_t data_seed() const;
  /// Re-derives every sub-stream seed from `seed`. Call after overriding it.
  void resolve_seeds();
};

/// Relative paths in the document are resolved against `base_dir`.
/// Throws ConfigError with field-level diagnostics.
RunConfig parse_run_config(std::string_view json_text, const std::filesystem::path& base_dir);

/// Reads the file and resolves relative paths against its directory.
RunConfig load_run_config(const std::filesystem::path& path);

/// Canonical JSON of a training section (all fields explicit).
std::string train_config_json(const TrainConfig& cfg);

/// Inverse of train_config_json. `field` prefixes error messages.
TrainConfig parse_train_config(std::string_view json_text, std::string_view field = "train");

struct DescriptorMember {
  std::filesystem::path checkpoint;  // relative to the descriptor's directory
  std::uint64_t bag_seed = 0;
  std::size_t bag_size = 0;
  TrainConfig config;
};

/// Ensemble descriptor: member checkpoints, their configs, bag seeds and
/// the subsample fraction.
struct EnsembleDescriptor {
  std::uint64_t seed = 0;
  std::uint64_t bag_seed = 0;
  double subsample_fraction = 0.2;
  std::vector<DescriptorMember> members;
};

void write_descriptor(const std::filesystem::path& path, const EnsembleDescriptor& desc);
/// Throws LoadError on malformed content.
EnsembleDescriptor read_descriptor(const std::filesystem::path& path);

}  // namespace mtlfer
