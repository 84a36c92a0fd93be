#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "mtlfer/model.hpp"

// Checkpoint layout:
//   "MTL1" | u32 LE format version | u32 LE manifest length | manifest text |
//   raw little-endian float32 buffers in manifest order.
// The manifest is line oriented: one `config key=value ...` line describing
// the architecture, then one `param <name> <d0>x<d1>...` line per parameter
// in declaration order.

namespace mtlfer {

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& out, const MTLNetwork<float>& model);
void save_checkpoint(const std::filesystem::path& path, const MTLNetwork<float>& model);

/// Throws LoadError on bad magic, version, manifest or truncated data.
MTLNetwork<float> read_checkpoint(std::istream& in);
MTLNetwork<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace mtlfer
