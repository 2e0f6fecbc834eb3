#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "gwnet/tensor.hpp"

namespace gwnet {

inline constexpr const char* kGeneratorMagic = "GWN1";
inline constexpr const char* kClassifierMagic = "GWNP1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Container layout (little-endian):
///   magic bytes, u32 version,
///   u64 length + config text ("key = value" lines),
///   u32 blob count, then per blob: u32 name length, name, 4 x i32 shape,
///   numel x f64.
struct Checkpoint {
  std::string magic = kGeneratorMagic;
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<std::pair<std::string, Tensor>> blobs;

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  bool has(const std::string& key) const;
  const Tensor& blob(const std::string& name) const;
  bool has_blob(const std::string& name) const;
};

/// Writes to `<path>.tmp` and renames, so an interrupted save leaves the
/// previous file intact.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& magic);

}  // namespace gwnet
