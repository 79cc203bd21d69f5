#pragma once

// Checkpoint container, version 1. Little-endian binary:
//
//   magic      8 bytes  "AVCKPT\0\0"
//   version    u32
//   meta_len   u64, followed by meta_len bytes of UTF-8 JSON
//   n_tensors  u64
//   n_tensors records, sorted by name:
//     name_len u32, name bytes
//     rank     u32, then rank x u64 dims
//     data     f64 x prod(dims), row-major
//
// Tensor names are dotted paths ("encoder.image.conv0.weight", "basis",
// "generator.decoder.w1"); optimizer moments use "adam.m/<name>" and
// "adam.v/<name>".

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "avatar/tensor.hpp"

namespace avatar {

inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Tensor> tensors;

  /// Throws IoError naming the key when absent.
  const Tensor& tensor(const std::string& name) const;
};

/// Writes to a temporary file and renames it over `path`, so an interrupted
/// write never replaces a good checkpoint.
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace avatar
