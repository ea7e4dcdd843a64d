#pragma once

#include <torch/torch.h>

#include <json.hpp>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace vlaforge {

// Binary container: magic "VLAFCKPT", u32 version, u64 header length, JSON
// header, u64 tensor count, then for each tensor: u32 name length, name,
// u8 dtype (0=f32, 1=f64, 2=i64), u32 rank, i64 dims, raw little-endian data.
struct CheckpointFile {
  static constexpr uint32_t kVersion = 1;

  uint32_t version = kVersion;
  nlohmann::json header = nlohmann::json::object();
  std::vector<std::pair<std::string, torch::Tensor>> tensors;

  const torch::Tensor* find(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const CheckpointFile& file);
CheckpointFile read_checkpoint(const std::filesystem::path& path);

uint64_t fnv1a64(std::span<const std::byte> bytes, uint64_t state = 0xcbf29ce484222325ULL);
uint64_t tensor_checksum(const std::vector<torch::Tensor>& tensors);
uint64_t file_checksum(const std::filesystem::path& path);
std::string to_hex(uint64_t value);

}  // namespace vlaforge
