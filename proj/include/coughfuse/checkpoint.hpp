#pragma once

// Checkpoint container:
//   "CSNN" | version u32 LE | header length u32 LE | header JSON (UTF-8)
//   followed by every tensor listed in header["tensors"], in order, as
//   little-endian IEEE-754 float64.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace coughfuse {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<double> data;
};

struct Checkpoint {
  nlohmann::json header;  // includes "tensors": [{name, shape}, ...]
  std::vector<NamedTensor> tensors;

  const NamedTensor& tensor(const std::string& name) const;
};

std::vector<unsigned char> encode_checkpoint(nlohmann::json header, std::span<const NamedTensor> tensors);
Checkpoint decode_checkpoint(std::span<const unsigned char> bytes);

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& header,
                     std::span<const NamedTensor> tensors);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// 64-bit FNV-1a of the bytes, as 16 lowercase hex digits.
std::string content_hash(std::span<const unsigned char> bytes);
std::string file_content_hash(const std::filesystem::path& path);

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path);

}  // namespace coughfuse
