#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "ecoenc/autodiff/tensor_map.hpp"

namespace ecoenc::ad {

inline constexpr std::string_view kCheckpointMagic = "ECOENC-CKPT-v1";

/// Binary layout, little-endian:
///   magic "ECOENC-CKPT-v1\n"
///   u32 entry count
///   per entry, in sorted name order:
///     u32 name length, name bytes, u32 rank, u64 dims[rank], f64 values[numel]
std::string encode_checkpoint(const TensorMap& tensors);
TensorMap decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const TensorMap& tensors);
TensorMap load_checkpoint(const std::filesystem::path& path);

/// Lower-case hex SHA-256.
std::string sha256_hex(std::string_view bytes);
std::string file_sha256(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace ecoenc::ad
