#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attnsqueeze/tensor.hpp"

namespace attnsqueeze {

// ATTN v1: "ATTN", u32 version, u32 L, u32 H, u32 N, then L*H*N*N
// little-endian binary32 values. No padding, no footer.
inline constexpr std::array<std::uint8_t, 4> kAttnMagic{0x41, 0x54, 0x54, 0x4E};
inline constexpr std::uint32_t kAttnVersion = 1;
inline constexpr std::size_t kAttnHeaderBytes = 20;

std::vector<std::uint8_t> serialize_attn(const AttentionTensor& tensor);
AttentionTensor parse_attn(std::span<const std::uint8_t> bytes);

AttentionTensor load_attn(const std::filesystem::path& path);
void store_attn(const AttentionTensor& tensor, const std::filesystem::path& path);

// Optional `<name>.meta.json` sidecar. Numeric code never depends on it.
struct AttnMetadata {
  std::string model;
  std::string instance_id;
  std::vector<std::string> tokens;
};

std::filesystem::path sidecar_path(const std::filesystem::path& attn_path);
std::optional<AttnMetadata> load_sidecar(const std::filesystem::path& attn_path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace attnsqueeze
