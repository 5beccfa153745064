#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "muten/network.hpp"

namespace muten {

inline constexpr std::uint32_t kModelFormatVersion = 1;

/// Model container: "MUTN", u32 version, u32 header length, JSON header,
/// little-endian float32 payload (weights then bias per trainable layer, in
/// declaration order), u32 CRC32 of the payload.
std::vector<std::uint8_t> encode_model(const Network& net);
Network decode_model(const std::vector<std::uint8_t>& bytes);

void save_model(const Network& net, const std::filesystem::path& path);
Network load_model(const std::filesystem::path& path);

/// The JSON header alone, for inspection tools.
std::string model_header_json(const Network& net);

std::uint32_t crc32(const std::uint8_t* data, std::size_t size);

}  // namespace muten
