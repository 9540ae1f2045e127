#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace hrank {

/// Lower-case hex SHA-256 of a byte range.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);

/// Raw 32-byte SHA-256 digest.
void sha256(std::span<const std::uint8_t> bytes, std::span<std::uint8_t, 32> out);

}  // namespace hrank
