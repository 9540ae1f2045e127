#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hrank/graph.hpp"

namespace hrank {

/// Binary model file; see docs/model_format.md for the byte layout.
std::vector<std::uint8_t> serialize_model(const NetworkGraph& net);
NetworkGraph deserialize_model(std::span<const std::uint8_t> bytes);

void save_model(const NetworkGraph& net, const std::filesystem::path& path);
NetworkGraph load_model(const std::filesystem::path& path);

/// SHA-256 of the serialized model; identifies a model in the fingerprint chain.
std::string model_fingerprint(const NetworkGraph& net);

// Shared framing for model and optimizer-state files:
//   magic(8) | version u32 | header_len u64 | header (JSON text) | payload f64[] | sha256(32)
inline constexpr std::uint32_t kFormatVersion = 1;

std::vector<std::uint8_t> frame_blob(std::string_view magic, std::string_view header,
                                     std::span<const double> payload);

struct UnframedBlob {
  std::string header;
  std::span<const std::uint8_t> payload;  // raw little-endian doubles
  bool checksum_ok = false;
};

/// Splits a framed file; throws FormatError for a bad magic, version or header length.
UnframedBlob unframe_blob(std::span<const std::uint8_t> bytes, std::string_view magic);

/// Reads `count` doubles from `payload` at `offset` (in doubles).
void read_doubles(std::span<const std::uint8_t> payload, std::size_t offset, std::span<double> out);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_file(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace hrank
