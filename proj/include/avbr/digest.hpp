#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace avbr {

// Hex-encoded SHA-256.
std::string sha256_hex(const void* data, size_t len);
std::string sha256_hex(std::string_view s);

// IEEE CRC-32 (zlib).
uint32_t crc32_bytes(const void* data, size_t len);

// SHA-256 of a file's content. Throws avbr::Error if unreadable.
std::string sha256_file(const std::string& path);

}  // namespace avbr
