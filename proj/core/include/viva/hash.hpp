#pragma once

#include <cstdint>
#include <span>
#include <string>

namespace viva {

// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::span<const std::uint8_t> bytes);

template <typename T>
std::string sha256_hex_of(std::span<const T> values) {
  return sha256_hex({reinterpret_cast<const std::uint8_t*>(values.data()), values.size_bytes()});
}

}  // namespace viva
