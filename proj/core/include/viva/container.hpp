#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace viva {

struct ContainerBlob {
  std::string name;
  std::vector<float> data;
};

struct Container {
  std::uint32_t version = 0;
  std::string header_json;  // includes the "blobs" listing added on write
  std::vector<ContainerBlob> blobs;
};

// Layout: 4-byte magic | u32 version | u64 header length | UTF-8 JSON header |
// SHA-256 of the header (32 raw bytes) | little-endian f32 blobs in listing
// order. The header's "blobs" array records each blob's name, element count
// and SHA-256.
void write_container(const std::filesystem::path& path, std::string_view magic, std::uint32_t version,
                     const std::string& header_json, const std::vector<ContainerBlob>& blobs);

Container read_container(const std::filesystem::path& path, std::string_view magic, std::uint32_t version);

}  // namespace viva
