#include "viva/container.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "viva/errors.hpp"
#include "viva/hash.hpp"

namespace viva {
namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "container blobs are little-endian");

namespace {

std::array<std::uint8_t, 32> raw_digest(const std::string& text) {
  const std::string hex = sha256_hex({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
  std::array<std::uint8_t, 32> out{};
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<std::uint8_t>(std::stoul(hex.substr(2 * i, 2), nullptr, 16));
  return out;
}

template <typename T>
void put(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T take(std::ifstream& in, const fs::path& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) throw FormatError("truncated container " + path.string());
  return value;
}

}  // namespace

void write_container(const fs::path& path, std::string_view magic, std::uint32_t version,
                     const std::string& header_json, const std::vector<ContainerBlob>& blobs) {
  if (magic.size() != 4) throw ValidationError("container magic must be 4 bytes");
  json header = json::parse(header_json);
  json listing = json::array();
  for (const auto& blob : blobs) {
    listing.push_back({{"name", blob.name},
                       {"count", blob.data.size()},
                       {"sha256", sha256_hex_of(std::span<const float>(blob.data))}});
  }
  header["blobs"] = listing;
  const std::string text = header.dump();
  const auto digest = raw_digest(text);

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(magic.data(), 4);
  put<std::uint32_t>(out, version);
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(reinterpret_cast<const char*>(digest.data()), digest.size());
  for (const auto& blob : blobs) {
    out.write(reinterpret_cast<const char*>(blob.data.data()),
              static_cast<std::streamsize>(blob.data.size() * sizeof(float)));
  }
  if (!out) throw RuntimeFailure("failed writing " + path.string());
}

Container read_container(const fs::path& path, std::string_view magic, std::uint32_t version) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::array<char, 4> got{};
  if (!in.read(got.data(), 4) || std::string_view(got.data(), 4) != magic) {
    throw FormatError(path.string() + " is not a '" + std::string(magic) + "' container");
  }
  Container c;
  c.version = take<std::uint32_t>(in, path);
  if (c.version != version) {
    throw VersionError("container version " + std::to_string(c.version) + " (expected " + std::to_string(version) +
                       ") in " + path.string());
  }
  const auto length = take<std::uint64_t>(in, path);
  if (length > (1ULL << 30)) throw FormatError("implausible header length in " + path.string());
  c.header_json.resize(length);
  if (!in.read(c.header_json.data(), static_cast<std::streamsize>(length))) {
    throw FormatError("truncated header in " + path.string());
  }
  std::array<std::uint8_t, 32> digest{};
  if (!in.read(reinterpret_cast<char*>(digest.data()), digest.size())) {
    throw FormatError("truncated header digest in " + path.string());
  }
  if (digest != raw_digest(c.header_json)) throw ChecksumError("header checksum mismatch in " + path.string());

  json header;
  try {
    header = json::parse(c.header_json);
  } catch (const json::exception& e) {
    throw FormatError("unreadable header in " + path.string() + ": " + e.what());
  }
  for (const auto& entry : header.at("blobs")) {
    ContainerBlob blob;
    blob.name = entry.at("name").get<std::string>();
    blob.data.resize(entry.at("count").get<std::size_t>());
    if (!in.read(reinterpret_cast<char*>(blob.data.data()),
                 static_cast<std::streamsize>(blob.data.size() * sizeof(float)))) {
      throw FormatError("truncated blob '" + blob.name + "' in " + path.string());
    }
    if (sha256_hex_of(std::span<const float>(blob.data)) != entry.at("sha256").get<std::string>()) {
      throw ChecksumError("checksum mismatch in blob '" + blob.name + "' of " + path.string());
    }
    c.blobs.push_back(std::move(blob));
  }
  return c;
}

}  // namespace viva
