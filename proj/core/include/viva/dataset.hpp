#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "viva/episode.hpp"

namespace viva {

inline constexpr int kDatasetVersion = 1;

struct ManifestSummary {
  int version = kDatasetVersion;
  int episodes = 0;
  long long steps = 0;
  int successes = 0;
  int proprio_dim = 0;
  int height = 0;
  int width = 0;
  std::vector<std::string> object_shapes;  // distinct, sorted
};

// Writes <root>/manifest.json plus one ep_<id>/ directory per episode holding
// proprio.f32 and view{1,2,3}.u8. Episodes must agree on d_q and image size.
ManifestSummary write_dataset(const std::vector<Episode>& episodes, const std::filesystem::path& root);

// Inverse of write_dataset. Verifies the manifest version, file sizes and the
// SHA-256 of every array file.
std::vector<Episode> read_dataset(const std::filesystem::path& root);

ManifestSummary read_manifest_summary(const std::filesystem::path& root);

}  // namespace viva
