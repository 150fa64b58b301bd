#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "viva/episode.hpp"
#include "viva/model_config.hpp"

namespace viva::testing {

// Fresh directory under the system temp dir; removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "viva") {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() /
            (tag + "_" + std::to_string(stamp) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Synthetic episode with random pixels and proprio; label and length given.
inline Episode random_episode(std::mt19937_64& rng, int horizon, int d_q, bool success, int image = 32) {
  std::uniform_int_distribution<int> byte(0, 255);
  std::uniform_real_distribution<float> val(-2.0f, 2.0f);
  Episode ep;
  ep.task_id = "synthetic";
  ep.success = success;
  ep.meta.object_shape = "square";
  if (!success) {
    ep.meta.failure_kind = FailureKind::kDrop;
    ep.meta.failure_step = horizon / 2;
  }
  ep.steps.resize(static_cast<std::size_t>(horizon) + 1);
  for (auto& step : ep.steps) {
    for (auto& view : step.obs.views) {
      view = RgbImage(image, image);
      for (auto& p : view.pixels) p = static_cast<std::uint8_t>(byte(rng));
    }
    step.proprio.values.resize(static_cast<std::size_t>(d_q));
    for (auto& q : step.proprio.values) q = val(rng);
  }
  ep.meta.progress.assign(ep.steps.size(), 0.0);
  return ep;
}

// Smallest configuration that still exercises every mechanism.
inline ModelConfig tiny_config() {
  ModelConfig c;
  c.layers = 1;
  c.width = 16;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.token_patch = 4;
  return c;
}

}  // namespace viva::testing
