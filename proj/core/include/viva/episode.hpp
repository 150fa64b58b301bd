#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace viva {

inline constexpr int kNumViews = 3;

// Joint angles in radians followed by gripper aperture in [0,1].
struct Proprioception {
  std::vector<float> values;

  std::size_t dim() const { return values.size(); }
  bool operator==(const Proprioception&) const = default;
};

// Row-major H x W x 3, 8 bits per channel.
struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  RgbImage() = default;
  RgbImage(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, 0) {}

  std::uint8_t* at(int row, int col) { return &pixels[(static_cast<std::size_t>(row) * width + col) * 3]; }
  const std::uint8_t* at(int row, int col) const {
    return &pixels[(static_cast<std::size_t>(row) * width + col) * 3];
  }
  bool operator==(const RgbImage&) const = default;
};

struct MultiViewObservation {
  std::array<RgbImage, kNumViews> views;

  bool operator==(const MultiViewObservation&) const = default;
};

struct JointObservation {
  MultiViewObservation obs;
  Proprioception proprio;

  bool operator==(const JointObservation&) const = default;
};

enum class FailureKind { kDrop, kMisplace, kStall };

std::string to_string(FailureKind kind);
FailureKind failure_kind_from_string(const std::string& name);

// Simulator side-channel carried alongside an episode for evaluation only.
// Nothing here is visible to the value models.
struct EpisodeMeta {
  std::string object_shape = "square";
  std::optional<FailureKind> failure_kind;
  int failure_step = -1;
  std::vector<double> progress;  // fraction of script waypoints completed, per step

  bool operator==(const EpisodeMeta&) const = default;
};

// A labelled trajectory x_0..x_T.
struct Episode {
  std::string task_id;
  bool success = false;
  std::vector<JointObservation> steps;
  EpisodeMeta meta;

  // T, the index of the last step.
  int horizon() const { return static_cast<int>(steps.size()) - 1; }
  bool operator==(const Episode&) const = default;
};

struct TrainingTuple {
  JointObservation current;
  Proprioception future_proprio;
  double return_target = 0.0;
  int t = 0;
  std::size_t episode_ref = 0;
};

// Index of the future-proprioception target, clamped to the last step.
int future_index(int t, int horizon_k, int episode_length);

// Builds the raw inputs of one training example at step t with prediction horizon K.
// Throws ValidationError when t is outside [0, T] or K < 1.
TrainingTuple sample_tuple(const Episode& episode, int t, int horizon_k, std::size_t episode_ref = 0);

}  // namespace viva
