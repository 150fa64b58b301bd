#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "viva/episode.hpp"

namespace viva {

struct LatentGeometry {
  int height = 8;
  int width = 8;
  int channels = 4;

  std::size_t size() const { return static_cast<std::size_t>(height) * width * channels; }
  bool operator==(const LatentGeometry&) const = default;
};

// Row-major (H', W', C') block; every modality is carried as one of these.
struct LatentFrame {
  LatentGeometry geometry;
  std::vector<double> data;

  LatentFrame() = default;
  explicit LatentFrame(LatentGeometry g, double fill = 0.0) : geometry(g), data(g.size(), fill) {}

  double mean() const;
  bool operator==(const LatentFrame&) const = default;
};

// Per-dimension proprioception range mapped onto [-1,1]. Values live in [0,2].
struct NormalizationSpec {
  std::vector<double> proprio_min;
  std::vector<double> proprio_max;

  static constexpr double kValueMin = 0.0;
  static constexpr double kValueMax = 2.0;

  std::size_t dim() const { return proprio_min.size(); }
  void validate() const;
  bool operator==(const NormalizationSpec&) const = default;
};

// Repeat-padding: normalise q to [-1,1], tile it cyclically over H'W'C' cells.
LatentFrame encode_proprio(const Proprioception& q, const NormalizationSpec& spec, LatentGeometry geometry);

// Averages each complete d_q-sized chunk position-wise and denormalises. The
// trailing partial chunk (when H'W'C' is not a multiple of d_q) is ignored.
Proprioception decode_proprio(const LatentFrame& z, std::size_t d_q, const NormalizationSpec& spec);

// Broadcast: every cell holds G - 1.
LatentFrame encode_value(double value, LatentGeometry geometry);

// mean(z) + 1 clamped to [0,2].
double decode_value(const LatentFrame& z);

LatentFrame blank_frame(LatentGeometry geometry);

// Number of proprioception entries clamped into [-1,1] by encode_proprio since
// process start.
std::uint64_t proprio_clamp_count();

// Fixed, seeded linear projection of non-overlapping p x p RGB patches to C'
// channels. Each output channel's weights are shifted so they do not sum to
// (near) zero, which keeps constant patches from collapsing to the zero latent.
class ImageEncoder {
 public:
  ImageEncoder(std::uint64_t seed, LatentGeometry geometry, int patch);

  LatentFrame encode(const RgbImage& view) const;
  // Writes H'W'C' floats; used by caches that avoid LatentFrame allocations.
  void encode_into(const RgbImage& view, std::span<float> out) const;

  std::uint64_t seed() const { return seed_; }
  int patch() const { return patch_; }
  LatentGeometry geometry() const { return geometry_; }
  // [patch*patch*3][channels] row-major.
  const std::vector<double>& weights() const { return weights_; }

 private:
  std::uint64_t seed_;
  LatentGeometry geometry_;
  int patch_;
  std::vector<double> weights_;
};

}  // namespace viva
