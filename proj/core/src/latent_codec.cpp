#include "viva/latent_codec.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <string>

#include <spdlog/spdlog.h>

#include "viva/errors.hpp"
#include "viva/random.hpp"

namespace viva {
namespace {

std::atomic<std::uint64_t> g_clamped{0};

constexpr double kMinChannelSum = 0.5;

}  // namespace

double LatentFrame::mean() const {
  if (data.empty()) return 0.0;
  return std::accumulate(data.begin(), data.end(), 0.0) / static_cast<double>(data.size());
}

void NormalizationSpec::validate() const {
  if (proprio_min.size() != proprio_max.size() || proprio_min.empty()) {
    throw ValidationError("normalization spec needs matching, non-empty min/max vectors");
  }
  for (std::size_t i = 0; i < proprio_min.size(); ++i) {
    if (!(proprio_max[i] > proprio_min[i])) {
      throw ValidationError("normalization range for dim " + std::to_string(i) + " is empty");
    }
  }
}

std::uint64_t proprio_clamp_count() { return g_clamped.load(); }

LatentFrame encode_proprio(const Proprioception& q, const NormalizationSpec& spec, LatentGeometry geometry) {
  const std::size_t d_q = q.dim();
  if (d_q == 0 || d_q > geometry.size()) {
    throw ValidationError("proprioception dim " + std::to_string(d_q) + " does not fit a latent frame of " +
                          std::to_string(geometry.size()) + " cells");
  }
  if (spec.dim() != d_q) {
    throw ValidationError("normalization spec has dim " + std::to_string(spec.dim()) + ", proprioception has " +
                          std::to_string(d_q));
  }
  std::vector<double> normalized(d_q);
  for (std::size_t i = 0; i < d_q; ++i) {
    const double lo = spec.proprio_min[i];
    const double hi = spec.proprio_max[i];
    double v = 2.0 * (static_cast<double>(q.values[i]) - lo) / (hi - lo) - 1.0;
    if (v < -1.0 || v > 1.0) {
      if (g_clamped.fetch_add(1) == 0) {
        spdlog::warn("proprioception dim {} value {} outside normalization range [{}, {}]; clamping", i,
                     q.values[i], lo, hi);
      }
      v = std::clamp(v, -1.0, 1.0);
    }
    normalized[i] = v;
  }
  LatentFrame frame(geometry);
  for (std::size_t k = 0; k < frame.data.size(); ++k) frame.data[k] = normalized[k % d_q];
  return frame;
}

Proprioception decode_proprio(const LatentFrame& z, std::size_t d_q, const NormalizationSpec& spec) {
  if (d_q == 0 || d_q > z.data.size() || spec.dim() != d_q) {
    throw ValidationError("cannot decode proprioception of dim " + std::to_string(d_q));
  }
  const std::size_t chunks = z.data.size() / d_q;
  Proprioception q;
  q.values.resize(d_q);
  for (std::size_t i = 0; i < d_q; ++i) {
    double sum = 0.0;
    for (std::size_t c = 0; c < chunks; ++c) sum += z.data[c * d_q + i];
    const double normalized = sum / static_cast<double>(chunks);
    const double lo = spec.proprio_min[i];
    const double hi = spec.proprio_max[i];
    q.values[i] = static_cast<float>(lo + (normalized + 1.0) * 0.5 * (hi - lo));
  }
  return q;
}

LatentFrame encode_value(double value, LatentGeometry geometry) {
  if (!(value >= NormalizationSpec::kValueMin && value <= NormalizationSpec::kValueMax)) {
    throw ValidationError("value " + std::to_string(value) + " outside [0, 2]");
  }
  return LatentFrame(geometry, value - 1.0);
}

double decode_value(const LatentFrame& z) {
  return std::clamp(z.mean() + 1.0, NormalizationSpec::kValueMin, NormalizationSpec::kValueMax);
}

LatentFrame blank_frame(LatentGeometry geometry) { return LatentFrame(geometry, 0.0); }

ImageEncoder::ImageEncoder(std::uint64_t seed, LatentGeometry geometry, int patch)
    : seed_(seed), geometry_(geometry), patch_(patch) {
  if (patch < 1) throw ValidationError("image patch size must be >= 1");
  const std::size_t inputs = static_cast<std::size_t>(patch) * patch * 3;
  const std::size_t channels = static_cast<std::size_t>(geometry.channels);
  weights_.resize(inputs * channels);
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(inputs)));
  for (auto& w : weights_) w = normal(rng);
  for (std::size_t c = 0; c < channels; ++c) {
    double sum = 0.0;
    for (std::size_t i = 0; i < inputs; ++i) sum += weights_[i * channels + c];
    if (std::abs(sum) < kMinChannelSum) {
      const double wanted = sum < 0.0 ? -kMinChannelSum : kMinChannelSum;
      const double shift = (wanted - sum) / static_cast<double>(inputs);
      for (std::size_t i = 0; i < inputs; ++i) weights_[i * channels + c] += shift;
    }
  }
}

void ImageEncoder::encode_into(const RgbImage& view, std::span<float> out) const {
  if (view.height != geometry_.height * patch_ || view.width != geometry_.width * patch_) {
    throw GeometryError("image " + std::to_string(view.height) + "x" + std::to_string(view.width) +
                        " does not match latent " + std::to_string(geometry_.height) + "x" +
                        std::to_string(geometry_.width) + " with patch " + std::to_string(patch_));
  }
  if (out.size() != geometry_.size()) throw GeometryError("encode_into output has the wrong size");
  const int channels = geometry_.channels;
  std::vector<double> acc(channels);
  for (int hr = 0; hr < geometry_.height; ++hr) {
    for (int wc = 0; wc < geometry_.width; ++wc) {
      std::fill(acc.begin(), acc.end(), 0.0);
      std::size_t input = 0;
      for (int pr = 0; pr < patch_; ++pr) {
        for (int pc = 0; pc < patch_; ++pc) {
          const std::uint8_t* px = view.at(hr * patch_ + pr, wc * patch_ + pc);
          for (int ch = 0; ch < 3; ++ch, ++input) {
            const double x = px[ch] / 127.5 - 1.0;
            const double* row = &weights_[input * channels];
            for (int c = 0; c < channels; ++c) acc[c] += x * row[c];
          }
        }
      }
      float* dst = &out[(static_cast<std::size_t>(hr) * geometry_.width + wc) * channels];
      for (int c = 0; c < channels; ++c) dst[c] = static_cast<float>(acc[c]);
    }
  }
}

LatentFrame ImageEncoder::encode(const RgbImage& view) const {
  std::vector<float> buffer(geometry_.size());
  encode_into(view, buffer);
  LatentFrame frame(geometry_);
  std::copy(buffer.begin(), buffer.end(), frame.data.begin());
  return frame;
}

}  // namespace viva
