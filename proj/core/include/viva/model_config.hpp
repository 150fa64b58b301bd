#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

#include "viva/latent_codec.hpp"

namespace viva {

// Frame order of the latent sequence: a clean conditioning prefix followed by
// the two generated targets.
enum SequenceFrame : int {
  kBlankFrame = 0,
  kProprioFrame = 1,
  kView1Frame = 2,
  kView2Frame = 3,
  kView3Frame = 4,
  kFutureProprioFrame = 5,
  kValueFrame = 6,
};
inline constexpr int kSequenceFrames = 7;
inline constexpr int kConditioningFrames = 5;
inline constexpr std::array<bool, kSequenceFrames> kTargetMask{false, false, false, false, false, true, true};

struct ModelConfig {
  int layers = 4;
  int width = 128;
  int heads = 4;
  int mlp_ratio = 4;
  // Side length, in latent cells, of the square patch that becomes one token.
  int token_patch = 2;
  LatentGeometry latent{};
  int proprio_dim = 3;
  int horizon = 50;  // K

  int tokens_per_frame() const { return (latent.height / token_patch) * (latent.width / token_patch); }
  int sequence_tokens() const { return kSequenceFrames * tokens_per_frame(); }
  int token_dim() const { return token_patch * token_patch * latent.channels; }
  int mlp_width() const { return mlp_ratio * width; }

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Exact number of learned scalars in a VelocityModel built from `config`.
std::size_t count_params(const ModelConfig& config);

}  // namespace viva
