#include "viva/model_config.hpp"

#include <string>

#include "viva/errors.hpp"

namespace viva {

void ModelConfig::validate() const {
  if (layers < 0) throw ValidationError("layers must be >= 0");
  if (width < 2 || width % 2 != 0) throw ValidationError("width must be a positive even number");
  if (heads < 1 || width % heads != 0) {
    throw ValidationError("width " + std::to_string(width) + " is not divisible by heads " + std::to_string(heads));
  }
  if (mlp_ratio < 1) throw ValidationError("mlp_ratio must be >= 1");
  if (token_patch < 1 || latent.height % token_patch != 0 || latent.width % token_patch != 0) {
    throw ValidationError("token_patch must divide the latent height and width");
  }
  if (proprio_dim < 1 || static_cast<std::size_t>(proprio_dim) > latent.size()) {
    throw ValidationError("proprio_dim must fit inside a latent frame");
  }
  if (horizon < 1) throw ValidationError("horizon K must be >= 1");
}

std::size_t count_params(const ModelConfig& c) {
  const std::size_t w = c.width;
  const std::size_t m = c.mlp_width();
  const std::size_t d = c.token_dim();
  const std::size_t tpf = c.tokens_per_frame();
  const std::size_t embed = d * w + w + kSequenceFrames * w + tpf * w;
  const std::size_t time_mlp = 2 * (w * w + w);
  // attention + MLP + two LayerNorms + the 6w shift/scale/gate modulation
  const std::size_t block = 4 * w * w + 2 * w * m + 9 * w + m + 6 * w * w + 6 * w;
  const std::size_t head = 2 * w + 2 * w * w + 2 * w + w * d + d;
  return embed + time_mlp + static_cast<std::size_t>(c.layers) * block + head;
}

}  // namespace viva
