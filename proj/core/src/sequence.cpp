#include "viva/sequence.hpp"

#include "viva/errors.hpp"
#include "viva/random.hpp"

namespace viva {

TokenLayout::TokenLayout(LatentGeometry geometry, int token_patch) {
  if (token_patch < 1 || geometry.height % token_patch != 0 || geometry.width % token_patch != 0) {
    throw GeometryError("token patch does not tile the latent frame");
  }
  const int grid_w = geometry.width / token_patch;
  tokens_ = (geometry.height / token_patch) * grid_w;
  token_dim_ = token_patch * token_patch * geometry.channels;
  order_.reserve(geometry.size());
  for (int t = 0; t < tokens_; ++t) {
    const int pr = t / grid_w;
    const int pc = t % grid_w;
    for (int r = 0; r < token_patch; ++r)
      for (int c = 0; c < token_patch; ++c)
        for (int ch = 0; ch < geometry.channels; ++ch) {
          const int row = pr * token_patch + r;
          const int col = pc * token_patch + c;
          order_.push_back((row * geometry.width + col) * geometry.channels + ch);
        }
  }
}

LatentSequence assemble_sequence(const JointObservation& x_t, const std::optional<Proprioception>& q_future,
                                 const std::optional<double>& return_to_go, const ImageEncoder& encoder,
                                 const NormalizationSpec& spec, LatentGeometry geometry, std::uint64_t noise_seed) {
  if (encoder.geometry() != geometry) throw GeometryError("image encoder geometry does not match the model");
  if (q_future.has_value() != return_to_go.has_value()) {
    throw ValidationError("training sequences need both targets; inference sequences need neither");
  }
  LatentSequence seq;
  seq.frames[kBlankFrame] = blank_frame(geometry);
  seq.frames[kProprioFrame] = encode_proprio(x_t.proprio, spec, geometry);
  for (int k = 0; k < kNumViews; ++k) seq.frames[kView1Frame + k] = encoder.encode(x_t.obs.views[k]);
  if (q_future) {
    seq.frames[kFutureProprioFrame] = encode_proprio(*q_future, spec, geometry);
    seq.frames[kValueFrame] = encode_value(*return_to_go, geometry);
  } else {
    Rng rng(noise_seed);
    for (int f : {kFutureProprioFrame, kValueFrame}) {
      seq.frames[f] = LatentFrame(geometry);
      fill_standard_normal<double>(rng, seq.frames[f].data);
    }
  }
  return seq;
}

}  // namespace viva
