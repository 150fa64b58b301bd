#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "viva/episode.hpp"
#include "viva/latent_codec.hpp"
#include "viva/model_config.hpp"
#include "viva/velocity_model.hpp"

namespace viva {

// [blank, z_q(t), z_o1, z_o2, z_o3, z_q(t+K), z_v(t)]
struct LatentSequence {
  std::array<LatentFrame, kSequenceFrames> frames;

  static constexpr const std::array<bool, kSequenceFrames>& target_mask() { return kTargetMask; }
};

// Training mode (future proprioception and return given): all seven frames are
// clean. Inference mode (both absent): frames 5 and 6 hold standard Gaussian
// noise drawn from noise_seed.
LatentSequence assemble_sequence(const JointObservation& x_t, const std::optional<Proprioception>& q_future,
                                 const std::optional<double>& return_to_go, const ImageEncoder& encoder,
                                 const NormalizationSpec& spec, LatentGeometry geometry, std::uint64_t noise_seed = 0);

// Gather order mapping a frame's (H',W',C') cells to patch tokens.
class TokenLayout {
 public:
  TokenLayout(LatentGeometry geometry, int token_patch);

  int tokens() const { return tokens_; }
  int token_dim() const { return token_dim_; }
  // order()[token * token_dim + j] is the flat frame index of that token entry.
  const std::vector<int>& order() const { return order_; }

  template <typename Scalar, typename Src>
  void gather(std::span<const Src> frame, nn::Matrix<Scalar>& dst, int first_row) const {
    for (int t = 0; t < tokens_; ++t)
      for (int j = 0; j < token_dim_; ++j)
        dst(first_row + t, j) = static_cast<Scalar>(frame[order_[static_cast<std::size_t>(t) * token_dim_ + j]]);
  }

  template <typename Scalar>
  void scatter(const nn::Matrix<Scalar>& src, int first_row, std::span<double> frame) const {
    for (int t = 0; t < tokens_; ++t)
      for (int j = 0; j < token_dim_; ++j)
        frame[order_[static_cast<std::size_t>(t) * token_dim_ + j]] = static_cast<double>(src(first_row + t, j));
  }

 private:
  int tokens_ = 0;
  int token_dim_ = 0;
  std::vector<int> order_;
};

template <typename Scalar>
nn::Matrix<Scalar> tokenize(const LatentSequence& seq, const ModelConfig& config) {
  const TokenLayout layout(config.latent, config.token_patch);
  nn::Matrix<Scalar> tokens(config.sequence_tokens(), config.token_dim());
  for (int f = 0; f < kSequenceFrames; ++f) {
    if (seq.frames[f].geometry != config.latent) throw GeometryError("sequence frame geometry mismatch");
    layout.gather<Scalar, double>(seq.frames[f].data, tokens, f * layout.tokens());
  }
  return tokens;
}

// Frame-wise flow times: 0 on the clean prefix, tau on both targets.
template <typename Scalar>
nn::Matrix<Scalar> sequence_times(std::span<const Scalar> taus) {
  nn::Matrix<Scalar> times(static_cast<Eigen::Index>(taus.size()), kSequenceFrames);
  for (std::size_t b = 0; b < taus.size(); ++b)
    for (int f = 0; f < kSequenceFrames; ++f) times(b, f) = kTargetMask[f] ? taus[b] : Scalar(0);
  return times;
}

// Velocity predictions for the two target frames (future proprioception, value).
template <typename Scalar>
std::array<LatentFrame, 2> forward_velocity(const VelocityModel<Scalar>& model, const LatentSequence& seq,
                                            double tau) {
  const ModelConfig& config = model.config();
  const nn::Matrix<Scalar> tokens = tokenize<Scalar>(seq, config);
  const Scalar tau_s = static_cast<Scalar>(tau);
  const auto times = sequence_times<Scalar>(std::span<const Scalar>(&tau_s, 1));
  typename VelocityModel<Scalar>::Activations acts;
  const auto& out = model.forward(tokens, times, acts);
  if (!out.allFinite()) throw NumericError("non-finite velocity prediction at tau=" + std::to_string(tau));
  const TokenLayout layout(config.latent, config.token_patch);
  std::array<LatentFrame, 2> result{LatentFrame(config.latent), LatentFrame(config.latent)};
  layout.scatter<Scalar>(out, kFutureProprioFrame * layout.tokens(), result[0].data);
  layout.scatter<Scalar>(out, kValueFrame * layout.tokens(), result[1].data);
  return result;
}

}  // namespace viva
