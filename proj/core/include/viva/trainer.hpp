#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "viva/episode.hpp"
#include "viva/latent_codec.hpp"
#include "viva/model_config.hpp"
#include "viva/random.hpp"
#include "viva/sequence.hpp"
#include "viva/velocity_model.hpp"

namespace viva {

struct LossWeights {
  double prop = 1.0;
  double val = 0.5;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

struct TrainSchedule {
  int steps = 20000;
  int batch = 32;
  double lr = 1e-4;  // peak step size, cosine-decayed to zero
  std::uint64_t seed = 0;
  int warmup = 0;
  double grad_clip = 1.0;  // global-norm clip; <= 0 disables

  void validate() const;
  bool operator==(const TrainSchedule&) const = default;
};

struct TrainOptions {
  ModelConfig model;
  LossWeights weights;
  TrainSchedule schedule;
  std::uint64_t encoder_seed = 0x1DEA;
};

// One draw of the linear noise path z_tau = (1 - tau) z0 + tau z1 for both
// target frames, sharing tau.
struct FlowSample {
  std::array<LatentFrame, 2> z0;
  std::array<LatentFrame, 2> z1;
  double tau = 0.0;
  std::array<LatentFrame, 2> z_tau;
};

LatentFrame interpolate(const LatentFrame& z0, const LatentFrame& z1, double tau);
FlowSample draw_flow_sample(const std::array<LatentFrame, 2>& z0, Rng& rng);

struct LossParts {
  double total = 0.0;
  double prop = 0.0;
  double val = 0.0;
};

// A batch already laid out in token space. `targets` stacks, per sample, the
// velocity targets z1 - z0 of the future-proprioception tokens followed by the
// value tokens.
template <typename Scalar>
struct FlowBatch {
  nn::Matrix<Scalar> tokens;
  nn::Matrix<Scalar> times;
  nn::Matrix<Scalar> targets;
  int size = 0;
};

// Weighted per-frame MSE averaged over the batch. When `grad` is non-empty the
// gradient of the returned total is accumulated into it.
template <typename Scalar>
LossParts flow_loss_batch(const VelocityModel<Scalar>& model, const FlowBatch<Scalar>& batch,
                          const LossWeights& weights, std::span<Scalar> grad) {
  const ModelConfig& config = model.config();
  const int tpf = config.tokens_per_frame();
  const int n = config.sequence_tokens();
  const int d = config.token_dim();
  typename VelocityModel<Scalar>::Activations acts;
  const auto& out = model.forward(batch.tokens, batch.times, acts);

  nn::Matrix<Scalar> d_out;
  const bool backward = !grad.empty();
  if (backward) d_out.setZero(out.rows(), out.cols());
  const double per_frame = static_cast<double>(tpf) * d;
  double prop = 0.0;
  double val = 0.0;
  for (int b = 0; b < batch.size; ++b) {
    for (int which = 0; which < 2; ++which) {
      const int frame = which == 0 ? kFutureProprioFrame : kValueFrame;
      const auto pred = out.block(b * n + frame * tpf, 0, tpf, d);
      const auto target = batch.targets.block((2 * b + which) * tpf, 0, tpf, d);
      const nn::Matrix<Scalar> diff = pred - target;
      const double mse = static_cast<double>(diff.squaredNorm()) / per_frame;
      (which == 0 ? prop : val) += mse;
      if (backward) {
        const double lambda = which == 0 ? weights.prop : weights.val;
        const Scalar coef = static_cast<Scalar>(2.0 * lambda / (per_frame * batch.size));
        d_out.block(b * n + frame * tpf, 0, tpf, d) = coef * diff;
      }
    }
  }
  LossParts parts;
  parts.prop = prop / batch.size;
  parts.val = val / batch.size;
  parts.total = weights.prop * parts.prop + weights.val * parts.val;
  if (!std::isfinite(parts.total)) {
    throw NumericError("non-finite flow loss (prop=" + std::to_string(parts.prop) +
                       ", val=" + std::to_string(parts.val) + ")");
  }
  if (backward) model.backward(acts, d_out, grad);
  return parts;
}

// Builds a one-sample batch from a clean sequence and a drawn flow sample.
template <typename Scalar>
FlowBatch<Scalar> make_flow_batch(const LatentSequence& clean, const FlowSample& sample, const ModelConfig& config) {
  LatentSequence noised = clean;
  noised.frames[kFutureProprioFrame] = sample.z_tau[0];
  noised.frames[kValueFrame] = sample.z_tau[1];
  FlowBatch<Scalar> batch;
  batch.size = 1;
  batch.tokens = tokenize<Scalar>(noised, config);
  const Scalar tau = static_cast<Scalar>(sample.tau);
  batch.times = sequence_times<Scalar>(std::span<const Scalar>(&tau, 1));
  const TokenLayout layout(config.latent, config.token_patch);
  batch.targets.resize(2 * layout.tokens(), layout.token_dim());
  for (int which = 0; which < 2; ++which) {
    // The regression target is the path's constant velocity; tau never enters it.
    std::vector<double> velocity(sample.z0[which].data.size());
    for (std::size_t i = 0; i < velocity.size(); ++i) velocity[i] = sample.z1[which].data[i] - sample.z0[which].data[i];
    layout.gather<Scalar, double>(velocity, batch.targets, which * layout.tokens());
  }
  return batch;
}

// Single-tuple objective: assembles the clean training sequence, draws
// (tau, z1) from rng and evaluates the weighted flow-matching loss.
template <typename Scalar>
LossParts flow_loss(const VelocityModel<Scalar>& model, const ImageEncoder& encoder, const NormalizationSpec& spec,
                    const TrainingTuple& tuple, const LossWeights& weights, Rng& rng, std::span<Scalar> grad) {
  const ModelConfig& config = model.config();
  const LatentSequence clean = assemble_sequence(tuple.current, tuple.future_proprio, tuple.return_target, encoder,
                                                 spec, config.latent);
  const FlowSample sample =
      draw_flow_sample({clean.frames[kFutureProprioFrame], clean.frames[kValueFrame]}, rng);
  return flow_loss_batch<Scalar>(model, make_flow_batch<Scalar>(clean, sample, config), weights, grad);
}

// Per-dimension min/max over every step, widened by 1% of the range on each
// side (or by 1e-3 for constant dimensions).
NormalizationSpec fit_normalization(const std::vector<Episode>& corpus);

struct AdamState {
  std::vector<float> m;
  std::vector<float> v;
  long long step = 0;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string model_kind = "viva";
  ModelConfig config;
  NormalizationSpec norm;
  LossWeights weights;
  TrainSchedule schedule;
  std::uint64_t encoder_seed = 0;
  int image_patch = 4;
  long long step = 0;
  std::string rng_state;
  std::vector<float> params;
  AdamState adam;
  std::vector<std::string> train_shapes;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
// Also rejects checkpoints whose latent geometry or proprio dim differs from `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

struct StepMetrics {
  long long step = 0;
  LossParts loss;
  double lr = 0.0;
};

double scheduled_lr(const TrainSchedule& schedule, long long step);

// Precomputed conditioning for every (episode, t) of a corpus.
class ExampleCache {
 public:
  ExampleCache(const std::vector<Episode>& corpus, const ImageEncoder& encoder, const NormalizationSpec& spec,
               int horizon_k);

  std::size_t size() const { return returns_.size(); }
  int proprio_dim() const { return d_q_; }
  std::span<const float> views(std::size_t i) const;  // 3 x H'W'C'
  std::span<const float> proprio(std::size_t i) const;  // normalised, clamped
  std::span<const float> future_proprio(std::size_t i) const;
  double return_target(std::size_t i) const { return returns_[i]; }
  LatentGeometry geometry() const { return geometry_; }

 private:
  LatentGeometry geometry_;
  int d_q_ = 0;
  std::vector<float> views_;
  std::vector<float> proprio_;
  std::vector<float> future_;
  std::vector<double> returns_;
};

class FlowTrainer {
 public:
  FlowTrainer(const std::vector<Episode>& corpus, const TrainOptions& options);
  FlowTrainer(const std::vector<Episode>& corpus, const Checkpoint& resume_from);

  StepMetrics step();
  bool done() const { return step_ >= schedule_.steps; }
  long long current_step() const { return step_; }
  Checkpoint checkpoint() const;
  const VelocityModel<float>& model() const { return model_; }
  const NormalizationSpec& normalization() const { return norm_; }
  const ImageEncoder& encoder() const { return encoder_; }

 private:
  FlowBatch<float> next_batch();

  ModelConfig config_;
  LossWeights weights_;
  TrainSchedule schedule_;
  NormalizationSpec norm_;
  ImageEncoder encoder_;
  VelocityModel<float> model_;
  ExampleCache cache_;
  AdamState adam_;
  Rng rng_;
  long long step_ = 0;
  std::vector<std::string> shapes_;
};

// Reads the dataset, trains for schedule.steps and returns the final
// checkpoint. When metrics_csv is set, writes step,total_loss,loss_prop,loss_val,lr.
Checkpoint train(const std::filesystem::path& corpus_dir, const TrainOptions& options,
                 const std::optional<std::filesystem::path>& metrics_csv = std::nullopt);
Checkpoint train(const std::vector<Episode>& corpus, const TrainOptions& options,
                 const std::optional<std::filesystem::path>& metrics_csv = std::nullopt);

// Adam update with bias correction; grad is clipped to `clip` global norm first.
void adam_update(std::span<float> params, std::span<float> grad, AdamState& state, double lr, double clip);

}  // namespace viva
