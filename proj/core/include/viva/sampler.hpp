#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "viva/episode.hpp"
#include "viva/latent_codec.hpp"
#include "viva/model_config.hpp"
#include "viva/trainer.hpp"
#include "viva/velocity_model.hpp"

namespace viva {

struct SamplerConfig {
  int n_steps = 1;
  std::uint64_t seed = 0;
  int n_seeds = 1;  // >1 averages decoded outputs over independent noise draws

  void validate() const;
};

struct ValueEstimate {
  double v_hat = 0.0;     // clamped to [0,2]
  double progress = 0.0;  // 1 - min(v_hat, 1)
  double raw_frame_mean = 0.0;

  // Builds the estimate from an unclamped value; clamps once.
  static ValueEstimate from_raw(double raw_value, double frame_mean);
};

double progress_from_value(double v_hat);

// Euler integration of dz/dtau = v(z, tau) from tau=1 to tau=0 in n_steps
// uniform sub-intervals. velocity(z, tau) returns a field shaped like z.
using VelocityField = std::function<std::array<LatentFrame, 2>(const std::array<LatentFrame, 2>&, double)>;
std::array<LatentFrame, 2> integrate(const VelocityField& velocity, std::array<LatentFrame, 2> z1, int n_steps);

// Anything producing a value for one observation. ViVa and the bin-classifier
// share this so evaluation treats them identically.
class ValueEstimator {
 public:
  virtual ~ValueEstimator() = default;
  virtual std::string name() const = 0;
  // seed only matters for stochastic estimators.
  virtual ValueEstimate estimate(const JointObservation& x, std::uint64_t seed) const = 0;
  // Default loops over estimate().
  virtual std::vector<ValueEstimate> estimate_batch(const std::vector<const JointObservation*>& xs,
                                                    const std::vector<std::uint64_t>& seeds) const;
};

struct Prediction {
  Proprioception future;
  ValueEstimate value;
};

// Trained velocity model plus everything needed to condition and decode it.
class VivaModel : public ValueEstimator {
 public:
  explicit VivaModel(const Checkpoint& checkpoint, SamplerConfig sampler = {});
  static VivaModel load(const std::filesystem::path& path, SamplerConfig sampler = {});

  std::string name() const override { return kind_; }
  ValueEstimate estimate(const JointObservation& x, std::uint64_t seed) const override;
  std::vector<ValueEstimate> estimate_batch(const std::vector<const JointObservation*>& xs,
                                            const std::vector<std::uint64_t>& seeds) const override;

  std::vector<Prediction> infer_batch(const std::vector<const JointObservation*>& xs,
                                      const std::vector<std::uint64_t>& seeds) const;

  const ModelConfig& config() const { return model_.config(); }
  const NormalizationSpec& normalization() const { return norm_; }
  const ImageEncoder& encoder() const { return encoder_; }
  const VelocityModel<float>& velocity_model() const { return model_; }
  const SamplerConfig& sampler() const { return sampler_; }
  const std::vector<std::string>& train_shapes() const { return train_shapes_; }

 private:
  std::string kind_;
  NormalizationSpec norm_;
  ImageEncoder encoder_;
  VelocityModel<float> model_;
  SamplerConfig sampler_;
  std::vector<std::string> train_shapes_;
};

// Reverse-flow inference for one observation. config.seed fixes the noise.
Prediction infer(const VivaModel& model, const JointObservation& x_t, const SamplerConfig& config);

struct TracePoint {
  int t = 0;
  double v_hat = 0.0;
  double progress = 0.0;
  std::optional<double> g_true;
};

// Values at t = 0, stride, 2*stride, ... and always at T. The noise seed at
// step t is mix_seed(seed, t), so a trace point does not depend on stride.
std::vector<TracePoint> value_trace(const ValueEstimator& estimator, const Episode& episode, int stride,
                                    std::uint64_t seed = 0);
void write_trace_csv(const std::filesystem::path& path, const std::vector<TracePoint>& trace);

// A_t = v(x_t) - v(x_min(t+K,T)). Positive when the estimated return-to-go
// drops over the window, i.e. the policy made progress.
double advantage(const ValueEstimator& estimator, const Episode& episode, int t, int horizon_k,
                 std::uint64_t seed = 0);
// Same with an arbitrary per-step value function (oracles, cached traces).
double advantage(const std::function<double(int)>& value_at, int horizon, int t, int horizon_k);

}  // namespace viva
