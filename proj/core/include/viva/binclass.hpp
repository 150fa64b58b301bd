#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "viva/episode.hpp"
#include "viva/latent_codec.hpp"
#include "viva/nn.hpp"
#include "viva/sampler.hpp"
#include "viva/trainer.hpp"

namespace viva {

// 201 uniform bins over [0,2]; the last bin is right-closed.
struct BinSpec {
  int n_bins = 201;
  double lo = NormalizationSpec::kValueMin;
  double hi = NormalizationSpec::kValueMax;

  double width() const { return (hi - lo) / n_bins; }
  double edge(int i) const { return lo + (hi - lo) * i / n_bins; }
  double center(int i) const { return lo + (hi - lo) * (i + 0.5) / n_bins; }
};

int bin_index(double g, const BinSpec& spec = {});

// Softmax over logits, then the expected bin center.
std::vector<double> bin_distribution(std::span<const double> logits);
double expected_value(std::span<const double> logits, const BinSpec& spec = {});

struct BaselineConfig {
  int hidden = 128;
  LatentGeometry latent;
  int proprio_dim = 3;
  int n_bins = 201;

  int input_dim() const { return 3 * static_cast<int>(latent.size()) + proprio_dim; }
  void validate() const;
};

std::size_t count_baseline_params(const BaselineConfig& config);
// Hidden width whose parameter count is closest to `target`.
int matched_hidden_width(std::size_t target, const BaselineConfig& base);

// Two GELU hidden layers over [three image latents, normalised proprio]; the
// output layer starts at zero so the untrained distribution is uniform.
class BinClassifier {
 public:
  explicit BinClassifier(const BaselineConfig& config, std::uint64_t init_seed = 0);

  struct Activations {
    nn::Matrix<float> input, pre1, h1, pre2, h2, logits;
  };

  const nn::Matrix<float>& forward(const nn::Matrix<float>& input, Activations& acts) const;
  void backward(const Activations& acts, const nn::Matrix<float>& d_logits, std::span<float> grad) const;

  const BaselineConfig& config() const { return config_; }
  const nn::ParamLayout& layout() const { return layout_; }
  std::size_t parameter_count() const { return params_.size(); }
  std::span<float> parameters() { return params_; }
  std::span<const float> parameters() const { return params_; }

 private:
  BaselineConfig config_;
  nn::ParamLayout layout_;
  nn::AlignedVector<float> params_;
  std::size_t w1_, b1_, w2_, b2_, w3_, b3_;
};

// Mean cross-entropy against integer bin labels; writes dLoss/dlogits.
double cross_entropy(const nn::Matrix<float>& logits, std::span<const int> labels, nn::Matrix<float>* d_logits);

inline constexpr std::uint32_t kBaselineVersion = 1;

struct BaselineCheckpoint {
  BaselineConfig config;
  NormalizationSpec norm;
  TrainSchedule schedule;
  std::uint64_t encoder_seed = 0x1DEA;
  int image_patch = 4;
  long long step = 0;
  std::string rng_state;
  std::vector<float> params;
  AdamState adam;
  std::vector<std::string> train_shapes;
};

void save_baseline(const BaselineCheckpoint& checkpoint, const std::filesystem::path& path);
BaselineCheckpoint load_baseline(const std::filesystem::path& path);

struct BaselineOptions {
  BaselineConfig config;
  TrainSchedule schedule;
  std::uint64_t encoder_seed = 0x1DEA;
  // When set, hidden is chosen so the parameter count matches this within 20%.
  std::optional<std::size_t> match_params;
};

// Same schedule and CSV contract as train(); loss_prop is always 0 and
// loss_val carries the cross-entropy.
BaselineCheckpoint train_baseline(const std::vector<Episode>& corpus, const BaselineOptions& options,
                                  const std::optional<std::filesystem::path>& metrics_csv = std::nullopt);
BaselineCheckpoint train_baseline(const std::filesystem::path& corpus_dir, const BaselineOptions& options,
                                  const std::optional<std::filesystem::path>& metrics_csv = std::nullopt);

class BaselineModel : public ValueEstimator {
 public:
  explicit BaselineModel(const BaselineCheckpoint& checkpoint);
  static BaselineModel load(const std::filesystem::path& path);

  std::string name() const override { return "binclass"; }
  ValueEstimate estimate(const JointObservation& x, std::uint64_t seed = 0) const override;
  std::vector<ValueEstimate> estimate_batch(const std::vector<const JointObservation*>& xs,
                                            const std::vector<std::uint64_t>& seeds) const override;
  std::vector<double> distribution(const JointObservation& x) const;

  const BinClassifier& classifier() const { return net_; }
  const std::vector<std::string>& train_shapes() const { return train_shapes_; }

 private:
  nn::Matrix<float> features(const std::vector<const JointObservation*>& xs) const;

  NormalizationSpec norm_;
  ImageEncoder encoder_;
  BinClassifier net_;
  std::vector<std::string> train_shapes_;
};

ValueEstimate baseline_value(const BaselineModel& model, const JointObservation& x_t);

}  // namespace viva
