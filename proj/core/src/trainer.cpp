#include "viva/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include <spdlog/spdlog.h>

#include "json_io.hpp"
#include "viva/container.hpp"
#include "viva/dataset.hpp"
#include "viva/errors.hpp"

namespace viva {
namespace fs = std::filesystem;

namespace {

constexpr char kMagic[] = "VIVA";
constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

int image_patch_for(const std::vector<Episode>& corpus, LatentGeometry latent) {
  const RgbImage& view = corpus.front().steps.front().obs.views[0];
  if (view.height % latent.height != 0 || view.width % latent.width != 0 ||
      view.height / latent.height != view.width / latent.width) {
    throw GeometryError("images of " + std::to_string(view.height) + "x" + std::to_string(view.width) +
                        " cannot be patched onto a " + std::to_string(latent.height) + "x" +
                        std::to_string(latent.width) + " latent grid");
  }
  return view.height / latent.height;
}

void check_corpus(const std::vector<Episode>& corpus, const ModelConfig& config) {
  if (corpus.empty()) throw ValidationError("empty training corpus");
  const std::size_t d_q = corpus.front().steps.front().proprio.dim();
  if (d_q != static_cast<std::size_t>(config.proprio_dim)) {
    throw ValidationError("dataset proprioception dim " + std::to_string(d_q) + " != model proprio_dim " +
                          std::to_string(config.proprio_dim));
  }
}

std::vector<std::string> corpus_shapes(const std::vector<Episode>& corpus) {
  std::vector<std::string> shapes;
  for (const auto& ep : corpus) shapes.push_back(ep.meta.object_shape);
  std::sort(shapes.begin(), shapes.end());
  shapes.erase(std::unique(shapes.begin(), shapes.end()), shapes.end());
  return shapes;
}

std::string rng_to_string(const Rng& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

Rng rng_from_string(const std::string& text) {
  Rng rng;
  std::istringstream in(text);
  in >> rng;
  if (!in) throw FormatError("corrupt RNG state in checkpoint");
  return rng;
}

}  // namespace

void LossWeights::validate() const {
  if (prop < 0.0 || val < 0.0) throw ValidationError("loss weights must be non-negative");
  if (prop == 0.0 && val == 0.0) throw ValidationError("loss weights cannot both be zero");
}

void TrainSchedule::validate() const {
  if (steps < 0) throw ValidationError("steps must be >= 0");
  if (batch < 1) throw ValidationError("batch must be >= 1");
  if (!(lr > 0.0)) throw ValidationError("learning rate must be positive");
  if (warmup < 0) throw ValidationError("warmup must be >= 0");
}

LatentFrame interpolate(const LatentFrame& z0, const LatentFrame& z1, double tau) {
  if (z0.geometry != z1.geometry) throw GeometryError("interpolating frames of different geometry");
  if (tau == 0.0) return z0;
  if (tau == 1.0) return z1;
  LatentFrame out(z0.geometry);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = (1.0 - tau) * z0.data[i] + tau * z1.data[i];
  return out;
}

FlowSample draw_flow_sample(const std::array<LatentFrame, 2>& z0, Rng& rng) {
  FlowSample s;
  s.z0 = z0;
  s.tau = uniform(rng, 0.0, 1.0);
  for (int k = 0; k < 2; ++k) {
    s.z1[k] = LatentFrame(z0[k].geometry);
    fill_standard_normal<double>(rng, s.z1[k].data);
    s.z_tau[k] = interpolate(s.z0[k], s.z1[k], s.tau);
  }
  return s;
}

NormalizationSpec fit_normalization(const std::vector<Episode>& corpus) {
  if (corpus.empty() || corpus.front().steps.empty()) throw ValidationError("cannot fit normalization on an empty corpus");
  const std::size_t d_q = corpus.front().steps.front().proprio.dim();
  NormalizationSpec spec;
  spec.proprio_min.assign(d_q, std::numeric_limits<double>::infinity());
  spec.proprio_max.assign(d_q, -std::numeric_limits<double>::infinity());
  for (const auto& ep : corpus) {
    for (const auto& step : ep.steps) {
      if (step.proprio.dim() != d_q) throw ValidationError("inconsistent proprioception dims in corpus");
      for (std::size_t i = 0; i < d_q; ++i) {
        spec.proprio_min[i] = std::min(spec.proprio_min[i], static_cast<double>(step.proprio.values[i]));
        spec.proprio_max[i] = std::max(spec.proprio_max[i], static_cast<double>(step.proprio.values[i]));
      }
    }
  }
  for (std::size_t i = 0; i < d_q; ++i) {
    const double range = spec.proprio_max[i] - spec.proprio_min[i];
    const double pad = range > 0.0 ? 0.01 * range : 1e-3;
    spec.proprio_min[i] -= pad;
    spec.proprio_max[i] += pad;
  }
  return spec;
}

double scheduled_lr(const TrainSchedule& s, long long step) {
  const double warm = s.warmup > 0 ? std::min(1.0, static_cast<double>(step + 1) / s.warmup) : 1.0;
  const double progress = s.steps > 0 ? static_cast<double>(step) / s.steps : 0.0;
  return s.lr * warm * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void adam_update(std::span<float> params, std::span<float> grad, AdamState& state, double lr, double clip) {
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0f);
    state.v.assign(params.size(), 0.0f);
  }
  if (clip > 0.0) {
    double norm2 = 0.0;
    for (float g : grad) norm2 += static_cast<double>(g) * g;
    const double norm = std::sqrt(norm2);
    if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
    if (norm > clip) {
      const float scale = static_cast<float>(clip / norm);
      for (float& g : grad) g *= scale;
    }
  }
  state.step += 1;
  const float b1 = static_cast<float>(kAdamBeta1);
  const float b2 = static_cast<float>(kAdamBeta2);
  const float c1 = static_cast<float>(1.0 / (1.0 - std::pow(kAdamBeta1, static_cast<double>(state.step))));
  const float c2 = static_cast<float>(1.0 / (1.0 - std::pow(kAdamBeta2, static_cast<double>(state.step))));
  const float step_size = static_cast<float>(lr);
  const float eps = static_cast<float>(kAdamEps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = b1 * state.m[i] + (1.0f - b1) * grad[i];
    state.v[i] = b2 * state.v[i] + (1.0f - b2) * grad[i] * grad[i];
    params[i] -= step_size * (state.m[i] * c1) / (std::sqrt(state.v[i] * c2) + eps);
  }
}

ExampleCache::ExampleCache(const std::vector<Episode>& corpus, const ImageEncoder& encoder,
                           const NormalizationSpec& spec, int horizon_k)
    : geometry_(encoder.geometry()), d_q_(static_cast<int>(spec.dim())) {
  const std::size_t cells = geometry_.size();
  std::size_t total = 0;
  for (const auto& ep : corpus) total += ep.steps.size();
  views_.resize(total * kNumViews * cells);
  proprio_.reserve(total * d_q_);
  future_.reserve(total * d_q_);
  returns_.reserve(total);

  std::size_t row = 0;
  for (std::size_t e = 0; e < corpus.size(); ++e) {
    const Episode& ep = corpus[e];
    for (int t = 0; t <= ep.horizon(); ++t, ++row) {
      const TrainingTuple tuple = sample_tuple(ep, t, horizon_k, e);
      for (int k = 0; k < kNumViews; ++k) {
        encoder.encode_into(tuple.current.obs.views[k],
                            std::span<float>(views_).subspan((row * kNumViews + k) * cells, cells));
      }
      const LatentFrame zq = encode_proprio(tuple.current.proprio, spec, geometry_);
      const LatentFrame zf = encode_proprio(tuple.future_proprio, spec, geometry_);
      for (int i = 0; i < d_q_; ++i) {
        proprio_.push_back(static_cast<float>(zq.data[i]));
        future_.push_back(static_cast<float>(zf.data[i]));
      }
      returns_.push_back(tuple.return_target);
    }
  }
}

std::span<const float> ExampleCache::views(std::size_t i) const {
  const std::size_t n = kNumViews * geometry_.size();
  return std::span<const float>(views_).subspan(i * n, n);
}

std::span<const float> ExampleCache::proprio(std::size_t i) const {
  return std::span<const float>(proprio_).subspan(i * d_q_, d_q_);
}

std::span<const float> ExampleCache::future_proprio(std::size_t i) const {
  return std::span<const float>(future_).subspan(i * d_q_, d_q_);
}

FlowTrainer::FlowTrainer(const std::vector<Episode>& corpus, const TrainOptions& options)
    : config_((check_corpus(corpus, options.model), options.model)),
      weights_(options.weights),
      schedule_(options.schedule),
      norm_(fit_normalization(corpus)),
      encoder_(options.encoder_seed, options.model.latent, image_patch_for(corpus, options.model.latent)),
      model_(options.model, mix_seed(options.schedule.seed, 1)),
      cache_(corpus, encoder_, norm_, options.model.horizon),
      rng_(mix_seed(options.schedule.seed, 2)),
      shapes_(corpus_shapes(corpus)) {
  weights_.validate();
  schedule_.validate();
  spdlog::info("flow trainer: {} examples, {} parameters, lambda_prop={} lambda_val={}", cache_.size(),
               model_.parameter_count(), weights_.prop, weights_.val);
}

FlowTrainer::FlowTrainer(const std::vector<Episode>& corpus, const Checkpoint& ck)
    : config_((check_corpus(corpus, ck.config), ck.config)),
      weights_(ck.weights),
      schedule_(ck.schedule),
      norm_(ck.norm),
      encoder_(ck.encoder_seed, ck.config.latent, ck.image_patch),
      model_(ck.config),
      cache_(corpus, encoder_, norm_, ck.config.horizon),
      adam_(ck.adam),
      rng_(rng_from_string(ck.rng_state)),
      step_(ck.step),
      shapes_(ck.train_shapes) {
  if (ck.params.size() != model_.parameter_count()) throw GeometryError("checkpoint parameter count mismatch");
  std::copy(ck.params.begin(), ck.params.end(), model_.parameters().begin());
}

FlowBatch<float> FlowTrainer::next_batch() {
  const int b_size = schedule_.batch;
  const int tpf = config_.tokens_per_frame();
  const int n = config_.sequence_tokens();
  const TokenLayout layout(config_.latent, config_.token_patch);
  const std::size_t cells = config_.latent.size();
  const int d_q = cache_.proprio_dim();

  FlowBatch<float> batch;
  batch.size = b_size;
  batch.tokens.resize(static_cast<Eigen::Index>(b_size) * n, config_.token_dim());
  batch.times.resize(b_size, kSequenceFrames);
  batch.targets.resize(static_cast<Eigen::Index>(b_size) * 2 * tpf, config_.token_dim());

  std::uniform_int_distribution<std::size_t> pick(0, cache_.size() - 1);
  std::vector<float> frame(cells);
  std::vector<float> z0(cells);
  std::vector<float> z1(cells);
  for (int b = 0; b < b_size; ++b) {
    const std::size_t idx = pick(rng_);
    const float tau = static_cast<float>(uniform(rng_, 0.0, 1.0));
    for (int f = 0; f < kSequenceFrames; ++f) batch.times(b, f) = kTargetMask[f] ? tau : 0.0f;

    std::fill(frame.begin(), frame.end(), 0.0f);
    layout.gather<float, float>(frame, batch.tokens, b * n + kBlankFrame * tpf);
    const auto q = cache_.proprio(idx);
    for (std::size_t i = 0; i < cells; ++i) frame[i] = q[i % d_q];
    layout.gather<float, float>(frame, batch.tokens, b * n + kProprioFrame * tpf);
    const auto views = cache_.views(idx);
    for (int k = 0; k < kNumViews; ++k) {
      layout.gather<float, float>(views.subspan(k * cells, cells), batch.tokens, b * n + (kView1Frame + k) * tpf);
    }

    for (int which = 0; which < 2; ++which) {
      if (which == 0) {
        const auto qf = cache_.future_proprio(idx);
        for (std::size_t i = 0; i < cells; ++i) z0[i] = qf[i % d_q];
      } else {
        std::fill(z0.begin(), z0.end(), static_cast<float>(cache_.return_target(idx) - 1.0));
      }
      fill_standard_normal<float>(rng_, z1);
      for (std::size_t i = 0; i < cells; ++i) frame[i] = (1.0f - tau) * z0[i] + tau * z1[i];
      const int target_frame = which == 0 ? kFutureProprioFrame : kValueFrame;
      layout.gather<float, float>(frame, batch.tokens, b * n + target_frame * tpf);
      for (std::size_t i = 0; i < cells; ++i) frame[i] = z1[i] - z0[i];
      layout.gather<float, float>(frame, batch.targets, (2 * b + which) * tpf);
    }
  }
  return batch;
}

StepMetrics FlowTrainer::step() {
  if (done()) throw ValidationError("training schedule already complete");
  const FlowBatch<float> batch = next_batch();
  nn::AlignedVector<float> grad(model_.parameter_count(), 0.0f);
  StepMetrics metrics;
  try {
    metrics.loss = flow_loss_batch<float>(model_, batch, weights_, grad);
  } catch (const NumericError& e) {
    throw NumericError("step " + std::to_string(step_) + ": " + e.what());
  }
  metrics.lr = scheduled_lr(schedule_, step_);
  adam_update(model_.parameters(), grad, adam_, metrics.lr, schedule_.grad_clip);
  metrics.step = step_;
  step_ += 1;
  return metrics;
}

Checkpoint FlowTrainer::checkpoint() const {
  Checkpoint ck;
  ck.config = config_;
  ck.norm = norm_;
  ck.weights = weights_;
  ck.schedule = schedule_;
  ck.encoder_seed = encoder_.seed();
  ck.image_patch = encoder_.patch();
  ck.step = step_;
  ck.rng_state = rng_to_string(rng_);
  ck.params.assign(model_.parameters().begin(), model_.parameters().end());
  ck.adam = adam_;
  ck.train_shapes = shapes_;
  return ck;
}

namespace {

void write_metrics_row(std::FILE* f, const StepMetrics& m) {
  std::fprintf(f, "%lld,%.9g,%.9g,%.9g,%.9g\n", m.step, m.loss.total, m.loss.prop, m.loss.val, m.lr);
}

}  // namespace

Checkpoint train(const std::vector<Episode>& corpus, const TrainOptions& options,
                 const std::optional<fs::path>& metrics_csv) {
  FlowTrainer trainer(corpus, options);
  std::FILE* csv = nullptr;
  if (metrics_csv) {
    if (metrics_csv->has_parent_path()) fs::create_directories(metrics_csv->parent_path());
    csv = std::fopen(metrics_csv->c_str(), "w");
    if (csv == nullptr) throw RuntimeFailure("cannot write " + metrics_csv->string());
    std::fprintf(csv, "step,total_loss,loss_prop,loss_val,lr\n");
  }
  const int every = std::max(1, options.schedule.steps / 20);
  try {
    while (!trainer.done()) {
      const StepMetrics m = trainer.step();
      if (csv) write_metrics_row(csv, m);
      if (m.step % every == 0 || trainer.done()) {
        spdlog::info("step {:>6} loss {:.5f} (prop {:.5f}, val {:.5f}) lr {:.2e}", m.step, m.loss.total, m.loss.prop,
                     m.loss.val, m.lr);
      }
    }
  } catch (...) {
    if (csv) std::fclose(csv);
    throw;
  }
  if (csv) std::fclose(csv);
  return trainer.checkpoint();
}

Checkpoint train(const fs::path& corpus_dir, const TrainOptions& options, const std::optional<fs::path>& metrics_csv) {
  return train(read_dataset(corpus_dir), options, metrics_csv);
}

void save_checkpoint(const Checkpoint& ck, const fs::path& path) {
  const VelocityModel<float> shape_only(ck.config);
  if (ck.params.size() != shape_only.parameter_count()) {
    throw ValidationError("checkpoint parameters do not match its config");
  }
  detail::json header = {{"kind", ck.model_kind},
                         {"config", detail::to_json(ck.config)},
                         {"normalization", detail::to_json(ck.norm)},
                         {"loss_weights", {{"prop", ck.weights.prop}, {"val", ck.weights.val}}},
                         {"schedule", detail::to_json(ck.schedule)},
                         {"encoder_seed", ck.encoder_seed},
                         {"image_patch", ck.image_patch},
                         {"step", ck.step},
                         {"adam_step", ck.adam.step},
                         {"rng_state", ck.rng_state},
                         {"train_shapes", ck.train_shapes},
                         {"param_count", ck.params.size()}};
  std::vector<ContainerBlob> blobs;
  for (const auto& b : shape_only.layout().blobs()) {
    blobs.push_back({b.name, std::vector<float>(ck.params.begin() + static_cast<std::ptrdiff_t>(b.offset),
                                                ck.params.begin() + static_cast<std::ptrdiff_t>(b.offset + b.size()))});
  }
  blobs.push_back({"adam.m", ck.adam.m});
  blobs.push_back({"adam.v", ck.adam.v});
  write_container(path, std::string_view(kMagic, 4), kCheckpointVersion, header.dump(), blobs);
}

Checkpoint load_checkpoint(const fs::path& path) {
  const Container c = read_container(path, std::string_view(kMagic, 4), kCheckpointVersion);
  Checkpoint ck;
  try {
    const auto header = detail::json::parse(c.header_json);
    ck.model_kind = header.at("kind").get<std::string>();
    ck.config = detail::model_config_from(header.at("config"));
    ck.norm = detail::normalization_from(header.at("normalization"));
    ck.weights = {header.at("loss_weights").at("prop").get<double>(), header.at("loss_weights").at("val").get<double>()};
    ck.schedule = detail::schedule_from(header.at("schedule"));
    ck.encoder_seed = header.at("encoder_seed").get<std::uint64_t>();
    ck.image_patch = header.at("image_patch").get<int>();
    ck.step = header.at("step").get<long long>();
    ck.adam.step = header.at("adam_step").get<long long>();
    ck.rng_state = header.at("rng_state").get<std::string>();
    ck.train_shapes = header.at("train_shapes").get<std::vector<std::string>>();
  } catch (const detail::json::exception& e) {
    throw FormatError("malformed checkpoint header in " + path.string() + ": " + e.what());
  }
  ck.config.validate();
  const VelocityModel<float> shape_only(ck.config);
  ck.params.resize(shape_only.parameter_count());
  for (const auto& b : shape_only.layout().blobs()) {
    const auto it = std::find_if(c.blobs.begin(), c.blobs.end(), [&](const ContainerBlob& x) { return x.name == b.name; });
    if (it == c.blobs.end() || it->data.size() != b.size()) {
      throw GeometryError("checkpoint blob '" + b.name + "' missing or mis-sized in " + path.string());
    }
    std::copy(it->data.begin(), it->data.end(), ck.params.begin() + static_cast<std::ptrdiff_t>(b.offset));
  }
  for (const auto& blob : c.blobs) {
    if (blob.name == "adam.m") ck.adam.m = blob.data;
    if (blob.name == "adam.v") ck.adam.v = blob.data;
  }
  return ck;
}

Checkpoint load_checkpoint(const fs::path& path, const ModelConfig& expected) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.config.latent != expected.latent) {
    throw GeometryError("checkpoint latent geometry " + std::to_string(ck.config.latent.height) + "x" +
                        std::to_string(ck.config.latent.width) + "x" + std::to_string(ck.config.latent.channels) +
                        " does not match the requested " + std::to_string(expected.latent.height) + "x" +
                        std::to_string(expected.latent.width) + "x" + std::to_string(expected.latent.channels));
  }
  if (ck.config.proprio_dim != expected.proprio_dim) throw GeometryError("checkpoint proprio_dim mismatch");
  return ck;
}

}  // namespace viva
