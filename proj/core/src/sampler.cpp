#include "viva/sampler.hpp"

#include <algorithm>
#include <cstdio>

#include <spdlog/spdlog.h>

#include "viva/errors.hpp"
#include "viva/random.hpp"
#include "viva/returns.hpp"
#include "viva/sequence.hpp"

namespace viva {
namespace fs = std::filesystem;

namespace {

constexpr double kSanityLow = -0.5;
constexpr double kSanityHigh = 2.5;
constexpr std::size_t kMaxBatch = 64;

}  // namespace

void SamplerConfig::validate() const {
  if (n_steps < 1) throw ValidationError("n_steps must be >= 1");
  if (n_seeds < 1) throw ValidationError("n_seeds must be >= 1");
}

double progress_from_value(double v_hat) { return 1.0 - std::min(v_hat, 1.0); }

ValueEstimate ValueEstimate::from_raw(double raw_value, double frame_mean) {
  ValueEstimate e;
  e.raw_frame_mean = frame_mean;
  e.v_hat = std::clamp(raw_value, NormalizationSpec::kValueMin, NormalizationSpec::kValueMax);
  e.progress = progress_from_value(e.v_hat);
  return e;
}

std::array<LatentFrame, 2> integrate(const VelocityField& velocity, std::array<LatentFrame, 2> z, int n_steps) {
  if (n_steps < 1) throw ValidationError("n_steps must be >= 1");
  const double dt = 1.0 / n_steps;
  for (int i = 0; i < n_steps; ++i) {
    const double tau = 1.0 - i * dt;
    const auto v = velocity(z, tau);
    for (int k = 0; k < 2; ++k) {
      if (v[k].geometry != z[k].geometry) throw GeometryError("velocity field geometry mismatch");
      for (std::size_t j = 0; j < z[k].data.size(); ++j) z[k].data[j] -= dt * v[k].data[j];
    }
  }
  return z;
}

std::vector<ValueEstimate> ValueEstimator::estimate_batch(const std::vector<const JointObservation*>& xs,
                                                          const std::vector<std::uint64_t>& seeds) const {
  std::vector<ValueEstimate> out;
  out.reserve(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out.push_back(estimate(*xs[i], seeds[i]));
  return out;
}

VivaModel::VivaModel(const Checkpoint& ck, SamplerConfig sampler)
    : kind_(ck.model_kind),
      norm_(ck.norm),
      encoder_(ck.encoder_seed, ck.config.latent, ck.image_patch),
      model_(ck.config),
      sampler_(sampler),
      train_shapes_(ck.train_shapes) {
  sampler_.validate();
  norm_.validate();
  if (ck.params.size() != model_.parameter_count()) throw GeometryError("checkpoint parameter count mismatch");
  std::copy(ck.params.begin(), ck.params.end(), model_.parameters().begin());
}

VivaModel VivaModel::load(const fs::path& path, SamplerConfig sampler) {
  return VivaModel(load_checkpoint(path), sampler);
}

std::vector<Prediction> VivaModel::infer_batch(const std::vector<const JointObservation*>& xs,
                                               const std::vector<std::uint64_t>& seeds) const {
  if (xs.size() != seeds.size()) throw ValidationError("one seed per observation required");
  const ModelConfig& config = model_.config();
  const TokenLayout layout(config.latent, config.token_patch);
  const int tpf = layout.tokens();
  const int n = config.sequence_tokens();
  const std::size_t d_q = norm_.dim();

  std::vector<Prediction> result(xs.size());
  std::vector<double> value_sum(xs.size(), 0.0);
  std::vector<double> mean_sum(xs.size(), 0.0);
  std::vector<std::vector<double>> future_sum(xs.size(), std::vector<double>(d_q, 0.0));

  for (std::size_t first = 0; first < xs.size(); first += kMaxBatch) {
    const std::size_t count = std::min(kMaxBatch, xs.size() - first);
    for (int s = 0; s < sampler_.n_seeds; ++s) {
      nn::Matrix<float> tokens(static_cast<Eigen::Index>(count) * n, config.token_dim());
      std::vector<std::array<LatentFrame, 2>> z(count);
      for (std::size_t i = 0; i < count; ++i) {
        const std::uint64_t noise_seed = sampler_.n_seeds == 1 ? seeds[first + i] : mix_seed(seeds[first + i], s);
        const LatentSequence seq =
            assemble_sequence(*xs[first + i], std::nullopt, std::nullopt, encoder_, norm_, config.latent, noise_seed);
        for (int f = 0; f < kSequenceFrames; ++f) {
          layout.gather<float, double>(seq.frames[f].data, tokens, static_cast<int>(i) * n + f * tpf);
        }
        z[i] = {seq.frames[kFutureProprioFrame], seq.frames[kValueFrame]};
      }
      const double dt = 1.0 / sampler_.n_steps;
      LatentFrame v(config.latent);
      for (int step = 0; step < sampler_.n_steps; ++step) {
        const float tau = static_cast<float>(1.0 - step * dt);
        const std::vector<float> taus(count, tau);
        const auto times = sequence_times<float>(taus);
        typename VelocityModel<float>::Activations acts;
        const auto& out = model_.forward(tokens, times, acts);
        if (!out.allFinite()) throw NumericError("non-finite velocity prediction at tau=" + std::to_string(tau));
        for (std::size_t i = 0; i < count; ++i) {
          for (int k = 0; k < 2; ++k) {
            const int frame = k == 0 ? kFutureProprioFrame : kValueFrame;
            layout.scatter<float>(out, static_cast<int>(i) * n + frame * tpf, v.data);
            for (std::size_t j = 0; j < v.data.size(); ++j) z[i][k].data[j] -= dt * v.data[j];
            layout.gather<float, double>(z[i][k].data, tokens, static_cast<int>(i) * n + frame * tpf);
          }
        }
      }
      for (std::size_t i = 0; i < count; ++i) {
        for (int k = 0; k < 2; ++k) {
          for (double x : z[i][k].data) {
            if (!std::isfinite(x)) throw NumericError("non-finite latent after integration");
          }
        }
        const double frame_mean = z[i][1].mean();
        value_sum[first + i] += frame_mean + 1.0;
        mean_sum[first + i] += frame_mean;
        const Proprioception q = decode_proprio(z[i][0], d_q, norm_);
        for (std::size_t j = 0; j < d_q; ++j) future_sum[first + i][j] += q.values[j];
      }
    }
  }

  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double raw = value_sum[i] / sampler_.n_seeds;
    if (raw < kSanityLow || raw > kSanityHigh) {
      spdlog::warn("{}: unclamped value {:.4f} outside the sanity band [{}, {}]", kind_, raw, kSanityLow, kSanityHigh);
    }
    result[i].value = ValueEstimate::from_raw(raw, mean_sum[i] / sampler_.n_seeds);
    result[i].future.values.resize(d_q);
    for (std::size_t j = 0; j < d_q; ++j) {
      result[i].future.values[j] = static_cast<float>(future_sum[i][j] / sampler_.n_seeds);
    }
  }
  return result;
}

ValueEstimate VivaModel::estimate(const JointObservation& x, std::uint64_t seed) const {
  return infer_batch({&x}, {seed}).front().value;
}

std::vector<ValueEstimate> VivaModel::estimate_batch(const std::vector<const JointObservation*>& xs,
                                                     const std::vector<std::uint64_t>& seeds) const {
  const auto predictions = infer_batch(xs, seeds);
  std::vector<ValueEstimate> out;
  out.reserve(predictions.size());
  for (const auto& p : predictions) out.push_back(p.value);
  return out;
}

Prediction infer(const VivaModel& model, const JointObservation& x_t, const SamplerConfig& config) {
  config.validate();
  if (config.n_steps == model.sampler().n_steps && config.n_seeds == model.sampler().n_seeds) {
    return model.infer_batch({&x_t}, {config.seed}).front();
  }
  // Different integration settings: run through a copy configured for them.
  Checkpoint ck;
  ck.model_kind = model.name();
  ck.config = model.config();
  ck.norm = model.normalization();
  ck.encoder_seed = model.encoder().seed();
  ck.image_patch = model.encoder().patch();
  ck.params.assign(model.velocity_model().parameters().begin(), model.velocity_model().parameters().end());
  ck.train_shapes = model.train_shapes();
  return VivaModel(ck, config).infer_batch({&x_t}, {config.seed}).front();
}

std::vector<TracePoint> value_trace(const ValueEstimator& estimator, const Episode& episode, int stride,
                                    std::uint64_t seed) {
  if (stride < 1) throw ValidationError("stride must be >= 1");
  const int horizon = episode.horizon();
  std::vector<int> ts;
  for (int t = 0; t <= horizon; t += stride) ts.push_back(t);
  if (ts.back() != horizon) ts.push_back(horizon);

  std::vector<const JointObservation*> xs;
  std::vector<std::uint64_t> seeds;
  for (int t : ts) {
    xs.push_back(&episode.steps[t]);
    seeds.push_back(mix_seed(seed, static_cast<std::uint64_t>(t)));
  }
  const auto estimates = estimator.estimate_batch(xs, seeds);
  const RewardSchedule schedule{horizon, episode.success};
  std::vector<TracePoint> trace;
  trace.reserve(ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) {
    TracePoint p;
    p.t = ts[i];
    p.v_hat = estimates[i].v_hat;
    p.progress = estimates[i].progress;
    p.g_true = return_to_go(schedule, ts[i]);
    trace.push_back(p);
  }
  return trace;
}

void write_trace_csv(const fs::path& path, const std::vector<TracePoint>& trace) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (f == nullptr) throw RuntimeFailure("cannot write " + path.string());
  std::fprintf(f, "t,v_hat,progress,g_true\n");
  for (const auto& p : trace) {
    if (p.g_true) {
      std::fprintf(f, "%d,%.9g,%.9g,%.9g\n", p.t, p.v_hat, p.progress, *p.g_true);
    } else {
      std::fprintf(f, "%d,%.9g,%.9g,\n", p.t, p.v_hat, p.progress);
    }
  }
  std::fclose(f);
}

double advantage(const std::function<double(int)>& value_at, int horizon, int t, int horizon_k) {
  if (t < 0 || t > horizon) {
    throw ValidationError("t=" + std::to_string(t) + " outside [0, " + std::to_string(horizon) + "]");
  }
  if (horizon_k < 1) throw ValidationError("K must be >= 1");
  return value_at(t) - value_at(future_index(t, horizon_k, horizon));
}

double advantage(const ValueEstimator& estimator, const Episode& episode, int t, int horizon_k, std::uint64_t seed) {
  return advantage(
      [&](int s) { return estimator.estimate(episode.steps.at(s), mix_seed(seed, static_cast<std::uint64_t>(s))).v_hat; },
      episode.horizon(), t, horizon_k);
}

}  // namespace viva
