#include "viva/binclass.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <spdlog/spdlog.h>

#include "json_io.hpp"
#include "viva/container.hpp"
#include "viva/dataset.hpp"
#include "viva/errors.hpp"
#include "viva/random.hpp"

namespace viva {
namespace fs = std::filesystem;

namespace {

constexpr char kMagic[] = "VBCL";

std::vector<std::string> corpus_shapes(const std::vector<Episode>& corpus) {
  std::vector<std::string> shapes;
  for (const auto& ep : corpus) shapes.push_back(ep.meta.object_shape);
  std::sort(shapes.begin(), shapes.end());
  shapes.erase(std::unique(shapes.begin(), shapes.end()), shapes.end());
  return shapes;
}

void write_features(const ImageEncoder& encoder, const NormalizationSpec& norm, const JointObservation& x,
                    std::span<float> out) {
  const std::size_t cells = encoder.geometry().size();
  for (int k = 0; k < kNumViews; ++k) encoder.encode_into(x.obs.views[k], out.subspan(k * cells, cells));
  const LatentFrame zq = encode_proprio(x.proprio, norm, encoder.geometry());
  for (std::size_t j = 0; j < norm.dim(); ++j) out[kNumViews * cells + j] = static_cast<float>(zq.data[j]);
}

int image_patch_for(const std::vector<Episode>& corpus, LatentGeometry latent) {
  const RgbImage& view = corpus.front().steps.front().obs.views[0];
  if (view.height % latent.height != 0 || view.width % latent.width != 0 ||
      view.height / latent.height != view.width / latent.width) {
    throw GeometryError("images cannot be patched onto the latent grid");
  }
  return view.height / latent.height;
}

}  // namespace

int bin_index(double g, const BinSpec& spec) {
  if (!(g >= spec.lo && g <= spec.hi)) {
    throw ValidationError("return " + std::to_string(g) + " outside [" + std::to_string(spec.lo) + ", " +
                          std::to_string(spec.hi) + "]");
  }
  int b = std::min(static_cast<int>(std::floor((g - spec.lo) * spec.n_bins / (spec.hi - spec.lo))), spec.n_bins - 1);
  // The division can land one bin off right at an edge; settle against edge() itself.
  while (b > 0 && g < spec.edge(b)) --b;
  while (b + 1 < spec.n_bins && g >= spec.edge(b + 1)) ++b;
  return b;
}

std::vector<double> bin_distribution(std::span<const double> logits) {
  if (logits.empty()) throw ValidationError("empty logits");
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += p[i] = std::exp(logits[i] - top);
  for (double& x : p) x /= sum;
  return p;
}

double expected_value(std::span<const double> logits, const BinSpec& spec) {
  if (static_cast<int>(logits.size()) != spec.n_bins) throw GeometryError("logit count does not match the bin spec");
  const auto p = bin_distribution(logits);
  double v = 0.0;
  for (int i = 0; i < spec.n_bins; ++i) v += p[i] * spec.center(i);
  return std::clamp(v, spec.lo, spec.hi);
}

void BaselineConfig::validate() const {
  if (hidden < 1) throw ValidationError("baseline hidden width must be >= 1");
  if (proprio_dim < 1) throw ValidationError("proprio_dim must be >= 1");
  if (n_bins < 2) throw ValidationError("need at least two bins");
  if (latent.size() == 0) throw ValidationError("empty latent geometry");
}

std::size_t count_baseline_params(const BaselineConfig& c) {
  const std::size_t in = c.input_dim();
  const std::size_t h = c.hidden;
  const std::size_t k = c.n_bins;
  return in * h + h + h * h + h + h * k + k;
}

int matched_hidden_width(std::size_t target, const BaselineConfig& base) {
  BaselineConfig c = base;
  int best = 1;
  double best_gap = std::numeric_limits<double>::infinity();
  for (int h = 1; h <= 4096; ++h) {
    c.hidden = h;
    const double gap = std::abs(static_cast<double>(count_baseline_params(c)) - static_cast<double>(target));
    if (gap < best_gap) {
      best_gap = gap;
      best = h;
    }
  }
  return best;
}

BinClassifier::BinClassifier(const BaselineConfig& config, std::uint64_t init_seed) : config_(config) {
  config_.validate();
  const int in = config_.input_dim();
  const int h = config_.hidden;
  w1_ = layout_.add("fc1.weight", in, h);
  b1_ = layout_.add("fc1.bias", 1, h);
  w2_ = layout_.add("fc2.weight", h, h);
  b2_ = layout_.add("fc2.bias", 1, h);
  w3_ = layout_.add("head.weight", h, config_.n_bins);
  b3_ = layout_.add("head.bias", 1, config_.n_bins);
  params_.assign(layout_.total(), 0.0f);
  Rng rng(init_seed);
  std::span<float> p(params_);
  nn::init_normal<float>(p, layout_[w1_], 1.0 / std::sqrt(static_cast<double>(in)), rng);
  nn::init_normal<float>(p, layout_[w2_], 1.0 / std::sqrt(static_cast<double>(h)), rng);
}

const nn::Matrix<float>& BinClassifier::forward(const nn::Matrix<float>& input, Activations& acts) const {
  if (input.cols() != config_.input_dim()) throw GeometryError("baseline input width mismatch");
  std::span<const float> p(params_);
  acts.input = input;
  nn::linear_forward<float>(input, nn::view(p, layout_[w1_]), nn::view(p, layout_[b1_]), acts.pre1);
  acts.h1 = acts.pre1.unaryExpr([](float x) { return nn::gelu(x); });
  nn::linear_forward<float>(acts.h1, nn::view(p, layout_[w2_]), nn::view(p, layout_[b2_]), acts.pre2);
  acts.h2 = acts.pre2.unaryExpr([](float x) { return nn::gelu(x); });
  nn::linear_forward<float>(acts.h2, nn::view(p, layout_[w3_]), nn::view(p, layout_[b3_]), acts.logits);
  return acts.logits;
}

void BinClassifier::backward(const Activations& acts, const nn::Matrix<float>& d_logits, std::span<float> grad) const {
  if (grad.size() != params_.size()) throw ValidationError("gradient buffer has the wrong size");
  std::span<const float> p(params_);
  nn::Matrix<float> d_h2;
  nn::linear_backward<float>(acts.h2, nn::view(p, layout_[w3_]), d_logits, nn::view(grad, layout_[w3_]),
                             nn::view(grad, layout_[b3_]), &d_h2);
  const nn::Matrix<float> d_pre2 =
      d_h2.binaryExpr(acts.pre2, [](float d, float x) { return d * nn::gelu_grad(x); });
  nn::Matrix<float> d_h1;
  nn::linear_backward<float>(acts.h1, nn::view(p, layout_[w2_]), d_pre2, nn::view(grad, layout_[w2_]),
                             nn::view(grad, layout_[b2_]), &d_h1);
  const nn::Matrix<float> d_pre1 =
      d_h1.binaryExpr(acts.pre1, [](float d, float x) { return d * nn::gelu_grad(x); });
  nn::linear_backward<float>(acts.input, nn::view(p, layout_[w1_]), d_pre1, nn::view(grad, layout_[w1_]),
                             nn::view(grad, layout_[b1_]), nullptr);
}

double cross_entropy(const nn::Matrix<float>& logits, std::span<const int> labels, nn::Matrix<float>* d_logits) {
  if (static_cast<std::size_t>(logits.rows()) != labels.size()) throw ValidationError("one label per row required");
  const auto rows = logits.rows();
  if (d_logits) d_logits->resize(rows, logits.cols());
  double loss = 0.0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    const float top = logits.row(r).maxCoeff();
    const auto shifted = (logits.row(r).array() - top).eval();
    const double sum = shifted.exp().cast<double>().sum();
    loss += std::log(sum) - static_cast<double>(shifted(labels[r]));
    if (d_logits) {
      d_logits->row(r) = (shifted.exp() / static_cast<float>(sum)).matrix();
      (*d_logits)(r, labels[r]) -= 1.0f;
    }
  }
  if (d_logits) *d_logits /= static_cast<float>(rows);
  loss /= static_cast<double>(rows);
  if (!std::isfinite(loss)) throw NumericError("non-finite cross-entropy");
  return loss;
}

void save_baseline(const BaselineCheckpoint& ck, const fs::path& path) {
  const BinClassifier shape_only(ck.config);
  if (ck.params.size() != shape_only.parameter_count()) throw ValidationError("baseline parameters do not match config");
  detail::json header = {
      {"kind", "binclass"},
      {"config",
       {{"hidden", ck.config.hidden},
        {"latent", {ck.config.latent.height, ck.config.latent.width, ck.config.latent.channels}},
        {"proprio_dim", ck.config.proprio_dim},
        {"n_bins", ck.config.n_bins}}},
      {"normalization", detail::to_json(ck.norm)},
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
  write_container(path, std::string_view(kMagic, 4), kBaselineVersion, header.dump(), blobs);
}

BaselineCheckpoint load_baseline(const fs::path& path) {
  const Container c = read_container(path, std::string_view(kMagic, 4), kBaselineVersion);
  BaselineCheckpoint ck;
  try {
    const auto header = detail::json::parse(c.header_json);
    const auto& cfg = header.at("config");
    ck.config.hidden = cfg.at("hidden").get<int>();
    ck.config.latent = {cfg.at("latent").at(0).get<int>(), cfg.at("latent").at(1).get<int>(),
                        cfg.at("latent").at(2).get<int>()};
    ck.config.proprio_dim = cfg.at("proprio_dim").get<int>();
    ck.config.n_bins = cfg.at("n_bins").get<int>();
    ck.norm = detail::normalization_from(header.at("normalization"));
    ck.schedule = detail::schedule_from(header.at("schedule"));
    ck.encoder_seed = header.at("encoder_seed").get<std::uint64_t>();
    ck.image_patch = header.at("image_patch").get<int>();
    ck.step = header.at("step").get<long long>();
    ck.adam.step = header.at("adam_step").get<long long>();
    ck.rng_state = header.at("rng_state").get<std::string>();
    ck.train_shapes = header.at("train_shapes").get<std::vector<std::string>>();
  } catch (const detail::json::exception& e) {
    throw FormatError("malformed baseline header in " + path.string() + ": " + e.what());
  }
  const BinClassifier shape_only(ck.config);
  ck.params.resize(shape_only.parameter_count());
  for (const auto& b : shape_only.layout().blobs()) {
    const auto it = std::find_if(c.blobs.begin(), c.blobs.end(), [&](const ContainerBlob& x) { return x.name == b.name; });
    if (it == c.blobs.end() || it->data.size() != b.size()) {
      throw GeometryError("baseline blob '" + b.name + "' missing or mis-sized in " + path.string());
    }
    std::copy(it->data.begin(), it->data.end(), ck.params.begin() + static_cast<std::ptrdiff_t>(b.offset));
  }
  for (const auto& blob : c.blobs) {
    if (blob.name == "adam.m") ck.adam.m = blob.data;
    if (blob.name == "adam.v") ck.adam.v = blob.data;
  }
  return ck;
}

BaselineCheckpoint train_baseline(const std::vector<Episode>& corpus, const BaselineOptions& options,
                                  const std::optional<fs::path>& metrics_csv) {
  if (corpus.empty()) throw ValidationError("empty training corpus");
  options.schedule.validate();
  BaselineCheckpoint ck;
  ck.config = options.config;
  ck.config.proprio_dim = static_cast<int>(corpus.front().steps.front().proprio.dim());
  if (options.match_params) ck.config.hidden = matched_hidden_width(*options.match_params, ck.config);
  ck.config.validate();
  ck.norm = fit_normalization(corpus);
  ck.schedule = options.schedule;
  ck.encoder_seed = options.encoder_seed;
  ck.image_patch = image_patch_for(corpus, ck.config.latent);
  ck.train_shapes = corpus_shapes(corpus);

  const ImageEncoder encoder(ck.encoder_seed, ck.config.latent, ck.image_patch);
  BinClassifier net(ck.config, mix_seed(options.schedule.seed, 1));
  if (options.match_params) {
    const double ratio = static_cast<double>(net.parameter_count()) / static_cast<double>(*options.match_params);
    spdlog::info("binclass: hidden {} gives {} parameters ({:.3f}x the target)", ck.config.hidden,
                 net.parameter_count(), ratio);
  }

  const ExampleCache cache(corpus, encoder, ck.norm, 1);
  const BinSpec bins{ck.config.n_bins};
  const int in = ck.config.input_dim();
  const std::size_t cells = ck.config.latent.size();
  nn::Matrix<float> features(static_cast<Eigen::Index>(cache.size()), in);
  std::vector<int> labels(cache.size());
  for (std::size_t i = 0; i < cache.size(); ++i) {
    const auto views = cache.views(i);
    const auto q = cache.proprio(i);
    for (std::size_t j = 0; j < views.size(); ++j) features(i, j) = views[j];
    for (std::size_t j = 0; j < q.size(); ++j) features(i, kNumViews * cells + j) = q[j];
    labels[i] = bin_index(cache.return_target(i), bins);
  }

  std::FILE* csv = nullptr;
  if (metrics_csv) {
    if (metrics_csv->has_parent_path()) fs::create_directories(metrics_csv->parent_path());
    csv = std::fopen(metrics_csv->c_str(), "w");
    if (csv == nullptr) throw RuntimeFailure("cannot write " + metrics_csv->string());
    std::fprintf(csv, "step,total_loss,loss_prop,loss_val,lr\n");
  }

  Rng rng(mix_seed(options.schedule.seed, 2));
  std::uniform_int_distribution<std::size_t> pick(0, cache.size() - 1);
  const int batch = options.schedule.batch;
  nn::Matrix<float> x(batch, in);
  std::vector<int> y(batch);
  nn::AlignedVector<float> grad(net.parameter_count());
  BinClassifier::Activations acts;
  nn::Matrix<float> d_logits;
  const int every = std::max(1, options.schedule.steps / 20);
  try {
    for (long long step = 0; step < options.schedule.steps; ++step) {
      for (int b = 0; b < batch; ++b) {
        const std::size_t idx = pick(rng);
        x.row(b) = features.row(static_cast<Eigen::Index>(idx));
        y[b] = labels[idx];
      }
      std::fill(grad.begin(), grad.end(), 0.0f);
      const auto& logits = net.forward(x, acts);
      const double loss = cross_entropy(logits, y, &d_logits);
      net.backward(acts, d_logits, grad);
      const double lr = scheduled_lr(options.schedule, step);
      adam_update(net.parameters(), grad, ck.adam, lr, options.schedule.grad_clip);
      if (csv) std::fprintf(csv, "%lld,%.9g,%.9g,%.9g,%.9g\n", step, loss, 0.0, loss, lr);
      if (step % every == 0 || step + 1 == options.schedule.steps) {
        spdlog::info("binclass step {:>6} ce {:.5f} lr {:.2e}", step, loss, lr);
      }
    }
  } catch (...) {
    if (csv) std::fclose(csv);
    throw;
  }
  if (csv) std::fclose(csv);

  ck.step = options.schedule.steps;
  std::ostringstream state;
  state << rng;
  ck.rng_state = state.str();
  ck.params.assign(net.parameters().begin(), net.parameters().end());
  return ck;
}

BaselineCheckpoint train_baseline(const fs::path& corpus_dir, const BaselineOptions& options,
                                  const std::optional<fs::path>& metrics_csv) {
  return train_baseline(read_dataset(corpus_dir), options, metrics_csv);
}

BaselineModel::BaselineModel(const BaselineCheckpoint& ck)
    : norm_(ck.norm),
      encoder_(ck.encoder_seed, ck.config.latent, ck.image_patch),
      net_(ck.config),
      train_shapes_(ck.train_shapes) {
  if (ck.params.size() != net_.parameter_count()) throw GeometryError("baseline parameter count mismatch");
  std::copy(ck.params.begin(), ck.params.end(), net_.parameters().begin());
}

BaselineModel BaselineModel::load(const fs::path& path) { return BaselineModel(load_baseline(path)); }

nn::Matrix<float> BaselineModel::features(const std::vector<const JointObservation*>& xs) const {
  const int in = net_.config().input_dim();
  std::vector<float> row(in);
  nn::Matrix<float> out(static_cast<Eigen::Index>(xs.size()), in);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i]->proprio.dim() != norm_.dim()) throw GeometryError("proprioception dim does not match the baseline");
    write_features(encoder_, norm_, *xs[i], row);
    for (int j = 0; j < in; ++j) out(static_cast<Eigen::Index>(i), j) = row[j];
  }
  return out;
}

std::vector<ValueEstimate> BaselineModel::estimate_batch(const std::vector<const JointObservation*>& xs,
                                                         const std::vector<std::uint64_t>&) const {
  std::vector<ValueEstimate> out;
  if (xs.empty()) return out;
  BinClassifier::Activations acts;
  const auto& logits = net_.forward(features(xs), acts);
  const BinSpec bins{net_.config().n_bins};
  std::vector<double> row(bins.n_bins);
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    for (int j = 0; j < bins.n_bins; ++j) row[j] = logits(r, j);
    const double v = expected_value(row, bins);
    out.push_back(ValueEstimate::from_raw(v, v - 1.0));
  }
  return out;
}

ValueEstimate BaselineModel::estimate(const JointObservation& x, std::uint64_t seed) const {
  return estimate_batch({&x}, {seed}).front();
}

std::vector<double> BaselineModel::distribution(const JointObservation& x) const {
  BinClassifier::Activations acts;
  const auto& logits = net_.forward(features({&x}), acts);
  std::vector<double> row(logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) row[j] = logits(0, j);
  return bin_distribution(row);
}

ValueEstimate baseline_value(const BaselineModel& model, const JointObservation& x_t) { return model.estimate(x_t); }

}  // namespace viva
