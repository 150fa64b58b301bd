// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fcntl.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "cli.hpp"
#include "viva/binclass.hpp"
#include "viva/evaluation.hpp"
#include "viva/latent_codec.hpp"
#include "viva/random.hpp"
#include "viva/returns.hpp"
#include "viva/sampler.hpp"
#include "viva/sim.hpp"
#include "viva/trainer.hpp"

namespace fs = std::filesystem;
using namespace viva;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// Experiment configuration shared by criteria 5-9.

ModelConfig experiment_model(int horizon) {
  ModelConfig c;
  c.layers = 2;
  c.width = 64;
  c.heads = 4;
  c.mlp_ratio = 4;
  c.token_patch = 4;
  c.horizon = horizon;
  return c;
}

TrainSchedule experiment_schedule(int steps, std::uint64_t seed) {
  TrainSchedule s;
  s.steps = steps;
  s.batch = 64;
  s.lr = 3e-3;
  s.warmup = 100;
  s.seed = seed;
  return s;
}

constexpr int kHeldOutSteps = 6000;
constexpr int kSeeds = 3;
constexpr int kEvalStride = 2;

std::uint64_t train_corpus_seed(int seed) { return 7 + 1000 * static_cast<std::uint64_t>(seed); }

class Lab {
 public:
  Lab(fs::path workdir, bool reuse) : dir_(std::move(workdir)), reuse_(reuse) { fs::create_directories(dir_); }

  const std::vector<Episode>& train_corpus(int seed) {
    auto it = corpora_.find(seed);
    if (it == corpora_.end()) it = corpora_.emplace(seed, sim::generate_corpus(100, 100, train_corpus_seed(seed))).first;
    return it->second;
  }

  // Full ViVa, the no-proprioception ablation and the horizon variants.
  VivaModel viva(int seed, int horizon, bool noprop) {
    const std::string name = fmt("viva_s%d_k%d%s.ckpt", seed, horizon, noprop ? "_noprop" : "");
    const fs::path path = dir_ / name;
    if (!(reuse_ && fs::exists(path))) {
      TrainOptions o;
      o.model = experiment_model(horizon);
      o.schedule = experiment_schedule(kHeldOutSteps, static_cast<std::uint64_t>(seed));
      if (noprop) o.weights.prop = 0.0;
      const auto t0 = std::chrono::steady_clock::now();
      spdlog::info("training {}", name);
      save_checkpoint(train(train_corpus(seed), o), path);
      train_seconds_[name] = seconds_since(t0);
    }
    return VivaModel(load_checkpoint(path));
  }

  BaselineModel binclass(int seed) {
    const fs::path path = dir_ / fmt("binclass_s%d.bin", seed);
    if (!(reuse_ && fs::exists(path))) {
      BaselineOptions o;
      o.schedule = experiment_schedule(kHeldOutSteps, static_cast<std::uint64_t>(seed));
      o.match_params = count_params(experiment_model(50));
      spdlog::info("training binclass seed {}", seed);
      save_baseline(train_baseline(train_corpus(seed), o), path);
    }
    return BaselineModel(load_baseline(path));
  }

  double train_seconds(const std::string& name) const {
    auto it = train_seconds_.find(name);
    return it == train_seconds_.end() ? 0.0 : it->second;
  }

  const fs::path& dir() const { return dir_; }

 private:
  fs::path dir_;
  bool reuse_;
  std::map<int, std::vector<Episode>> corpora_;
  std::map<std::string, double> train_seconds_;
};

// ---------------------------------------------------------------------------

Outcome criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  std::uniform_int_distribution<int> horizon(1, 300);
  double worst = 0.0;
  bool margin_exact = true;
  for (int i = 0; i < 1000; ++i) {
    const int T = horizon(rng);
    const bool success = rng() % 2 == 0;
    const int t = std::uniform_int_distribution<int>(0, T)(rng);
    const RewardSchedule sched{T, success};
    double brute = 0.0;
    for (int k = t; k <= T; ++k) brute += reward(sched, k);
    worst = std::max(worst, std::abs(brute - return_to_go(sched, t)));
    for (int s = 0; s <= T; ++s) margin_exact &= margin(s, T) == 1.0;
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-9 && margin_exact && secs < 1.0,
          fmt("max |G - sum r| = %.2e, margin exact: %s, %.3fs", worst, margin_exact ? "yes" : "no", secs)};
}

Outcome criterion2() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(202);
  const LatentGeometry g;
  std::uniform_int_distribution<int> dim(1, 32);
  double worst_q = 0.0;
  for (int n = 0; n < 500; ++n) {
    const int d = dim(rng);
    NormalizationSpec spec;
    Proprioception q;
    for (int i = 0; i < d; ++i) {
      const double lo = uniform(rng, -3.0, 0.0);
      spec.proprio_min.push_back(lo);
      spec.proprio_max.push_back(lo + uniform(rng, 0.1, 4.0));
      q.values.push_back(static_cast<float>(uniform(rng, lo, spec.proprio_max.back())));
    }
    const auto back = decode_proprio(encode_proprio(q, spec, g), d, spec);
    for (int i = 0; i < d; ++i) worst_q = std::max(worst_q, std::abs(double(back.values[i]) - q.values[i]));
  }
  double worst_v = 0.0;
  for (int n = 0; n < 500; ++n) {
    const double v = uniform(rng, 0.0, 2.0);
    worst_v = std::max(worst_v, std::abs(decode_value(encode_value(v, g)) - v));
  }
  const double secs = seconds_since(t0);
  return {worst_q < 1e-6 && worst_v < 1e-6 && secs < 5.0,
          fmt("proprio max err %.2e, value max err %.2e, %.3fs", worst_q, worst_v, secs)};
}

Outcome criterion3() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(303);
  const LatentGeometry g;
  auto random_frame = [&] {
    LatentFrame f(g);
    fill_standard_normal<double>(rng, f.data);
    return f;
  };
  std::array<LatentFrame, 2> z0{random_frame(), random_frame()};
  std::array<LatentFrame, 2> z1{random_frame(), random_frame()};
  double endpoint = 0.0;
  for (int k = 0; k < 2; ++k) {
    const auto a = interpolate(z0[k], z1[k], 0.0);
    const auto b = interpolate(z0[k], z1[k], 1.0);
    for (std::size_t i = 0; i < a.data.size(); ++i)
      endpoint = std::max({endpoint, std::abs(double(a.data[i]) - z0[k].data[i]),
                           std::abs(double(b.data[i]) - z1[k].data[i])});
  }
  const VelocityField oracle = [&](const std::array<LatentFrame, 2>&, double) {
    std::array<LatentFrame, 2> v{LatentFrame(g), LatentFrame(g)};
    for (int k = 0; k < 2; ++k)
      for (std::size_t i = 0; i < v[k].data.size(); ++i) v[k].data[i] = z1[k].data[i] - z0[k].data[i];
    return v;
  };
  double worst = 0.0;
  for (int n : {1, 8}) {
    const auto out = integrate(oracle, z1, n);
    for (int k = 0; k < 2; ++k)
      for (std::size_t i = 0; i < out[k].data.size(); ++i)
        worst = std::max(worst, std::abs(double(out[k].data[i]) - z0[k].data[i]));
  }
  const double secs = seconds_since(t0);
  return {endpoint == 0.0 && worst < 1e-6 && secs < 1.0,
          fmt("endpoint err %.1e, oracle 1/8-step err %.2e, %.3fs", endpoint, worst, secs)};
}

Outcome criterion4() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto corpus = sim::generate_corpus(1, 1, 3);
  ModelConfig c;
  c.width = 16;
  c.layers = 1;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.token_patch = 4;
  VelocityModel<double> m(c, 5);
  // Random weights everywhere, so zero-initialised modulation paths carry gradient.
  Rng perturb(9);
  std::normal_distribution<double> nd(0.0, 0.1);
  for (auto& p : m.parameters()) p += nd(perturb);
  const auto spec = fit_normalization(corpus);
  const ImageEncoder encoder(0x1DEA, c.latent, 4);
  const auto tuple = sample_tuple(corpus[1], 40, 50);
  const LossWeights w;
  std::vector<double> grad(m.parameter_count(), 0.0);
  Rng rng(4);
  flow_loss<double>(m, encoder, spec, tuple, w, rng, grad);
  auto loss_at = [&] {
    Rng r(4);
    return flow_loss<double>(m, encoder, spec, tuple, w, r, {}).total;
  };
  std::vector<std::size_t> idx(m.parameter_count());
  std::iota(idx.begin(), idx.end(), 0);
  Rng pick(11);
  std::shuffle(idx.begin(), idx.end(), pick);
  double worst = 0.0;
  for (int k = 0; k < 200; ++k) {
    const std::size_t i = idx[k];
    const double orig = m.parameters()[i];
    const double h = 1e-6;
    m.parameters()[i] = orig + h;
    const double lp = loss_at();
    m.parameters()[i] = orig - h;
    const double lm = loss_at();
    m.parameters()[i] = orig;
    const double fd = (lp - lm) / (2 * h);
    worst = std::max(worst, std::abs(fd - grad[i]) / std::max(1e-8, std::abs(fd) + std::abs(grad[i])));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 120.0,
          fmt("%zu params, max rel err %.2e over 200, %.1fs", m.parameter_count(), worst, secs)};
}

Outcome criterion5(const fs::path& dir) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto corpus = sim::generate_corpus(4, 4, train_corpus_seed(1));
  TrainOptions o;
  o.model = experiment_model(50);
  o.schedule = experiment_schedule(2000, 1);
  const fs::path csv = dir / "overfit_loss.csv";
  const Checkpoint ck = train(corpus, o, csv);
  double final_loss = 0.0;
  {
    std::ifstream in(csv);
    std::string line, last;
    while (std::getline(in, line))
      if (!line.empty()) last = line;
    final_loss = std::stod(last.substr(last.find(',') + 1));
  }
  const VivaModel model(ck);
  double mse_v = 0.0;
  double mse_q = 0.0;
  int n = 0;
  for (const auto& ep : corpus) {
    for (int t = 0; t <= ep.horizon(); ++t) {
      const auto tuple = sample_tuple(ep, t, o.model.horizon);
      const auto p = infer(model, tuple.current, SamplerConfig{1, static_cast<std::uint64_t>(t)});
      mse_v += std::pow(p.value.v_hat - tuple.return_target, 2);
      double s = 0.0;
      for (std::size_t i = 0; i < tuple.future_proprio.dim(); ++i)
        s += std::pow(double(p.future.values[i]) - tuple.future_proprio.values[i], 2);
      mse_q += s / tuple.future_proprio.dim();
      ++n;
    }
  }
  mse_v /= n;
  mse_q /= n;
  const double secs = seconds_since(t0);
  return {mse_v < 0.01 && mse_q < 0.05 && secs < 600.0,
          fmt("value MSE %.4f, future-proprio MSE %.4f over %d frames (final flow loss %.3f), %.0fs", mse_v, mse_q,
              n, final_loss, secs)};
}

Outcome criterion6(Lab& lab) {
  const auto t0 = std::chrono::steady_clock::now();
  const VivaModel model = lab.viva(0, 50, false);
  const auto held_out = sim::generate_corpus(25, 25, 99);
  const ModelMetrics m = evaluate(model, held_out, kEvalStride, 0);
  const double pos = m.failure_sensitivity_positive_fraction.value_or(0.0);
  const double secs = seconds_since(t0);
  std::string kinds;
  for (const auto& [k, v] : m.failure_sensitivity_by_kind) kinds += fmt(" %s=%.3f", k.c_str(), v);
  return {m.spearman_mean >= 0.8 && m.auc_mid_episode >= 0.9 && pos >= 0.8 && secs <= 3600.0,
          fmt("spearman %.3f, AUC %.3f, sensitivity>0 on %.0f%% (by kind:%s), %.0fs", m.spearman_mean,
              m.auc_mid_episode, 100 * pos, kinds.c_str(), secs)};
}

double stall_sensitivity(const VivaModel& model, int seed) {
  sim::CorpusOptions o;
  o.failure_kinds = {FailureKind::kStall};
  const auto stalls = sim::generate_corpus(0, 25, 500 + static_cast<std::uint64_t>(seed), o);
  return evaluate(model, stalls, kEvalStride, 0).failure_sensitivity.value_or(0.0);
}

Outcome criterion7(Lab& lab) {
  double full = 0.0;
  double noprop = 0.0;
  std::string per_seed;
  for (int s = 0; s < kSeeds; ++s) {
    const double a = stall_sensitivity(lab.viva(s, 50, false), s);
    const double b = stall_sensitivity(lab.viva(s, 50, true), s);
    full += a / kSeeds;
    noprop += b / kSeeds;
    per_seed += fmt(" [%.3f vs %.3f]", a, b);
  }
  return {noprop < full, fmt("stall sensitivity full %.4f, noprop %.4f; per seed%s", full, noprop, per_seed.c_str())};
}

Outcome criterion8(Lab& lab) {
  int wins = 0;
  std::string per_seed;
  for (int s = 0; s < kSeeds; ++s) {
    const auto held_out = sim::generate_corpus(25, 0, 700 + static_cast<std::uint64_t>(s));
    std::map<int, double> var;
    for (int k : {25, 50, 75}) var[k] = evaluate(lab.viva(s, k, false), held_out, kEvalStride, 0).trace_variance;
    const bool win = var[50] <= var[25] && var[50] <= var[75];
    wins += win;
    per_seed += fmt(" [K25 %.5f K50 %.5f K75 %.5f]", var[25], var[50], var[75]);
  }
  return {wins >= 2, fmt("K=50 lowest in %d/3 seeds;%s", wins, per_seed.c_str())};
}

Outcome criterion9(Lab& lab) {
  double gap_sum = 0.0;
  double worst_gap = 1e9;
  std::string per_seed;
  sim::CorpusOptions o;
  o.variant = sim::held_out_variant();
  for (int s = 0; s < kSeeds; ++s) {
    const auto ood = sim::generate_corpus(25, 25, 900 + static_cast<std::uint64_t>(s), o);
    const double v = evaluate(lab.viva(s, 50, false), ood, kEvalStride, 0).spearman_mean;
    const double b = evaluate(lab.binclass(s), ood, kEvalStride, 0).spearman_mean;
    gap_sum += v - b;
    worst_gap = std::min(worst_gap, v - b);
    per_seed += fmt(" [viva %.3f binclass %.3f]", v, b);
  }
  // Every seed must clear the margin, not just the average.
  return {worst_gap >= 0.05,
          fmt("min gap %.3f, mean gap %.3f;%s", worst_gap, gap_sum / kSeeds, per_seed.c_str())};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Runs gen-data, train and eval through the CLI twice with the same seeds.
Outcome criterion10(const fs::path& dir) {
  auto cli = [](std::vector<std::string> args) {
    args.insert(args.begin(), "viva");
    // The commands report to stdout; keep this runner's output to one line per criterion.
    std::fflush(stdout);
    const int saved = ::dup(STDOUT_FILENO);
    const int null = ::open("/dev/null", O_WRONLY);
    ::dup2(null, STDOUT_FILENO);
    const int rc = cli::run(args);
    std::fflush(stdout);
    ::dup2(saved, STDOUT_FILENO);
    ::close(null);
    ::close(saved);
    return rc;
  };
  std::vector<std::string> files;
  for (int rep = 0; rep < 2; ++rep) {
    const fs::path root = dir / fmt("determinism_%d", rep);
    fs::remove_all(root);
    const fs::path data = root / "data";
    if (cli({"gen-data", "--n-success", "4", "--n-failure", "4", "--seed", "11", "--out", data.string()}) != 0)
      return {false, "gen-data failed"};
    if (cli({"train", "--data", data.string(), "--steps", "200", "--batch", "16", "--width", "32", "--layers", "1",
             "--heads", "2", "--token-patch", "4", "--lr", "3e-3", "--seed", "5", "--out", (root / "runs").string(),
             "--run-name", "train"}) != 0)
      return {false, "train failed"};
    if (cli({"eval", "--checkpoint", (root / "runs" / "train" / "model.ckpt").string(), "--data", data.string(),
             "--stride", "3", "--seed", "2", "--max-plots", "0", "--out", (root / "runs").string(), "--run-name",
             "eval"}) != 0)
      return {false, "eval failed"};
    files.push_back(slurp(root / "runs" / "train" / "metrics.csv") + "\n--\n" +
                    slurp(root / "runs" / "eval" / "metrics.json"));
  }
  const bool same = !files[0].empty() && files[0] == files[1];
  return {same, fmt("training CSV and metrics.json %s across two runs (%zu bytes)",
                    same ? "bit-identical" : "DIFFER", files[0].size())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ViVa acceptance criteria"};
  fs::path workdir = fs::temp_directory_path() / "viva_acceptance";
  std::vector<int> only;
  bool reuse = false;
  app.add_option("--workdir", workdir, "scratch directory for corpora, checkpoints and runs");
  app.add_option("--only", only, "run only these criteria (1-10)")->delimiter(',')->check(CLI::Range(1, 10));
  app.add_flag("--reuse", reuse, "load experiment checkpoints left in workdir by an earlier run");
  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::warn);
  if (std::getenv("VIVA_ACCEPTANCE_VERBOSE") != nullptr) spdlog::set_level(spdlog::level::info);

  Lab lab(workdir, reuse);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"return oracle", criterion1},
      {"codec round trips", criterion2},
      {"flow path and oracle sampler", criterion3},
      {"gradient check", criterion4},
      {"overfit gate", [&] { return criterion5(workdir); }},
      {"held-out quality", [&] { return criterion6(lab); }},
      {"proprioception ablation", [&] { return criterion7(lab); }},
      {"horizon ablation", [&] { return criterion8(lab); }},
      {"OOD gate", [&] { return criterion9(lab); }},
      {"determinism", [&] { return criterion10(workdir); }},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && selected.count(id) == 0) continue;
    Outcome out;
    try {
      out = criteria[i].second();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    failures += !out.pass;
    std::printf("%s %2d %-30s %s\n", out.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), out.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
