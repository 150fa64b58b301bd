#include <benchmark/benchmark.h>

#include "viva/sampler.hpp"
#include "viva/sequence.hpp"
#include "viva/sim.hpp"
#include "viva/trainer.hpp"

namespace {

using namespace viva;

ModelConfig bench_config(int width, int layers) {
  ModelConfig c;
  c.width = width;
  c.layers = layers;
  c.heads = 4;
  c.token_patch = 4;
  return c;
}

const std::vector<Episode>& corpus() {
  static const auto episodes = sim::generate_corpus(2, 2, 1);
  return episodes;
}

FlowBatch<float> random_batch(const ModelConfig& c, int batch_size) {
  Rng rng(3);
  FlowBatch<float> b;
  b.size = batch_size;
  b.tokens.resize(batch_size * c.sequence_tokens(), c.token_dim());
  b.targets.resize(2 * batch_size * c.tokens_per_frame(), c.token_dim());
  fill_standard_normal<float>(rng, std::span<float>(b.tokens.data(), b.tokens.size()));
  fill_standard_normal<float>(rng, std::span<float>(b.targets.data(), b.targets.size()));
  std::vector<float> taus(batch_size, 0.5f);
  b.times = sequence_times<float>(std::span<const float>(taus));
  return b;
}

void BM_Forward(benchmark::State& state) {
  const ModelConfig c = bench_config(static_cast<int>(state.range(0)), 2);
  const VelocityModel<float> model(c, 1);
  const auto batch = random_batch(c, 16);
  VelocityModel<float>::Activations acts;
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(batch.tokens, batch.times, acts).data());
  state.SetItemsProcessed(state.iterations() * batch.size);
}
BENCHMARK(BM_Forward)->Arg(32)->Arg(64)->Arg(128);

void BM_ForwardBackward(benchmark::State& state) {
  const ModelConfig c = bench_config(static_cast<int>(state.range(0)), 2);
  const VelocityModel<float> model(c, 1);
  const auto batch = random_batch(c, 16);
  std::vector<float> grad(model.parameter_count());
  for (auto _ : state) {
    std::fill(grad.begin(), grad.end(), 0.0f);
    benchmark::DoNotOptimize(flow_loss_batch<float>(model, batch, LossWeights{}, grad).total);
  }
  state.SetItemsProcessed(state.iterations() * batch.size);
}
BENCHMARK(BM_ForwardBackward)->Arg(32)->Arg(64)->Arg(128);

void BM_Render(benchmark::State& state) {
  const auto states = sim::rollout_states(sim::make_pick_place_script(1, sim::default_variant(), 0.01), 1, 80);
  std::size_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(sim::render_views(states[i++ % states.size()]));
}
BENCHMARK(BM_Render);

void BM_EncodeView(benchmark::State& state) {
  const ImageEncoder encoder(0x1DEA, LatentGeometry{}, 4);
  const auto& view = corpus()[0].steps[10].obs.views[0];
  for (auto _ : state) benchmark::DoNotOptimize(encoder.encode(view));
}
BENCHMARK(BM_EncodeView);

void BM_Infer(benchmark::State& state) {
  TrainOptions o;
  o.model = bench_config(64, 2);
  o.schedule.steps = 0;
  const VivaModel model(train(corpus(), o));
  const SamplerConfig sampler{static_cast<int>(state.range(0)), 7};
  const auto& x = corpus()[1].steps[20];
  for (auto _ : state) benchmark::DoNotOptimize(infer(model, x, sampler).value.v_hat);
}
BENCHMARK(BM_Infer)->Arg(1)->Arg(4)->Arg(16);

}  // namespace
BENCHMARK_MAIN();
