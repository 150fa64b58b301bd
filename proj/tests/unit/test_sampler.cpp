#include <cmath>
#include <fstream>

#include "doctest.h"
#include "support.hpp"
#include "viva/errors.hpp"
#include "viva/evaluation.hpp"
#include "viva/returns.hpp"
#include "viva/sampler.hpp"
#include "viva/sim.hpp"

using namespace viva;

namespace {

const std::vector<Episode>& corpus() {
  static const std::vector<Episode> c = [] {
    sim::CorpusOptions o;
    o.min_length = 40;
    o.max_length = 60;
    return sim::generate_corpus(20, 2, 31, o);
  }();
  return c;
}

Checkpoint untrained_checkpoint() {
  TrainOptions o;
  o.model = testing::tiny_config();
  o.model.width = 32;
  o.model.heads = 4;
  o.schedule.steps = 0;
  o.schedule.seed = 4;
  return FlowTrainer(corpus(), o).checkpoint();
}

std::array<LatentFrame, 2> random_pair(std::uint64_t seed) {
  Rng rng(seed);
  std::array<LatentFrame, 2> z{LatentFrame({4, 4, 4}), LatentFrame({4, 4, 4})};
  for (auto& f : z) fill_standard_normal<double>(rng, f.data);
  return z;
}

}  // namespace

TEST_SUITE("sampler") {
  TEST_CASE("oracle constant velocity recovers z0 at any step count") {
    const auto z0 = random_pair(1);
    const auto z1 = random_pair(2);
    const VelocityField oracle = [&](const std::array<LatentFrame, 2>&, double) {
      std::array<LatentFrame, 2> v = z1;
      for (int k = 0; k < 2; ++k)
        for (std::size_t i = 0; i < v[k].data.size(); ++i) v[k].data[i] -= z0[k].data[i];
      return v;
    };
    for (int steps : {1, 2, 8}) {
      const auto z = integrate(oracle, z1, steps);
      for (int k = 0; k < 2; ++k)
        for (std::size_t i = 0; i < z[k].data.size(); ++i) CHECK(std::abs(z[k].data[i] - z0[k].data[i]) < 1e-6);
    }
    CHECK_THROWS_AS(integrate(oracle, z1, 0), ValidationError);
  }

  TEST_CASE("integration visits tau from 1 down in uniform steps") {
    std::vector<double> seen;
    const VelocityField probe = [&](const std::array<LatentFrame, 2>& z, double tau) {
      seen.push_back(tau);
      return std::array<LatentFrame, 2>{LatentFrame(z[0].geometry), LatentFrame(z[1].geometry)};
    };
    integrate(probe, random_pair(3), 4);
    CHECK(seen == std::vector<double>{1.0, 0.75, 0.5, 0.25});
  }

  TEST_CASE("value estimate clamps once and derives progress") {
    const auto hi = ValueEstimate::from_raw(2.7, 1.7);
    CHECK(hi.v_hat == 2.0);
    CHECK(hi.raw_frame_mean == 1.7);
    CHECK(hi.progress == 0.0);
    const auto lo = ValueEstimate::from_raw(-0.3, -1.3);
    CHECK(lo.v_hat == 0.0);
    CHECK(lo.progress == 1.0);
    CHECK(ValueEstimate::from_raw(0.25, -0.75).progress == 0.75);
    double prev = 2.0;
    for (double v = 0.0; v <= 1.0; v += 0.05) {
      CHECK(progress_from_value(v) <= prev);
      prev = progress_from_value(v);
    }
  }

  TEST_CASE("one-step inference is z1 minus one network call") {
    const Checkpoint ck = untrained_checkpoint();
    const VivaModel model(ck, SamplerConfig{1, 0});
    const auto& x = corpus()[0].steps[10];
    const auto prediction = infer(model, x, SamplerConfig{1, 99});
    const LatentSequence seq = assemble_sequence(x, std::nullopt, std::nullopt, model.encoder(), model.normalization(),
                                                 model.config().latent, 99);
    const auto v = forward_velocity(model.velocity_model(), seq, 1.0);
    LatentFrame z0_value = seq.frames[kValueFrame];
    for (std::size_t i = 0; i < z0_value.data.size(); ++i) z0_value.data[i] -= v[1].data[i];
    CHECK(prediction.value.v_hat == doctest::Approx(decode_value(z0_value)).epsilon(1e-6));
    LatentFrame z0_prop = seq.frames[kFutureProprioFrame];
    for (std::size_t i = 0; i < z0_prop.data.size(); ++i) z0_prop.data[i] -= v[0].data[i];
    const auto q = decode_proprio(z0_prop, 3, model.normalization());
    for (int i = 0; i < 3; ++i) CHECK(prediction.future.values[i] == doctest::Approx(q.values[i]).epsilon(1e-5));
  }

  TEST_CASE("inference is deterministic and batch-consistent") {
    const VivaModel model(untrained_checkpoint());
    const auto& ep = corpus()[1];
    const auto a = infer(model, ep.steps[5], SamplerConfig{1, 7});
    const auto b = infer(model, ep.steps[5], SamplerConfig{1, 7});
    CHECK(a.value.v_hat == b.value.v_hat);
    CHECK(a.future == b.future);
    const auto c = infer(model, ep.steps[5], SamplerConfig{1, 8});
    CHECK(a.value.v_hat != c.value.v_hat);
    const auto batch = model.estimate_batch({&ep.steps[5], &ep.steps[6]}, {7, 3});
    CHECK(batch[0].v_hat == a.value.v_hat);
    CHECK(batch[1].v_hat == model.estimate(ep.steps[6], 3).v_hat);
    CHECK(infer(model, ep.steps[5], SamplerConfig{4, 7}).value.v_hat ==
          infer(model, ep.steps[5], SamplerConfig{4, 7}).value.v_hat);
    const auto averaged = infer(model, ep.steps[5], SamplerConfig{1, 7, 8});
    CHECK(std::abs(averaged.value.v_hat - 1.0) < std::abs(a.value.v_hat - 1.0) + 0.2);
    CHECK_THROWS_AS(infer(model, ep.steps[5], SamplerConfig{0, 7}), ValidationError);
  }

  TEST_CASE("value trace sampling points") {
    const VivaModel model(untrained_checkpoint());
    const Episode& ep = corpus()[2];
    const int horizon = ep.horizon();
    const auto two = value_trace(model, ep, horizon);
    REQUIRE(two.size() == 2);
    CHECK(two[0].t == 0);
    CHECK(two[1].t == horizon);
    const auto dense = value_trace(model, ep, 1, 5);
    CHECK(dense.size() == static_cast<std::size_t>(horizon) + 1);
    const auto sparse = value_trace(model, ep, 7, 5);
    CHECK(sparse.back().t == horizon);
    for (const auto& p : sparse) {
      CHECK(p.v_hat == dense[p.t].v_hat);
      CHECK(*p.g_true == return_to_go({horizon, ep.success}, p.t));
    }
    CHECK_THROWS_AS(value_trace(model, ep, 0), ValidationError);

    testing::TempDir dir("trace");
    write_trace_csv(dir / "t.csv", sparse);
    std::ifstream in(dir / "t.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "t,v_hat,progress,g_true");
  }

  TEST_CASE("untrained model shows no rank correlation") {
    const VivaModel model(untrained_checkpoint());
    double sum = 0.0;
    int n = 0;
    for (const auto& ep : corpus()) {
      if (!ep.success) continue;
      const auto trace = value_trace(model, ep, 2, 1);
      std::vector<double> v, g;
      for (const auto& p : trace) {
        v.push_back(p.v_hat);
        g.push_back(*p.g_true);
      }
      sum += spearman(v, g);
      ++n;
    }
    CHECK(n == 20);
    CHECK(std::abs(sum / n) < 0.3);
  }

  TEST_CASE("advantage with oracle values") {
    const int horizon = 100;
    const int k = 50;
    const auto success = [&](int t) { return return_to_go({horizon, true}, t); };
    for (int t : {0, 10, 60, 99}) {
      const double expected = std::min(t + k, horizon) / 100.0 - t / 100.0;
      CHECK(advantage(success, horizon, t, k) == doctest::Approx(expected));
      CHECK(advantage(success, horizon, t, k) >= 0.0);
    }
    CHECK(advantage(success, horizon, horizon, k) == 0.0);

    const int event = 40;
    const auto failing = [&](int t) { return return_to_go({horizon, t < event}, t); };
    for (int t = event - 10; t < event; ++t) CHECK(advantage(failing, horizon, t, 20) <= 0.0);
    CHECK(advantage(failing, horizon, horizon, k) == 0.0);
    CHECK_THROWS_AS(advantage(success, horizon, 101, k), ValidationError);
    CHECK_THROWS_AS(advantage(success, horizon, -1, k), ValidationError);
    CHECK_THROWS_AS(advantage(success, horizon, 5, 0), ValidationError);
  }

  TEST_CASE("advantage through an estimator") {
    const VivaModel model(untrained_checkpoint());
    const Episode& ep = corpus()[3];
    const int horizon = ep.horizon();
    CHECK(advantage(model, ep, horizon, 50, 2) == 0.0);
    const double a = advantage(model, ep, 4, 10, 2);
    const double manual = model.estimate(ep.steps[4], mix_seed(2, 4)).v_hat - model.estimate(ep.steps[14], mix_seed(2, 14)).v_hat;
    CHECK(a == manual);
  }
}
