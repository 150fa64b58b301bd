#include <cmath>

#include "doctest.h"
#include "viva/errors.hpp"
#include "viva/sim.hpp"

using namespace viva;
using namespace viva::sim;

namespace {

double object_distance_to(const WorldState& s, Vec2 p) { return std::hypot(s.object.x - p.x, s.object.y - p.y); }

}  // namespace

TEST_SUITE("sim-manip") {
  TEST_CASE("kinematics round trip") {
    const ArmGeometry arm;
    for (Vec2 target : {Vec2{0.3, 0.5}, Vec2{0.7, 0.6}, Vec2{0.5, 0.8}}) {
      const auto q = inverse_kinematics(arm, target);
      const Vec2 tip = forward_kinematics(arm, q[0], q[1]);
      CHECK(tip.x == doctest::Approx(target.x).epsilon(1e-9));
      CHECK(tip.y == doctest::Approx(target.y).epsilon(1e-9));
    }
  }

  TEST_CASE("noise-free nominal script succeeds") {
    for (std::uint64_t scene : {1u, 2u, 3u}) {
      const auto config = make_pick_place_script(scene, default_variant(), 0.0);
      const Episode ep = rollout(config, 0, 100);
      CHECK(ep.success);
      CHECK(ep.horizon() == 100);
      CHECK_FALSE(ep.meta.failure_kind.has_value());
      CHECK(ep.steps.front().proprio.dim() == kProprioDim);
    }
  }

  TEST_CASE("drop at T/2 fails and the object leaves the target") {
    auto config = make_pick_place_script(4, default_variant(), 0.0);
    const auto nominal = rollout_states(config, 0, 100);
    config.failure_event = FailureEvent{FailureKind::kDrop, 50};
    const auto states = rollout_states(config, 0, 100);
    const Episode ep = rollout(config, 0, 100);
    CHECK_FALSE(ep.success);
    CHECK(ep.meta.failure_step == 50);
    CHECK(ep.meta.failure_kind == FailureKind::kDrop);
    for (int t = 0; t < 50; ++t) CHECK(states[t].object.x == nominal[t].object.x);
    const Vec2 goal = config.target_zone.center;
    CHECK(object_distance_to(states.back(), goal) > object_distance_to(nominal.back(), goal) + 0.05);
    CHECK_FALSE(config.target_zone.contains(states.back().object));
  }

  TEST_CASE("every failure kind ends unsuccessful") {
    for (auto kind : {FailureKind::kDrop, FailureKind::kMisplace, FailureKind::kStall}) {
      auto config = make_pick_place_script(5, default_variant(), 0.01);
      config.failure_event = FailureEvent{kind, 40};
      const Episode ep = rollout(config, 3, 110);
      CHECK_FALSE(ep.success);
      CHECK(ep.meta.failure_kind == kind);
    }
  }

  TEST_CASE("misplace swings to the distractor, stall seizes and sags") {
    auto config = make_pick_place_script(5, default_variant(), 0.0);
    config.failure_event = FailureEvent{FailureKind::kMisplace, 40};
    auto states = rollout_states(config, 0, 110);
    const Vec2 decoy = config.distractor_zone.center;
    const auto nominal = rollout_states(make_pick_place_script(5, default_variant(), 0.0), 0, 110);
    CHECK(object_distance_to(states[40], decoy) == doctest::Approx(object_distance_to(nominal[40], decoy)));
    // 0.06 of the episode later the arm has arrived.
    const Vec2 tip = forward_kinematics(ArmGeometry{}, states[47].shoulder, states[47].elbow);
    CHECK(std::hypot(tip.x - decoy.x, tip.y - decoy.y) < 0.02);

    config.failure_event = FailureEvent{FailureKind::kStall, 40};
    states = rollout_states(config, 0, 110);
    REQUIRE(states[40].held);
    for (int t = 41; t <= 110; ++t) CHECK(states[t].shoulder == states[40].shoulder);
    CHECK(states[40].object_height < nominal[40].object_height);
    CHECK(states[41].object_height < states[40].object_height);
    CHECK(states[50].object_height == 0.0);
    CHECK(states[50].held);
  }

  TEST_CASE("rollout is deterministic") {
    const auto config = make_pick_place_script(6, default_variant(), 0.02);
    CHECK(rollout(config, 11, 80) == rollout(config, 11, 80));
    CHECK_FALSE(rollout(config, 11, 80) == rollout(config, 12, 80));
  }

  TEST_CASE("rendering is pure and sees the object") {
    const auto config = make_pick_place_script(7, default_variant(), 0.0);
    const WorldState s = rollout_states(config, 0, 60).front();
    CHECK(render_views(s) == render_views(s));
    WorldState moved = s;
    moved.object.x += 0.2;
    CHECK(render_views(s).views[0] != render_views(moved).views[0]);
  }

  TEST_CASE("object at target center covers target pixels in the top view") {
    const auto config = make_pick_place_script(8, default_variant(), 0.0);
    WorldState s = rollout_states(config, 0, 60).front();
    s.target_zone = Box{{0.7, 0.7}, 0.08};
    s.distractor_zone = Box{{0.2, 0.7}, 0.08};
    s.shoulder = 0.0;  // arm lies along +x from the base, far below the zone
    s.elbow = 0.0;
    s.object = {0.2, 0.2};
    // Hand projection of (0.7, 0.7) on a 32px canvas spanning [0,1]^2 with v up.
    const int col = static_cast<int>(std::floor(0.7 * kViewSize));
    const int row = kViewSize - 1 - static_cast<int>(std::floor(0.7 * kViewSize));
    const auto* zone_px = render_views(s).views[0].at(row, col);
    CHECK(zone_px[0] == 40);
    CHECK(zone_px[1] == 150);
    CHECK(zone_px[2] == 60);
    s.object = s.target_zone.center;
    const auto img = render_views(s).views[0];
    const auto* px = img.at(row, col);
    CHECK(px[0] == 200);
    CHECK(px[1] == 50);
    CHECK(px[2] == 40);
  }

  TEST_CASE("corpus label counts") {
    CorpusOptions small;
    small.min_length = 20;
    small.max_length = 30;
    const auto corpus = generate_corpus(6, 6, 7, small);
    CHECK(corpus.size() == 12);
    CHECK(std::count_if(corpus.begin(), corpus.end(), [](const Episode& e) { return e.success; }) == 6);
    const auto failures = generate_corpus(0, 5, 7, small);
    CHECK(failures.size() == 5);
    for (const auto& ep : failures) {
      CHECK_FALSE(ep.success);
      REQUIRE(ep.meta.failure_kind.has_value());
      const double frac = static_cast<double>(ep.meta.failure_step) / ep.horizon();
      CHECK(frac > 0.28);
      CHECK(frac < 0.45);
    }
    CHECK(generate_corpus(6, 6, 7, small) == corpus);
    CHECK(generate_corpus(0, 0, 7, small).empty());
    CHECK_THROWS_AS(generate_corpus(-1, 0, 7, small), ValidationError);
  }

  TEST_CASE("100/100 corpus at default lengths") {
    const auto corpus = generate_corpus(100, 100, 7);
    CHECK(corpus.size() == 200);
    CHECK(std::count_if(corpus.begin(), corpus.end(), [](const Episode& e) { return e.success; }) == 100);
  }

  TEST_CASE("progress is monotone and complete on success") {
    const auto corpus = generate_corpus(3, 0, 21);
    for (const auto& ep : corpus) {
      for (std::size_t t = 1; t < ep.meta.progress.size(); ++t) CHECK(ep.meta.progress[t] >= ep.meta.progress[t - 1]);
      CHECK(ep.meta.progress.back() == 1.0);
    }
  }

  TEST_CASE("held-out variant") {
    CorpusOptions ood;
    ood.variant = held_out_variant();
    ood.min_length = 30;
    ood.max_length = 40;
    const auto corpus = generate_corpus(2, 2, 3, ood);
    for (const auto& ep : corpus) CHECK(ep.meta.object_shape == "triangle");
    CHECK(object_shape_from_string("triangle") == ObjectShape::kTriangle);
    CHECK_THROWS_AS(object_shape_from_string("hexagon"), ValidationError);
  }

  TEST_CASE("script JSON round trip") {
    auto config = make_pick_place_script(9, default_variant(), 0.01);
    config.failure_event = FailureEvent{FailureKind::kStall, 33};
    const auto back = script_from_json(script_to_json(config));
    CHECK(rollout(back, 5, 70) == rollout(config, 5, 70));
    CHECK_THROWS_AS(script_from_json("{\"nope\": 1}"), ValidationError);
  }

  TEST_CASE("rollout preconditions") {
    auto config = make_pick_place_script(9, default_variant(), 0.01);
    CHECK_THROWS_AS(rollout(config, 0, 9), ValidationError);
    config.failure_event = FailureEvent{FailureKind::kDrop, 50};
    CHECK_THROWS_AS(rollout(config, 0, 50), ValidationError);
  }
}
