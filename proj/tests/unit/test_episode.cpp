#include "doctest.h"
#include "support.hpp"
#include "viva/episode.hpp"
#include "viva/errors.hpp"

using namespace viva;

TEST_SUITE("episode") {
  TEST_CASE("future index clamps to T") {
    CHECK(future_index(80, 50, 100) == 100);
    CHECK(future_index(0, 50, 100) == 50);
    CHECK(future_index(100, 1, 100) == 100);
  }

  TEST_CASE("sample_tuple targets") {
    std::mt19937_64 rng(3);
    const Episode ok = testing::random_episode(rng, 100, 4, true, 8);
    const Episode bad = testing::random_episode(rng, 100, 4, false, 8);

    const auto a = sample_tuple(ok, 80, 50, 7);
    CHECK(a.future_proprio == ok.steps[100].proprio);
    CHECK(a.current == ok.steps[80]);
    CHECK(a.episode_ref == 7);
    CHECK(a.t == 80);

    const auto b = sample_tuple(ok, 0, 50);
    CHECK(b.future_proprio == ok.steps[50].proprio);
    CHECK(b.return_target == doctest::Approx(1.0));

    CHECK(sample_tuple(ok, 25, 50).return_target == doctest::Approx(0.75));
    CHECK(sample_tuple(bad, 25, 50).return_target == doctest::Approx(1.75));
    CHECK(sample_tuple(bad, 100, 50).return_target == doctest::Approx(1.0));
  }

  TEST_CASE("sample_tuple errors") {
    std::mt19937_64 rng(4);
    const Episode ep = testing::random_episode(rng, 20, 2, true, 8);
    CHECK_THROWS_AS(sample_tuple(ep, -1, 5), ValidationError);
    CHECK_THROWS_AS(sample_tuple(ep, 21, 5), ValidationError);
    CHECK_THROWS_AS(sample_tuple(ep, 3, 0), ValidationError);
  }

  TEST_CASE("failure kind names round trip") {
    for (auto k : {FailureKind::kDrop, FailureKind::kMisplace, FailureKind::kStall})
      CHECK(failure_kind_from_string(to_string(k)) == k);
    CHECK_THROWS_AS(failure_kind_from_string("melt"), ValidationError);
  }
}
