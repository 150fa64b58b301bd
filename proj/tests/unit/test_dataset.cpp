#include <fstream>

#include <json.hpp>

#include "doctest.h"
#include "support.hpp"
#include "viva/dataset.hpp"
#include "viva/errors.hpp"

using namespace viva;

namespace {

std::vector<Episode> random_corpus(int n, std::uint64_t seed, int d_q = 4, int image = 8) {
  std::mt19937_64 rng(seed);
  std::vector<Episode> out;
  for (int i = 0; i < n; ++i) {
    const int horizon = std::uniform_int_distribution<int>(1, 12)(rng);
    Episode ep = testing::random_episode(rng, horizon, d_q, i % 2 == 0, image);
    ep.meta.object_shape = i % 3 == 0 ? "triangle" : "square";
    if (!ep.success) ep.meta.failure_kind = i % 4 == 1 ? FailureKind::kStall : FailureKind::kMisplace;
    for (std::size_t t = 0; t < ep.steps.size(); ++t) ep.meta.progress[t] = 0.1 * static_cast<double>(t);
    out.push_back(std::move(ep));
  }
  return out;
}

}  // namespace

TEST_SUITE("episode-data") {
  TEST_CASE("manifest counts") {
    testing::TempDir dir("ds");
    std::mt19937_64 rng(1);
    const std::vector<Episode> eps{testing::random_episode(rng, 10, 4, true, 8),
                                   testing::random_episode(rng, 10, 4, false, 8)};
    const auto summary = write_dataset(eps, dir.path());
    CHECK(summary.episodes == 2);
    CHECK(summary.steps == 22);
    CHECK(summary.successes == 1);
    const auto again = read_manifest_summary(dir.path());
    CHECK(again.episodes == 2);
    CHECK(again.steps == 22);
    CHECK(again.proprio_dim == 4);
  }

  TEST_CASE("empty dataset is rejected") {
    testing::TempDir dir("ds");
    CHECK_THROWS_WITH_AS(write_dataset({}, dir.path()), "empty dataset", ValidationError);
  }

  TEST_CASE("round trip of 50 random episodes is byte exact") {
    testing::TempDir dir("ds");
    const auto eps = random_corpus(50, 77);
    write_dataset(eps, dir.path());
    const auto back = read_dataset(dir.path());
    REQUIRE(back.size() == eps.size());
    for (std::size_t i = 0; i < eps.size(); ++i) {
      CHECK(back[i] == eps[i]);
      for (std::size_t t = 0; t < eps[i].steps.size(); ++t)
        CHECK(std::memcmp(back[i].steps[t].proprio.values.data(), eps[i].steps[t].proprio.values.data(),
                          eps[i].steps[t].proprio.values.size() * sizeof(float)) == 0);
    }
    CHECK(read_manifest_summary(dir.path()).object_shapes == std::vector<std::string>{"square", "triangle"});
  }

  TEST_CASE("corrupted file raises a checksum error naming it") {
    testing::TempDir dir("ds");
    write_dataset(random_corpus(3, 5), dir.path());
    const auto victim = dir.path() / "ep_00001" / "view2.u8";
    {
      std::fstream f(victim, std::ios::in | std::ios::out | std::ios::binary);
      f.seekp(3);
      f.put(static_cast<char>(0x5a ^ 0xff));
    }
    try {
      read_dataset(dir.path());
      FAIL("expected a checksum error");
    } catch (const ChecksumError& e) {
      CHECK(std::string(e.what()).find("ep_00001/view2.u8") != std::string::npos);
    }
  }

  TEST_CASE("truncated file and missing manifest") {
    testing::TempDir dir("ds");
    write_dataset(random_corpus(2, 6), dir.path());
    std::filesystem::resize_file(dir.path() / "ep_00000" / "proprio.f32", 4);
    CHECK_THROWS_AS(read_dataset(dir.path()), FormatError);
    testing::TempDir empty("ds");
    CHECK_THROWS_AS(read_dataset(empty.path()), FormatError);
  }

  TEST_CASE("unknown manifest version") {
    testing::TempDir dir("ds");
    write_dataset(random_corpus(2, 8), dir.path());
    nlohmann::json manifest;
    std::ifstream(dir.path() / "manifest.json") >> manifest;
    manifest["version"] = 99;
    std::ofstream(dir.path() / "manifest.json", std::ios::trunc) << manifest.dump();
    CHECK_THROWS_AS(read_dataset(dir.path()), VersionError);
  }

  TEST_CASE("heterogeneous episodes name the offender") {
    testing::TempDir dir("ds");
    auto eps = random_corpus(3, 9);
    std::mt19937_64 rng(1);
    eps.push_back(testing::random_episode(rng, 4, 5, true, 8));
    CHECK_THROWS_WITH_AS(write_dataset(eps, dir.path()), doctest::Contains("episode 3"), ValidationError);
    eps.back() = testing::random_episode(rng, 4, 4, true, 16);
    CHECK_THROWS_WITH_AS(write_dataset(eps, dir.path()), doctest::Contains("episode 3"), ValidationError);
  }
}
