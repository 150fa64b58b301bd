#include <fstream>

#include <json.hpp>

#include "cli.hpp"
#include "doctest.h"
#include "support.hpp"

using nlohmann::json;
namespace fs = std::filesystem;
using viva::testing::TempDir;

namespace {

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "viva");
  return viva::cli::run(args);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

std::vector<std::string> gen_args(const fs::path& out, const std::string& seed = "3") {
  return {"gen-data", "--n-success", "2", "--n-failure", "2", "--seed", seed, "--min-length", "20",
          "--max-length", "24", "--out", out.string()};
}

std::vector<std::string> tiny_train(const fs::path& data, const fs::path& out, const std::string& name) {
  return {"train",   "--data",  data.string(), "--steps", "4",          "--batch",       "4",
          "--width", "16",      "--heads",     "2",       "--layers",   "1",             "--token-patch",
          "4",       "--out",   out.string(),  "--run-name", name,      "--horizon",     "5"};
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("config values are overridden by explicit flags") {
    const json config = {{"steps", 100}, {"lr", 0.5}, {"model", "viva"}, {"command", "train"}, {"flag", true},
                         {"checkpoint", {"a", "b"}}};
    const auto merged = viva::cli::merge_config_args(config, {"--steps", "7"});
    const std::vector<std::string> expected{"--checkpoint", "a", "--checkpoint", "b", "--flag", "--lr", "0.5",
                                            "--model", "viva", "--steps", "7"};
    CHECK(merged == expected);
    const auto eq = viva::cli::merge_config_args(config, {"--lr=0.1"});
    CHECK(std::count(eq.begin(), eq.end(), "0.5") == 0);
  }

  TEST_CASE("run directories") {
    TempDir base("cli");
    CHECK(viva::cli::make_run_dir(base.path(), "eval", "named") == base.path() / "named");
    const auto a = viva::cli::make_run_dir(base.path(), "eval", std::nullopt);
    const auto b = viva::cli::make_run_dir(base.path(), "eval", std::nullopt);
    CHECK(a != b);
    CHECK(fs::is_directory(a));
    CHECK(a.filename().string().rfind("eval-", 0) == 0);
  }

  TEST_CASE("gen-data is deterministic and validates counts") {
    TempDir dir("cli");
    REQUIRE(run(gen_args(dir / "a")) == 0);
    REQUIRE(run(gen_args(dir / "b")) == 0);
    CHECK(slurp(dir / "a" / "manifest.json") == slurp(dir / "b" / "manifest.json"));
    for (const char* f : {"proprio.f32", "view1.u8", "view2.u8", "view3.u8"})
      CHECK(slurp(dir / "a" / "ep_00003" / f) == slurp(dir / "b" / "ep_00003" / f));
    const json rc = read_json(dir / "a" / "runconfig.json");
    CHECK(rc["command"] == "gen-data");
    CHECK(rc["n-success"] == "2");
    CHECK(run({"gen-data", "--n-success", "0", "--n-failure", "0", "--out", (dir / "c").string()}) == 1);
    CHECK(run({"gen-data", "--failure-kinds", "explode", "--out", (dir / "d").string()}) == 1);
    CHECK(run({"gen-data", "--bogus-flag"}) == 1);
    CHECK(run({}) == 1);
  }

  TEST_CASE("train, eval and ood end to end") {
    TempDir dir("cli");
    REQUIRE(run(gen_args(dir / "data")) == 0);
    {
      std::ofstream cfg(dir / "train.json");
      cfg << json{{"steps", 999}, {"lr", 0.002}, {"seed", 5}}.dump();
    }
    auto viva_args = tiny_train(dir / "data", dir / "runs", "viva");
    viva_args.insert(viva_args.end(), {"--config", (dir / "train.json").string()});
    REQUIRE(run(viva_args) == 0);
    const json rc = read_json(dir / "runs" / "viva" / "runconfig.json");
    CHECK(rc["steps"] == "4");
    CHECK(rc["lr"] == "0.002");
    CHECK(rc["seed"] == "5");
    CHECK(rc["effective_lambda_prop"] == 1.0);
    CHECK(fs::exists(dir / "runs" / "viva" / "metrics.csv"));

    auto noprop = tiny_train(dir / "data", dir / "runs", "noprop");
    noprop.insert(noprop.end(), {"--model", "viva-noprop"});
    REQUIRE(run(noprop) == 0);
    CHECK(read_json(dir / "runs" / "noprop" / "runconfig.json")["effective_lambda_prop"] == 0.0);

    auto bc = tiny_train(dir / "data", dir / "runs", "bc");
    bc.insert(bc.end(), {"--model", "binclass"});
    REQUIRE(run(bc) == 0);
    const json bc_rc = read_json(dir / "runs" / "bc" / "runconfig.json");
    const double ratio = bc_rc["parameter_count"].get<double>() / rc["parameter_count"].get<double>();
    CHECK(ratio > 0.8);
    CHECK(ratio < 1.2);

    const std::string viva_ck = (dir / "runs" / "viva" / "model.ckpt").string();
    const std::string bc_ck = (dir / "runs" / "bc" / "model.ckpt").string();
    auto eval = [&](const std::string& name) {
      return run({"eval", "--checkpoint", viva_ck, "--checkpoint", bc_ck, "--data", (dir / "data").string(),
                  "--stride", "3", "--out", (dir / "runs").string(), "--run-name", name});
    };
    REQUIRE(eval("e1") == 0);
    REQUIRE(eval("e2") == 0);
    const fs::path e1 = dir / "runs" / "e1";
    CHECK(slurp(e1 / "metrics.json") == slurp(dir / "runs" / "e2" / "metrics.json"));
    const json metrics = read_json(e1 / "metrics.json");
    REQUIRE(metrics["models"].size() == 2);
    CHECK(metrics["models"][0]["model"] == "viva");
    CHECK(metrics["models"][1]["model"] == "binclass");
    for (const char* key : {"spearman_mean", "auc_mid_episode", "failure_sensitivity"})
      CHECK(metrics["models"][0].contains(key));
    int plots = 0;
    for (const auto& f : fs::directory_iterator(e1 / "plots")) plots += f.path().extension() == ".png" ? 1 : 0;
    CHECK(plots == 4);
    CHECK(fs::exists(e1 / "traces" / "0_viva" / "ep_00002.csv"));
    CHECK(slurp(e1 / "report.txt").find("metric definitions") == 0);

    // The training shapes overlap the held-out corpus, so ood refuses.
    CHECK(run({"ood", "--checkpoint", viva_ck, "--data", (dir / "data").string(), "--out", (dir / "runs").string()}) ==
          1);
    auto shifted = gen_args(dir / "tri", "4");
    shifted.insert(shifted.end(), {"--object-shape", "triangle"});
    REQUIRE(run(shifted) == 0);
    REQUIRE(run({"ood", "--checkpoint", viva_ck, "--checkpoint", bc_ck, "--data", (dir / "tri").string(), "--stride",
                 "4", "--out", (dir / "runs").string(), "--run-name", "o1", "--max-plots", "1"}) == 0);
    const json ood = read_json(dir / "runs" / "o1" / "metrics.json");
    CHECK(ood["dataset"]["object_shapes"] == json{"triangle"});
    CHECK(ood["models"][0].size() == metrics["models"][0].size());

    CHECK(run({"eval", "--checkpoint", (dir / "missing.ckpt").string(), "--data", (dir / "data").string(), "--out",
               (dir / "runs").string()}) == 2);
    auto bad = tiny_train(dir / "data", dir / "runs", "bad");
    bad.insert(bad.end(), {"--heads", "3"});
    CHECK(run(bad) == 1);
  }
}
