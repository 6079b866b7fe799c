#include <fstream>

#include "cyclestain/cli/cli.hpp"
#include "cyclestain/core/error.hpp"
#include "doctest.h"
#include "json.hpp"
#include "support.hpp"

using namespace cyclestain;
using cyclestain::testing::TempDir;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json load(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in);
  return json::parse(in);
}

int run(const std::vector<std::string>& args) {
  return dispatch(args);
}

}  // namespace

TEST_CASE("usage errors and help") {
  CHECK(run({"--help"}) == kExitOk);
  CHECK(run({"train", "--help"}) == kExitOk);
  CHECK(run({}) == kExitUsage);
  CHECK(run({"no-such-command"}) == kExitUsage);
  CHECK(run({"train", "--out", "/tmp/never"}) == kExitUsage);
  CHECK(run({"toy-dataset", "--out", "/tmp/never", "--n", "0"}) == kExitUsage);
}

TEST_CASE("failures map to exit codes and still leave a record") {
  TempDir dir("cli_fail");
  const fs::path rec = dir / "rec.json";
  CHECK(run({"eval-kappa", "--ratings", (dir / "missing.csv").string(), "--json", (dir / "k.json").string(),
             "--record", rec.string()}) == kExitData);
  const json r = load(rec);
  CHECK(r["exit_code"] == kExitData);
  CHECK_FALSE(r["error"].get<std::string>().empty());

  CHECK(run({"train", "--ff-manifest", "a", "--ffpe-manifest", "b", "--out", (dir / "t").string(), "--base", "3"}) ==
        kExitUsage);
}

TEST_CASE("toy workflow chains run records") {
  TempDir dir("cli_flow");
  const fs::path toy = dir / "toy";
  REQUIRE(run({"toy-dataset", "--out", toy.string(), "--n", "3", "--size", "64", "--seed", "5"}) == kExitOk);
  const json toy_rec = load(toy / "run_toy-dataset.json");
  CHECK(toy_rec["subcommand"] == "toy-dataset");
  CHECK(toy_rec["seed"] == 5);
  CHECK(toy_rec["artifacts"]["count"] == 6);
  CHECK_FALSE(toy_rec["build_id"].get<std::string>().empty());

  for (const auto& [d, sub] : {std::pair{"FF", "A"}, std::pair{"FFPE", "B"}}) {
    REQUIRE(run({"extract", "--slides", toy_rec["artifacts"][sub == std::string("A") ? "domain_a" : "domain_b"],
                 "--domain", d, "--patch", "32", "--stride", "32", "--threshold", "0.1", "--out",
                 (dir / d).string()}) == kExitOk);
    CHECK(load(dir / d / "run_extract.json")["artifacts"]["patches"].get<int>() > 0);
  }
  const json ff_ex = load(dir / "FF" / "run_extract.json");
  const json ffpe_ex = load(dir / "FFPE" / "run_extract.json");

  REQUIRE(run({"train", "--ff-manifest", ff_ex["artifacts"]["manifest"], "--ffpe-manifest",
               ffpe_ex["artifacts"]["manifest"], "--out", (dir / "train").string(), "--iters", "2", "--depth", "2",
               "--base", "4", "--res-blocks", "1", "--disc-layers", "2", "--disc-base", "4", "--seed", "9"}) ==
          kExitOk);
  const json tr = load(dir / "train" / "run_train.json");
  CHECK(tr["inputs"]["ff_manifest"] == ff_ex["artifacts"]["manifest"]);
  CHECK(tr["artifacts"]["iterations"] == 2);
  CHECK(tr["config"]["seed"] == 9);
  const std::string ckpt = tr["artifacts"]["final_checkpoint"];
  REQUIRE(fs::exists(ckpt));

  REQUIRE(run({"translate", "--ckpt", ckpt, "--input", toy_rec["artifacts"]["domain_a"], "--output",
               (dir / "vffpe").string(), "--tile", "32", "--overlap", "8"}) == kExitOk);
  const json tl = load(dir / "vffpe" / "run_translate.json");
  CHECK(tl["inputs"]["ckpt"] == ckpt);
  REQUIRE(tl["artifacts"]["outputs"].size() == 3);

  {
    std::ofstream pairs(dir / "pairs.jsonl");
    for (int i = 0; i < 3; ++i)
      pairs << json{{"ff", (toy / "A" / ("toy_A_00" + std::to_string(i) + ".png")).string()},
                    {"vffpe", tl["artifacts"]["outputs"][i]},
                    {"ffpe", (toy / "B" / ("toy_B_00" + std::to_string(i) + ".png")).string()}}
                   .dump()
            << '\n';
  }
  REQUIRE(run({"eval-lpips", "--pairs", (dir / "pairs.jsonl").string(), "--json", (dir / "lpips.json").string()}) ==
          kExitOk);
  const json lp = load(dir / "lpips.json");
  CHECK(lp["pairs"] == 3);
  CHECK(lp["ff_vs_ffpe"]["distances"].size() == 3);

  REQUIRE(run({"survey", "build", "--ff", toy_rec["artifacts"]["domain_a"], "--vffpe", (dir / "vffpe").string(),
               "--ffpe", toy_rec["artifacts"]["domain_b"], "--counts", "2,2,2", "--reviewers", "R1,R2,R3", "--out",
               (dir / "plan.json").string()}) == kExitOk);
  CHECK(load(dir / "plan.json.run.json")["subcommand"] == "survey build");
  CHECK(run({"survey", "export", "--plan", (dir / "plan.json").string(), "--store", (dir / "store").string(), "--out",
             (dir / "q2.csv").string()}) == kExitData);
  CHECK(run({"survey", "export", "--plan", (dir / "plan.json").string(), "--store", (dir / "store").string(), "--out",
             (dir / "q2.csv").string(), "--partial"}) == kExitOk);
}
