// SPDX-License-Identifier: Apache-2.0
#include <filesystem>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "rlbind/checkpoint.hpp"
#include "rlbind/cli.hpp"
#include "rlbind/pipeline.hpp"

using namespace rlbind;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int status;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out;
  std::ostringstream err;
  const int status = run_cli(args, out, err);
  return {status, out.str(), err.str()};
}

const std::vector<std::string> kFast{"--set", "eval.per_class=2",    "--set", "eval.iters=5",
                                     "--set", "stage1.attack_iters=3", "--set", "stage2.attack_iters=3"};

std::vector<std::string> with_fast(std::vector<std::string> args) {
  args.insert(args.end(), kFast.begin(), kFast.end());
  return args;
}

class TempDir {
 public:
  TempDir() : path_(fs::temp_directory_path() / "rlbind_test_cli") {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

}  // namespace

TEST_CASE("end-to-end commands") {
  const TempDir tmp;
  const std::string data = tmp / "data";
  REQUIRE(run({"gen-data", "--out", data, "--seed", "5", "--set", "data.samples_per_class=20"}).status == 0);
  CHECK(fs::exists(fs::path(data) / "manifest.json"));

  SUBCASE("rerunning into an existing directory needs --force") {
    const Outcome again = run({"gen-data", "--out", data});
    CHECK(again.status != 0);
    CHECK(again.err.rfind("error: argument: ", 0) == 0);
    CHECK(again.err.find("--force") != std::string::npos);
    CHECK(run({"gen-data", "--out", data, "--force", "--seed", "5", "--set", "data.samples_per_class=20"}).status == 0);
  }

  SUBCASE("stages, eval and report") {
    const std::string p = tmp / "pretrain";
    const Outcome pre = run(with_fast({"pretrain", "--data", data, "--out", p}));
    REQUIRE_MESSAGE(pre.status == 0, pre.err);
    for (const char* f : {"model.rlbd", "metrics.csv", "manifest.json", "config.ini", "losses.csv"}) {
      CHECK_MESSAGE(fs::exists(fs::path(p) / f), f);
    }
    const auto manifest = nlohmann::json::parse(read_file(fs::path(p) / "manifest.json"));
    CHECK(manifest.at("library_version") == kLibraryVersion);
    CHECK(manifest.at("provenance").at("eval.iters") == "flag");
    CHECK(manifest.at("provenance").at("stage2.lambda") == "default");
    CHECK(manifest.at("config").at("data").at("seed") == 5);

    const std::string s1 = tmp / "stage1";
    const Outcome st1 = run(with_fast({"stage1", "--data", data, "--init", p + "/model.rlbd", "--out", s1, "--set",
                                       "stage1.epochs=1"}));
    REQUIRE_MESSAGE(st1.status == 0, st1.err);
    CHECK(load_checkpoint(fs::path(s1) / "model.rlbd").stage == "stage1");

    const Outcome wrong = run(with_fast({"stage1", "--data", data, "--init", s1 + "/model.rlbd", "--out", tmp / "x"}));
    CHECK(wrong.status != 0);
    CHECK(wrong.err.find("stage0") != std::string::npos);

    const std::string s2 = tmp / "stage2";
    const Outcome st2 = run(with_fast({"stage2", "--data", data, "--init", s1 + "/model.rlbd", "--out", s2, "--set",
                                       "stage2.epochs=1", "--set", "model.scorer=cosine"}));
    REQUIRE_MESSAGE(st2.status == 0, st2.err);
    const Model m2 = load_checkpoint(fs::path(s2) / "model.rlbd");
    CHECK(m2.stage == "stage2");
    CHECK(m2.branches.front().scorer.kind() == ScorerKind::kCosine);

    const std::string ev = tmp / "eval";
    const Outcome e = run(with_fast(
        {"eval", "--ckpt", s2 + "/model.rlbd", "--data", data, "--epsilons", "2/255,4/255", "--out", ev}));
    REQUIRE_MESSAGE(e.status == 0, e.err);
    const std::string metrics = read_file(fs::path(ev) / "metrics.csv");
    CHECK(metrics.find(",2/255,") != std::string::npos);
    CHECK(metrics.find(",4/255,") != std::string::npos);

    const Outcome rep = run({"report", p, s1, "--out", tmp / "report", "--gnuplot", tmp / "plot.dat"});
    REQUIRE_MESSAGE(rep.status == 0, rep.err);
    CHECK(rep.out.find("pretrain(stage0)") != std::string::npos);
    CHECK(rep.out.find("stage1(stage1):d_robust") != std::string::npos);
    CHECK(fs::exists(tmp / "report/report.csv"));
    CHECK(fs::exists(tmp / "plot.dat"));

    const Outcome mismatch = run({"report", p, ev});
    CHECK(mismatch.status != 0);
    CHECK(mismatch.err.rfind("error: format: ", 0) == 0);
  }

  SUBCASE("ablation grid") {
    const std::string out = tmp / "grid";
    const Outcome g = run(with_fast({"ablate", "--data", data, "--axes", "scorer=dot,cosine", "alignment=l2",
                                     "--out", out, "--set", "stage1.epochs=1", "--set", "stage2.epochs=1"}));
    REQUIRE_MESSAGE(g.status == 0, g.err);
    CHECK(g.out.find("2 cells, 0 failed") != std::string::npos);
    const std::string metrics = read_file(fs::path(out) / "metrics.csv");
    CHECK(metrics.find("alignment=l2+scorer=cosine,stage2,image,cosine") != std::string::npos);

    const Outcome bad = run({"ablate", "--data", data, "--axes", "scorer=dot,euclid", "--out", tmp / "bad"});
    CHECK(bad.status != 0);
    CHECK(bad.err.find("euclid") != std::string::npos);
    CHECK_FALSE(fs::exists(tmp / "bad"));
  }
}

TEST_CASE("usage and config errors are one line") {
  const TempDir tmp;
  for (const auto& args : std::vector<std::vector<std::string>>{
           {}, {"frobnicate"}, {"pretrain"}, {"eval", "--ckpt"}, {"report"}}) {
    const Outcome o = run(args);
    CHECK(o.status == 2);
    CHECK(o.err.rfind("error: usage: ", 0) == 0);
    CHECK(o.err.find('\n') == o.err.size() - 1);
  }
  const Outcome cfg = run({"gen-data", "--out", tmp / "d", "--set", "data.colour=red"});
  CHECK(cfg.status == 1);
  CHECK(cfg.err.rfind("error: config: unknown key 'data.colour'", 0) == 0);
  CHECK(cfg.err.find('\n') == cfg.err.size() - 1);

  const Outcome missing = run({"pretrain", "--data", tmp / "nope", "--out", tmp / "p"});
  CHECK(missing.status == 1);
  CHECK(missing.err.rfind("error: ", 0) == 0);

  CHECK(run({"--help"}).status == 0);
}
