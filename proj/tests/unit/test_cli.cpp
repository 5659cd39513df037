#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include "batchal/loop.hpp"
#include "temp_dir.hpp"

using namespace batchal;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + BATCHAL_CLI_PATH + "\" " + args + " >\"" +
                          (log.string() + ".out") + "\" 2>\"" + log.string() + "\"";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

const char* kTinyConfig = R"({
  "dataset": {"synthetic": {"n": 25, "d": 4, "latent_dim": 2, "seed": 3}},
  "triplet_count": 400,
  "batch_size": 5, "dropout_samples": 8, "dropout_p": 0.1, "init_pool": 15,
  "model": {"hidden_layers": [6], "embedding_dim": 2},
  "train": {"pretrain_epochs": 10, "epochs": 3, "learning_rate": 0.01},
  "strategies": ["joint_entropy", "random", "joint_entropy"],
  "rounds": ROUNDS, "seeds": [1, 2]
})";

fs::path tiny_config(const fs::path& dir, int rounds) {
  std::string text = kTinyConfig;
  text.replace(text.find("ROUNDS"), 6, std::to_string(rounds));
  write(dir / "config.json", text);
  return dir / "config.json";
}

}  // namespace

TEST_CASE("synth is deterministic down to the byte") {
  support::TempDir tmp("batchal_cli");
  const std::string common = " synth --n 20 --d 4 --latent 2 --triplets 100 --seed 9 --quiet";
  REQUIRE(run_cli("--out \"" + (tmp.path / "a").string() + "\"" + common, tmp.path / "a.log") == 0);
  REQUIRE(run_cli("--out \"" + (tmp.path / "b").string() + "\"" + common, tmp.path / "b.log") == 0);
  for (const char* f : {"features.csv", "dissim.csv", "triplets.jsonl"}) {
    CAPTURE(f);
    const std::string a = slurp(tmp.path / "a" / f);
    CHECK(!a.empty());
    CHECK(a == slurp(tmp.path / "b" / f));
  }
}

TEST_CASE("usage errors exit with status 2") {
  support::TempDir tmp("batchal_cli");
  const fs::path log = tmp.path / "err.log";
  CHECK(run_cli("--out \"" + tmp.path.string() + "\" synth --d 3 --latent 4", log) == 2);
  CHECK(slurp(log).find("--latent") != std::string::npos);
  CHECK(run_cli("run", log) == 2);
  CHECK(run_cli("frobnicate", log) == 2);
  write(tmp.path / "bad.json", "{\n  \"dataset\": {\"synthetic\": {}},\n  \"strategies\": [\"random\"],\n  \"rounds_\": 1\n}");
  CHECK(run_cli("--config \"" + (tmp.path / "bad.json").string() + "\" run", log) == 2);
  CHECK(slurp(log).find("rounds_") != std::string::npos);
}

TEST_CASE("run with zero rounds writes only the pretrained rows") {
  support::TempDir tmp("batchal_cli");
  const fs::path cfg = tiny_config(tmp.path, 0);
  REQUIRE(run_cli("--config \"" + cfg.string() + "\" --out \"" + tmp.path.string() + "\" --quiet run",
                  tmp.path / "run.log") == 0);
  CHECK(slurp(tmp.path / "run.log").find("warning") != std::string::npos);
  std::ifstream in(tmp.path / "metrics.csv");
  const auto rows = read_metrics_csv(in);
  CHECK(rows.size() == 4);
  for (const MetricsRow& r : rows) CHECK(r.round == 0);
  CHECK(fs::exists(tmp.path / "rounds.log"));
}

TEST_CASE("compare ranks strategies and its aggregates match the raw rows") {
  support::TempDir tmp("batchal_cli");
  const fs::path cfg = tiny_config(tmp.path, 2);
  REQUIRE(run_cli("--config \"" + cfg.string() + "\" --out \"" + tmp.path.string() + "\" --quiet compare",
                  tmp.path / "cmp.log") == 0);
  std::ifstream metrics(tmp.path / "metrics.csv");
  const auto rows = read_metrics_csv(metrics);
  CHECK(rows.size() == 2 * 2 * 3);
  std::ifstream agg_in(tmp.path / "aggregate.csv");
  const auto written = read_aggregate_csv(agg_in);
  const auto recomputed = aggregate(rows);
  REQUIRE(written.size() == recomputed.size());
  for (std::size_t n = 0; n < written.size(); ++n) {
    CHECK(written[n].strategy == recomputed[n].strategy);
    CHECK(written[n].round == recomputed[n].round);
    CHECK(written[n].mean_accuracy == recomputed[n].mean_accuracy);
    CHECK(written[n].std_accuracy == recomputed[n].std_accuracy);
  }
  std::ifstream cmp_in(tmp.path / "compare.csv");
  const auto finals = read_aggregate_csv(cmp_in);
  REQUIRE(finals.size() == 2);
  CHECK(finals[0].mean_accuracy >= finals[1].mean_accuracy);
  for (const AggregateRow& a : finals) CHECK(a.round == 2);
}

TEST_CASE("diagnose writes QQ and histogram tables") {
  support::TempDir tmp("batchal_cli");
  const fs::path cfg = tiny_config(tmp.path, 1);
  REQUIRE(run_cli("--config \"" + cfg.string() + "\" --out \"" + tmp.path.string() +
                      "\" --quiet diagnose --triplet 3 --samples 200",
                  tmp.path / "diag.log") == 0);
  const std::string qq = slurp(tmp.path / "qq.csv");
  CHECK(qq.rfind("theoretical,observed\n", 0) == 0);
  CHECK(std::count(qq.begin(), qq.end(), '\n') == 201);
  CHECK(slurp(tmp.path / "histogram.csv").rfind("lower,upper,count,density,normal_density\n", 0) == 0);
}
