#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "sbr/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string g_binary;
fs::path g_work;

struct RunResult {
  int code = -1;
  std::string out;
};

RunResult run(const std::string& args) {
  const fs::path out_file = g_work / "cmd_out.txt";
  const std::string cmd = g_binary + " " + args + " >" + out_file.string() + " 2>&1";
  const int raw = std::system(cmd.c_str());
  RunResult r;
  r.code = raw == -1 ? -1 : WEXITSTATUS(raw);
  std::ifstream in(out_file);
  std::stringstream ss;
  ss << in.rdbuf();
  r.out = ss.str();
  return r;
}

void write_events(const fs::path& path, int n_users = 50, int vocab = 15) {
  sbr::Rng rng(5);
  std::ofstream f(path);
  f << "session_id\titem_id\ttimestamp\n";
  for (int u = 0; u < n_users; ++u) {
    const std::int64_t t0 = 1000 + std::int64_t(u) * 5000;
    int cur = int(rng.uniform_int(vocab));
    const int len = 3 + int(rng.uniform_int(5));
    for (int j = 0; j < len; ++j) {
      f << "u" << u << "\titem" << cur << "\t" << (t0 + j * 60) << "\n";
      cur = (cur + 1) % vocab;
    }
  }
}

}  // namespace

TEST_CASE("version and help") {
  CHECK(run("--version").code == 0);
  RunResult h = run("--help");
  CHECK(h.code == 0);
  CHECK(h.out.find("preprocess") != std::string::npos);
  CHECK(h.out.find("recommend") != std::string::npos);
  CHECK(run("").code != 0);             // subcommand required
  CHECK(run("nonsense").code != 0);
}

TEST_CASE("full pipeline: preprocess, train, evaluate, recommend, report") {
  const fs::path events = g_work / "events.tsv";
  write_events(events);
  const std::string pre_dir = (g_work / "pre").string();
  RunResult pre = run("preprocess --input " + events.string() + " --out " + pre_dir +
                      " --seed 3 --min-item-count 2 --test-fraction 0.2 "
                      "--val-fraction 0.15");
  REQUIRE(pre.code == 0);
  json stats = json::parse(pre.out);
  CHECK(stats["sessions"].get<int>() > 0);
  CHECK(stats["train_sessions"].get<int>() > 0);
  CHECK(stats["test_sessions"].get<int>() > 0);
  CHECK(fs::exists(fs::path(pre_dir) / "corpus.sbrc"));
  CHECK(fs::exists(fs::path(pre_dir) / "stats.json"));

  const std::string run_dir = (g_work / "run").string();
  RunResult tr = run("train --corpus " + pre_dir + "/corpus.sbrc --out " + run_dir +
                     " --seed 3 --embed-dim 8 --hidden-dim 8 --session-dropout 0 "
                     "--batch-size 16 --lr 0.01 --max-epochs 4 --patience 4");
  REQUIRE(tr.code == 0);
  for (const char* f : {"model_hr.sbrm", "model_mrr.sbrm", "train_log.jsonl",
                        "summary.json", "test_by_hr.json", "test_by_hr.csv"})
    CHECK(fs::exists(fs::path(run_dir) / f));
  // the epoch log is one json object per line
  std::ifstream log_in(fs::path(run_dir) / "train_log.jsonl");
  std::string line;
  int epochs = 0;
  while (std::getline(log_in, line)) {
    json rec = json::parse(line);
    CHECK(rec["epoch"].get<int>() == ++epochs);
    CHECK(rec.contains("train_loss"));
    CHECK(rec.contains("val_hr"));
  }
  CHECK(epochs == 4);

  const std::string ev_dir = (g_work / "ev").string();
  RunResult ev = run("evaluate --corpus " + pre_dir + "/corpus.sbrc --model " + run_dir +
                     "/model_hr.sbrm --split test --out " + ev_dir);
  REQUIRE(ev.code == 0);
  json metrics = json::parse(ev.out);
  CHECK(metrics["hr_at_k"].get<double>() >= 0.0);
  CHECK(metrics["hr_at_k"].get<double>() <= 1.0);
  CHECK(fs::exists(fs::path(ev_dir) / "metrics.csv"));

  for (const char* baseline : {"pop", "spop", "itemknn"}) {
    RunResult b = run("evaluate --corpus " + pre_dir + "/corpus.sbrc --baseline " +
                      baseline + " --out " + ev_dir);
    CHECK(b.code == 0);
  }

  const std::string rec_dir = (g_work / "rec").string();
  const std::string idx = (g_work / "idx.sbri").string();
  RunResult r1 = run("recommend --model " + run_dir + "/model_hr.sbrm --items 1,2,3 "
                     "-L 5 --build-index " + idx + " --out " + rec_dir);
  REQUIRE(r1.code == 0);
  json recs = json::parse(r1.out);
  REQUIRE(recs.size() == 5);
  CHECK(recs[0].contains("item"));
  CHECK(recs[0].contains("score"));
  // scores descend
  for (std::size_t i = 1; i < recs.size(); ++i)
    CHECK(recs[i - 1]["score"].get<double>() >= recs[i]["score"].get<double>());
  CHECK(fs::exists(idx));

  // served from the index, the answers match the exact path
  RunResult r2 = run("recommend --model " + run_dir + "/model_hr.sbrm --items 1,2,3 "
                     "-L 5 --index " + idx + " --out " + rec_dir);
  REQUIRE(r2.code == 0);
  RunResult r3 = run("recommend --model " + run_dir + "/model_hr.sbrm --items 1,2,3 "
                     "-L 5 --out " + rec_dir);
  REQUIRE(r3.code == 0);
  CHECK(json::parse(r2.out) == json::parse(r3.out));

  RunResult rep = run("report --run " + run_dir);
  REQUIRE(rep.code == 0);
  json report = json::parse(rep.out);
  CHECK(report["epochs"].get<int>() == 4);
  CHECK(report.contains("summary.json"));
}

TEST_CASE("train is reproducible across invocations") {
  const fs::path events = g_work / "events2.tsv";
  write_events(events, 30, 10);
  const std::string pre_dir = (g_work / "pre2").string();
  REQUIRE(run("preprocess --input " + events.string() + " --out " + pre_dir +
              " --seed 1 --min-item-count 2 --test-fraction 0.2 --val-fraction 0.2")
              .code == 0);
  auto train_once = [&](const std::string& dir) {
    REQUIRE(run("train --corpus " + pre_dir + "/corpus.sbrc --out " + dir +
                " --seed 9 --embed-dim 6 --hidden-dim 6 --batch-size 8 "
                "--max-epochs 2 --patience 2")
                .code == 0);
    std::ifstream in(fs::path(dir) / "summary.json");
    return std::string((std::istreambuf_iterator<char>(in)), {});
  };
  CHECK(train_once((g_work / "runA").string()) == train_once((g_work / "runB").string()));
}

TEST_CASE("config file supplies defaults, flags win") {
  const fs::path events = g_work / "events3.tsv";
  write_events(events, 25, 8);
  const fs::path cfg = g_work / "opts.cfg";
  {
    std::ofstream f(cfg);
    f << "seed=7\n";
    f << "out=" << (g_work / "cfg_out").string() << "\n";
  }
  RunResult a = run("preprocess --config " + cfg.string() + " --input " +
                    events.string() + " --min-item-count 1 --test-fraction 0.2 "
                    "--val-fraction 0.2 --dry-run");
  REQUIRE(a.code == 0);
  json plan = json::parse(a.out);
  CHECK(plan["seed"].get<int>() == 7);
  CHECK(plan["out"].get<std::string>() == (g_work / "cfg_out").string());
  // explicit flag beats the file
  RunResult b = run("preprocess --config " + cfg.string() + " --input " +
                    events.string() + " --seed 11 --min-item-count 1 "
                    "--test-fraction 0.2 --val-fraction 0.2 --dry-run");
  REQUIRE(b.code == 0);
  CHECK(json::parse(b.out)["seed"].get<int>() == 11);
}

TEST_CASE("dry run plans without writing artifacts") {
  const fs::path events = g_work / "events4.tsv";
  write_events(events, 25, 8);
  const std::string out = (g_work / "dry").string();
  RunResult r = run("preprocess --input " + events.string() + " --out " + out +
                    " --dry-run");
  REQUIRE(r.code == 0);
  CHECK(json::parse(r.out)["command"] == "preprocess");
  CHECK_FALSE(fs::exists(fs::path(out) / "corpus.sbrc"));
}

TEST_CASE("clean failures for bad inputs") {
  RunResult miss = run("preprocess --input /nonexistent.tsv --out " +
                       (g_work / "x").string());
  CHECK(miss.code == 1);
  CHECK(miss.out.find("error:") != std::string::npos);
  CHECK(run("train --corpus /nonexistent.sbrc").code == 1);
  CHECK(run("recommend --model /nonexistent.sbrm --items 1,2").code == 1);
  CHECK(run("report --run " + (g_work / "empty_dir").string()).code == 1);
  // evaluate with both model and baseline is ambiguous
  const fs::path events = g_work / "events5.tsv";
  write_events(events, 25, 8);
  const std::string pre_dir = (g_work / "pre5").string();
  REQUIRE(run("preprocess --input " + events.string() + " --out " + pre_dir +
              " --min-item-count 1 --test-fraction 0.2 --val-fraction 0.2")
              .code == 0);
  CHECK(run("evaluate --corpus " + pre_dir + "/corpus.sbrc").code == 1);
}

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: test_cli <sbr-binary> [doctest args]\n");
    return 2;
  }
  g_binary = argv[1];
  g_work = fs::temp_directory_path() / "sbr_cli_test";
  fs::remove_all(g_work);
  fs::create_directories(g_work);
  fs::create_directories(g_work / "empty_dir");
  doctest::Context ctx;
  ctx.applyCommandLine(argc - 1, argv + 1);
  const int rc = ctx.run();
  fs::remove_all(g_work);
  return rc;
}
