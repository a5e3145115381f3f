#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cstdio>
#include <fstream>
#include <unistd.h>

#include "test_helpers.hpp"

using namespace edukd;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr
};

CliResult run_cli(const std::string& args) {
  const std::string cmd = std::string(EDUKD_CLI_PATH) + " " + args + " 2>&1";
  std::array<char, 4096> buf{};
  CliResult result;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  while (std::size_t n = fread(buf.data(), 1, buf.size(), pipe))
    result.output.append(buf.data(), n);
  const int status = pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

std::string write_tiny_config(const std::string& dir,
                              const std::string& run_id,
                              int total_epochs = 6,
                              std::vector<int> advance = {2, 4}) {
  RunConfig cfg = edukd::test::tiny_run_config(dir, run_id);
  cfg.schedule.total_epochs = total_epochs;
  cfg.schedule.advance_epochs = std::move(advance);
  cfg.teacher.epochs = 4;
  const std::string path = dir + "/config.json";
  std::ofstream out(path);
  out << config_to_json(cfg).dump(2) << "\n";
  return path;
}

std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::string content((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
  return std::to_string(fnv1a(content));
}

}  // namespace

TEST_CASE("cli: partition subcommand") {
  const std::string dir = edukd::test::scratch_dir("cli-partition");
  const std::string cfg = write_tiny_config(dir, "p1");

  auto r = run_cli("partition --config " + cfg);
  INFO(r.output);
  REQUIRE(r.exit_code == 0);
  REQUIRE(r.output.find("group sizes: 2/2/2") != std::string::npos);
  REQUIRE(std::filesystem::exists(dir + "/p1/partition.txt"));

  SECTION("same seed twice gives an identical file") {
    const std::string digest = file_digest(dir + "/p1/partition.txt");
    auto again = run_cli("partition --config " + cfg);
    REQUIRE(again.exit_code == 0);
    REQUIRE(file_digest(dir + "/p1/partition.txt") == digest);
  }

  SECTION("--seed overrides and is snapshotted separately") {
    auto r2 = run_cli("partition --config " + cfg + " --seed 99");
    REQUIRE(r2.exit_code == 0);
  }

  SECTION("invalid config exits 2 naming the fields") {
    RunConfig bad = edukd::test::tiny_run_config(dir, "bad");
    bad.partition.T = 50;
    bad.partition.ratios.assign(50, 1.0);
    bad.schedule.advance_epochs.clear();
    for (int i = 1; i < 50; ++i) bad.schedule.advance_epochs.push_back(i);
    bad.schedule.total_epochs = 60;
    std::ofstream out(dir + "/bad.json");
    out << config_to_json(bad).dump(2);
    out.close();
    auto rb = run_cli("partition --config " + dir + "/bad.json");
    REQUIRE(rb.exit_code == 2);
    REQUIRE(rb.output.find("partition.T") != std::string::npos);
  }

  SECTION("missing config exits 2") {
    auto rm = run_cli("partition --config /nonexistent.json");
    REQUIRE(rm.exit_code == 2);
  }

  SECTION("100-class 1:1:1 split prints 34/33/33") {
    RunConfig wide = edukd::test::tiny_run_config(dir, "wide");
    wide.dataset.synthetic.classes = 100;
    wide.dataset.synthetic.size = 6;
    wide.dataset.synthetic.train_per_class = 2;
    wide.dataset.synthetic.test_per_class = 1;
    wide.student.blocks[1].reduction = 1;
    wide.student.blocks[2].reduction = 1;
    std::ofstream out(dir + "/wide.json");
    out << config_to_json(wide).dump(2);
    out.close();
    auto rw = run_cli("partition --config " + dir + "/wide.json");
    INFO(rw.output);
    REQUIRE(rw.exit_code == 0);
    REQUIRE(rw.output.find("group sizes: 34/33/33") != std::string::npos);
  }
}

TEST_CASE("cli: train-teachers subcommand") {
  const std::string dir = edukd::test::scratch_dir("cli-teachers");
  const std::string cfg = write_tiny_config(dir, "t1");

  SECTION("requires the partition file") {
    auto r = run_cli("train-teachers --config " + cfg);
    REQUIRE(r.exit_code == 3);
    REQUIRE(r.output.find("partition") != std::string::npos);
  }

  SECTION("writes T checkpoints and a summary with T rows") {
    REQUIRE(run_cli("partition --config " + cfg).exit_code == 0);
    auto r = run_cli("train-teachers --config " + cfg);
    INFO(r.output);
    REQUIRE(r.exit_code == 0);
    for (int t = 1; t <= 3; ++t)
      REQUIRE(std::filesystem::exists(
          concat(dir, "/t1/teachers/teacher_", t, ".ckpt")));
    std::ifstream in(dir + "/t1/teachers/summary.tsv");
    std::string line;
    std::getline(in, line);  // header
    int rows = 0;
    while (std::getline(in, line))
      if (!line.empty()) ++rows;
    REQUIRE(rows == 3);

    // second invocation loads instead of retraining
    auto r2 = run_cli("train-teachers --config " + cfg);
    REQUIRE(r2.exit_code == 0);
    REQUIRE(r2.output.find("loaded") != std::string::npos);
  }
}

TEST_CASE("cli: distill, evaluate, report pipeline") {
  const std::string dir = edukd::test::scratch_dir("cli-distill");
  const std::string cfg = write_tiny_config(dir, "d1");

  auto r = run_cli("distill --config " + cfg);
  INFO(r.output);
  REQUIRE(r.exit_code == 0);
  REQUIRE(std::filesystem::exists(dir + "/d1/final.ckpt"));
  REQUIRE(std::filesystem::exists(dir + "/d1/metrics.tsv"));
  REQUIRE(std::filesystem::exists(dir + "/d1/report/forgetting.md"));
  REQUIRE(std::filesystem::exists(dir + "/d1/config.json"));

  SECTION("evaluate agrees with the logged final accuracy") {
    auto ev = run_cli("evaluate --config " + cfg + " --checkpoint " + dir +
                      "/d1/final.ckpt");
    INFO(ev.output);
    REQUIRE(ev.exit_code == 0);

    // pull the printed full-set accuracy
    const auto pos = ev.output.find("top1 all ");
    REQUIRE(pos != std::string::npos);
    const double printed = std::stod(ev.output.substr(pos + 9));

    double logged = -1;
    for (const auto& rec :
         MetricsLog::read_metrics_file(dir + "/d1/metrics.tsv"))
      if (rec.split == "test" && rec.metric == "top1" && rec.subset_id == 0)
        logged = rec.value;
    REQUIRE(printed == Catch::Approx(logged).margin(1e-6));
  }

  SECTION("report is idempotent") {
    auto r1 = run_cli("report --run " + dir + "/d1");
    REQUIRE(r1.exit_code == 0);
    const std::string d1 = file_digest(dir + "/d1/report/forgetting.md");
    const std::string p1 = file_digest(dir + "/d1/report/accuracy_overall.svg");
    auto r2 = run_cli("report --run " + dir + "/d1");
    REQUIRE(r2.exit_code == 0);
    REQUIRE(file_digest(dir + "/d1/report/forgetting.md") == d1);
    REQUIRE(file_digest(dir + "/d1/report/accuracy_overall.svg") == p1);
  }

  SECTION("evaluate with missing artifacts exits 3") {
    auto bad = run_cli("evaluate --config " + cfg + " --checkpoint " + dir +
                       "/d1/nope.ckpt");
    REQUIRE(bad.exit_code == 3);
  }

  SECTION("report on a missing run dir exits 3") {
    auto bad = run_cli("report --run " + dir + "/missing");
    REQUIRE(bad.exit_code == 3);
  }

  SECTION("lock file blocks a second live run") {
    std::ofstream lock(dir + "/d1/.lock");
    lock << ::getpid() << "\n";
    lock.close();
    auto blocked = run_cli("distill --config " + cfg);
    REQUIRE(blocked.exit_code == 3);
    REQUIRE(blocked.output.find("locked") != std::string::npos);
    std::filesystem::remove(dir + "/d1/.lock");
  }
}

TEST_CASE("cli: distill --resume completes an interrupted run") {
  const std::string dir = edukd::test::scratch_dir("cli-resume");

  // uninterrupted reference via the library
  RunConfig full = edukd::test::tiny_run_config(dir + "/full", "r");
  run_education_distillation(full);

  // interrupted run in a second directory, finished through the CLI flag
  RunConfig part = edukd::test::tiny_run_config(dir + "/part", "r");
  RunOptions interrupt;
  interrupt.stop_after_epoch = 4;
  run_education_distillation(part, interrupt);

  const std::string cfg_path = dir + "/part.json";
  std::ofstream out(cfg_path);
  out << config_to_json(part).dump(2);
  out.close();
  auto r = run_cli("distill --config " + cfg_path + " --resume");
  INFO(r.output);
  REQUIRE(r.exit_code == 0);
  REQUIRE(file_digest(dir + "/full/r/metrics.tsv") ==
          file_digest(dir + "/part/r/metrics.tsv"));

  SECTION("--resume with nothing to resume exits 3") {
    RunConfig empty = edukd::test::tiny_run_config(dir + "/empty", "r");
    std::ofstream o(dir + "/empty.json");
    o << config_to_json(empty).dump(2);
    o.close();
    auto bad = run_cli("distill --config " + dir + "/empty.json --resume");
    REQUIRE(bad.exit_code == 3);
  }
}

TEST_CASE("cli: kd baseline flag") {
  const std::string dir = edukd::test::scratch_dir("cli-kd");
  const std::string cfg = write_tiny_config(dir, "k1");
  auto r = run_cli("distill --config " + cfg + " --baseline kd");
  INFO(r.output);
  REQUIRE(r.exit_code == 0);
  REQUIRE(std::filesystem::exists(dir + "/k1-kd/final.ckpt"));
  REQUIRE(std::filesystem::exists(dir + "/k1-kd/teachers/teacher_shared.ckpt"));

  // single-stage run: no advance events in the log
  auto records = MetricsLog::read_metrics_file(dir + "/k1-kd/metrics.tsv");
  for (const auto& rec : records) {
    REQUIRE(rec.metric != "event_advance");
    REQUIRE(rec.stage == 1);
  }

  SECTION("unsupported baseline name exits 2") {
    auto bad = run_cli("distill --config " + cfg + " --baseline foo");
    REQUIRE(bad.exit_code == 2);
  }
}

TEST_CASE("cli: global flags") {
  const std::string dir = edukd::test::scratch_dir("cli-flags");
  const std::string cfg = write_tiny_config(dir, "g1");

  SECTION("--device rejects anything but cpu") {
    auto r = run_cli("partition --config " + cfg + " --device cuda");
    REQUIRE(r.exit_code == 2);
  }

  SECTION("--out-dir overrides the config") {
    auto r = run_cli("partition --config " + cfg + " --out-dir " + dir +
                     "/alt");
    REQUIRE(r.exit_code == 0);
    REQUIRE(std::filesystem::exists(dir + "/alt/g1/partition.txt"));
  }

  SECTION("unknown subcommand exits 2") {
    auto r = run_cli("frobnicate");
    REQUIRE(r.exit_code == 2);
  }

  SECTION("--seed changes the partition") {
    REQUIRE(run_cli("partition --config " + cfg).exit_code == 0);
    const std::string base = file_digest(dir + "/g1/partition.txt");
    // partition seed comes from its own section, so the run seed must not
    // change it; rerun with --seed and expect the same file
    REQUIRE(run_cli("partition --config " + cfg + " --seed 777").exit_code ==
            0);
    REQUIRE(file_digest(dir + "/g1/partition.txt") == base);
  }
}
