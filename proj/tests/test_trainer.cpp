#include <catch2/catch_amalgamated.hpp>

#include <fstream>

#include "test_helpers.hpp"

using namespace edukd;
using edukd::test::tiny_run_config;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

int count_metric(const std::vector<MetricsRecord>& records,
                 const std::string& name) {
  int n = 0;
  for (const auto& r : records)
    if (r.metric == name) ++n;
  return n;
}

// Tracks frozen parameter values from each advance onward and verifies
// bitwise conservation at every subsequent epoch.
struct FreezeWatch : RunObserver {
  std::map<std::string, Tensor> frozen_values;
  int violations = 0;

  void on_advance(const RunState&, const RunState& after) override {
    frozen_values.clear();
    for (auto& p : after.model->params())
      if (after.model->frozen_param_ids.count(p.name))
        frozen_values[p.name] = *p.value;

    // optimizer state must cover exactly the unfrozen set
    REQUIRE(after.optimizer != nullptr);
    const auto names = after.optimizer->param_names();
    for (const auto& n : names)
      REQUIRE(after.model->frozen_param_ids.count(n) == 0);
    REQUIRE(names.size() == after.model->params().size() -
                                after.model->frozen_param_ids.size());
  }

  void on_epoch_end(const RunState& st) override {
    for (auto& p : st.model->params()) {
      auto it = frozen_values.find(p.name);
      if (it != frozen_values.end() && it->second.data != p.value->data)
        ++violations;
    }
  }
};

}  // namespace

TEST_CASE("tiny run: events, triangular evals, artifacts") {
  const std::string dir = edukd::test::scratch_dir("trainer-tiny");
  RunConfig cfg = tiny_run_config(dir, "tiny");
  FreezeWatch watch;
  RunOptions opts;
  opts.observer = &watch;
  RunReport report = run_education_distillation(cfg, opts);

  SECTION("exactly T-1 advance events plus one restoration") {
    REQUIRE(count_metric(report.records, "event_advance") == 2);
    REQUIRE(count_metric(report.records, "event_restore") == 1);
  }

  SECTION("timeline follows the fixed advance epochs") {
    REQUIRE(report.timeline.size() == 3);
    REQUIRE(report.timeline[0].stage == 1);
    REQUIRE(report.timeline[0].start_epoch == 0);
    REQUIRE(report.timeline[0].end_epoch == 2);
    REQUIRE(report.timeline[1].start_epoch == 3);
    REQUIRE(report.timeline[1].end_epoch == 5);
    REQUIRE(report.timeline[2].start_epoch == 6);
    REQUIRE(report.timeline[2].end_epoch == 8);
  }

  SECTION("per-subset accuracy rows exist for every subset <= stage") {
    for (const auto& r : report.records)
      if (r.split == "test" && r.metric == "top1" && r.subset_id > 0)
        REQUIRE(r.subset_id <= r.stage);
    // every eval epoch carries rows for all subsets <= its stage
    std::map<int, std::pair<int, int>> by_epoch;  // epoch -> (stage, count)
    for (const auto& r : report.records)
      if (r.split == "test" && r.metric == "top1" && r.subset_id > 0) {
        by_epoch[r.epoch].first = r.stage;
        by_epoch[r.epoch].second++;
      }
    REQUIRE(by_epoch.size() == 9);  // eval_every = 1
    for (const auto& [epoch, info] : by_epoch)
      REQUIRE(info.second == info.first);
  }

  SECTION("freeze conservation held at every epoch") {
    REQUIRE(watch.violations == 0);
    REQUIRE_FALSE(watch.frozen_values.empty());
  }

  SECTION("final checkpoint loads into the plain reference student") {
    CheckpointData ck = load_checkpoint(dir + "/tiny/final.ckpt");
    REQUIRE(ck.kind == "final");
    REQUIRE(ck.stage == 3);
    auto reference = build_reference_student<float>(student_spec_of(cfg), 0);
    std::set<std::string> want, got;
    for (auto& p : named_params(*reference)) want.insert(p.name);
    for (const auto& [name, t] : ck.params) got.insert(name);
    REQUIRE(want == got);  // zero missing, zero unexpected

    std::set<std::string> want_buf, got_buf;
    for (auto& b : named_buffers(*reference)) want_buf.insert(b.name);
    for (const auto& [name, t] : ck.buffers) got_buf.insert(name);
    REQUIRE(want_buf == got_buf);
  }

  SECTION("metrics log uniqueness invariant") {
    MetricsLog::check_uniqueness(report.records);
  }

  SECTION("fingerprint export matches the reference student") {
    auto reference = build_reference_student<float>(student_spec_of(cfg), 0);
    REQUIRE(slurp(dir + "/tiny/fingerprint.txt") ==
            fingerprint_text(fingerprint_lines(*reference)));
  }

  SECTION("lr rows follow the schedule") {
    for (const auto& r : report.records)
      if (r.metric == "lr") REQUIRE(r.value == lr_at(r.epoch, cfg.optimizer));
  }
}

TEST_CASE("two deterministic runs produce identical metrics logs") {
  const std::string dir = edukd::test::scratch_dir("trainer-det");
  RunConfig a = tiny_run_config(dir + "/a", "det");
  RunConfig b = tiny_run_config(dir + "/b", "det");
  run_education_distillation(a);
  run_education_distillation(b);
  REQUIRE(slurp(dir + "/a/det/metrics.tsv") ==
          slurp(dir + "/b/det/metrics.tsv"));
}

TEST_CASE("interrupt and resume reproduces the uninterrupted run") {
  const std::string dir = edukd::test::scratch_dir("trainer-resume");
  RunConfig full = tiny_run_config(dir + "/full", "res");
  run_education_distillation(full);

  RunConfig split = tiny_run_config(dir + "/split", "res");
  RunOptions interrupt;
  interrupt.stop_after_epoch = 4;  // stop mid stage 2
  RunReport partial = run_education_distillation(split, interrupt);
  REQUIRE(partial.interrupted);

  RunOptions resume;
  resume.resume = true;
  RunReport resumed = run_education_distillation(split, resume);
  REQUIRE_FALSE(resumed.interrupted);

  REQUIRE(slurp(dir + "/full/res/metrics.tsv") ==
          slurp(dir + "/split/res/metrics.tsv"));

  SECTION("final checkpoints agree bitwise") {
    REQUIRE(slurp(dir + "/full/res/final.ckpt") ==
            slurp(dir + "/split/res/final.ckpt"));
  }

  SECTION("resume without a checkpoint fails") {
    RunConfig empty = tiny_run_config(dir + "/empty", "res");
    RunOptions r;
    r.resume = true;
    REQUIRE_THROWS_AS(run_education_distillation(empty, r), run_error);
  }
}

TEST_CASE("evaluate matches the last logged test accuracy exactly") {
  const std::string dir = edukd::test::scratch_dir("trainer-eval");
  RunConfig cfg = tiny_run_config(dir, "ev");
  RunReport report = run_education_distillation(cfg);

  EvalResult eval = evaluate_checkpoint(cfg, dir + "/ev/final.ckpt");
  REQUIRE(eval.stage == 3);
  REQUIRE(eval.full_top1 == Catch::Approx(report.final_top1).margin(1e-9));
  for (int t = 1; t <= 3; ++t)
    REQUIRE(eval.per_subset_top1[t - 1] ==
            Catch::Approx(report.per_subset_top1[t - 1]).margin(1e-9));

  SECTION("stage checkpoints evaluate too") {
    EvalResult stage1 = evaluate_checkpoint(cfg, dir + "/ev/stage1_epoch0.ckpt");
    REQUIRE(stage1.stage == 1);
  }

  SECTION("mismatched class count gives a shape error") {
    RunConfig wrong = cfg;
    wrong.dataset.synthetic.classes = 5;
    wrong.partition.T = 3;
    REQUIRE_THROWS_WITH(
        evaluate_checkpoint(wrong, dir + "/ev/final.ckpt"),
        Catch::Matchers::ContainsSubstring("shape"));
  }
}

TEST_CASE("non-finite loss aborts with a diagnostic checkpoint") {
  const std::string dir = edukd::test::scratch_dir("trainer-nan");
  // healthy pass first so teachers and the logit cache land on disk
  RunConfig cfg = tiny_run_config(dir, "nan");
  cfg.teacher.epochs = 2;
  cfg.schedule.total_epochs = 3;
  cfg.schedule.advance_epochs = {1, 2};
  run_education_distillation(cfg);

  // rerun with an exploding student; teachers load from their checkpoints
  RunConfig bad = cfg;
  bad.optimizer.init_lr = 1e30;
  REQUIRE_THROWS_WITH(run_education_distillation(bad),
                      Catch::Matchers::ContainsSubstring("non-finite"));
  bool found = false;
  for (const auto& e : std::filesystem::directory_iterator(dir + "/nan"))
    if (e.path().filename().string().rfind("diagnostic_epoch", 0) == 0)
      found = true;
  REQUIRE(found);
  REQUIRE(std::filesystem::exists(dir + "/nan/ERROR"));

  SECTION("teacher divergence aborts on its own") {
    RunConfig t = tiny_run_config(dir + "/t", "tnan");
    t.optimizer.init_lr = 1e30;
    t.teacher.epochs = 2;
    REQUIRE_THROWS_WITH(run_education_distillation(t),
                        Catch::Matchers::ContainsSubstring("diverged"));
  }
}

TEST_CASE("plateau mode advances early but never past the ceiling") {
  SECTION("immediate plateau advances after the patience window") {
    const std::string dir = edukd::test::scratch_dir("trainer-plateau1");
    RunConfig cfg = tiny_run_config(dir, "pl");
    cfg.schedule.advance_mode = AdvanceMode::Plateau;
    cfg.schedule.advance_epochs = {5, 8};
    cfg.schedule.total_epochs = 10;
    cfg.schedule.plateau.delta = 100.0;  // nothing ever counts as progress
    cfg.schedule.plateau.patience = 2;
    RunReport report = run_education_distillation(cfg);
    REQUIRE(report.timeline.size() == 3);
    REQUIRE(report.timeline[1].start_epoch == 3);
    REQUIRE(report.timeline[2].start_epoch == 6);
  }

  SECTION("patient detector falls back to the fixed epochs") {
    const std::string dir = edukd::test::scratch_dir("trainer-plateau2");
    RunConfig cfg = tiny_run_config(dir, "pl2");
    cfg.schedule.advance_mode = AdvanceMode::Plateau;
    cfg.schedule.plateau.patience = 1000;
    RunReport report = run_education_distillation(cfg);
    REQUIRE(report.timeline[1].start_epoch == 3);
    REQUIRE(report.timeline[2].start_epoch == 6);
  }
}

TEST_CASE("teacher checkpoints are reused instead of retrained") {
  const std::string dir = edukd::test::scratch_dir("trainer-reuse");
  RunConfig cfg = tiny_run_config(dir, "reuse");
  run_education_distillation(cfg);
  const std::string t1 = dir + "/reuse/teachers/teacher_1.ckpt";
  const std::string before = slurp(t1);

  // second run in the same dir: resume off, but teachers already exist
  RunConfig again = cfg;
  std::filesystem::remove(dir + "/reuse/metrics.tsv");
  std::filesystem::remove(dir + "/reuse/final.ckpt");
  run_education_distillation(again);
  REQUIRE(slurp(t1) == before);

  SECTION("train_if_missing=false demands existing checkpoints") {
    RunConfig strict = tiny_run_config(dir + "/strict", "s");
    strict.teacher.train_if_missing = false;
    REQUIRE_THROWS_WITH(run_education_distillation(strict),
                        Catch::Matchers::ContainsSubstring("teacher"));
  }
}
