// Command-line surface for the education-distillation pipeline:
//   partition, train-teachers, distill, evaluate, report.
// Exit codes: 0 success, 2 config error, 3 runtime error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "edukd/edukd.hpp"

namespace fs = std::filesystem;
using namespace edukd;

namespace {

struct GlobalArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<bool> deterministic;
  std::string device = "cpu";
};

RunConfig load_effective_config(const GlobalArgs& args) {
  if (args.config_path.empty()) fail_config("--config <file> is required");
  RunConfig cfg = load_run_config(args.config_path);
  if (args.seed) cfg.seed = *args.seed;
  if (args.out_dir) cfg.output.out_dir = *args.out_dir;
  if (args.deterministic) cfg.output.deterministic = *args.deterministic;
  if (args.device != "cpu")
    fail_config("--device '", args.device, "' is not available; this build "
                "runs on cpu only");
  return cfg;
}

std::string run_dir_of(const RunConfig& cfg) {
  return cfg.output.out_dir + "/" + cfg.output.run_id;
}

int cmd_partition(const GlobalArgs& args) {
  RunConfig cfg = load_effective_config(args);
  validate_run_config(cfg);
  Dataset ds = make_synthetic_dataset(cfg.dataset.synthetic);
  SubDatasetPartition part =
      partition(ds.train_labels, cfg.partition.T, cfg.partition.ratios,
                cfg.partition.mode, cfg.partition.seed);
  const std::string dir = run_dir_of(cfg);
  fs::create_directories(dir);
  const std::string path = dir + "/partition.txt";
  save_partition_file(part, path);

  std::string sizes;
  for (int t = 0; t < part.T; ++t) {
    if (t) sizes += "/";
    sizes += std::to_string(part.groups[t].size());
  }
  std::cout << "partition mode: " << to_string(part.mode) << "\n";
  std::cout << "group sizes: " << sizes << "\n";
  std::cout << "written: " << path << "\n";
  return 0;
}

int cmd_train_teachers(const GlobalArgs& args) {
  RunConfig cfg = load_effective_config(args);
  validate_run_config(cfg);
  const std::string dir = run_dir_of(cfg);
  const std::string part_path = dir + "/partition.txt";
  if (!fs::exists(part_path))
    fail_run("partition file '", part_path,
             "' not found; run the partition subcommand first");
  Dataset ds = make_synthetic_dataset(cfg.dataset.synthetic);
  SubDatasetPartition part = load_partition_file(part_path);

  std::vector<TeacherSummaryRow> summary;
  prepare_teacher_assignment(cfg, teacher_arch_of(cfg), ds, part, dir,
                             &summary);

  const std::string summary_path = dir + "/teachers/summary.tsv";
  std::ofstream out(summary_path, std::ios::trunc);
  out << "subset\tcheckpoint\torigin\tsubset_top1\n";
  std::cout << "subset  origin   subset_top1  checkpoint\n";
  for (const auto& row : summary) {
    const std::string subset =
        row.subset_id == 0 ? "shared" : std::to_string(row.subset_id);
    const std::string origin = row.trained ? "trained" : "loaded";
    out << subset << "\t" << row.path << "\t" << origin << "\t"
        << format_pct(row.subset_accuracy) << "\n";
    std::printf("%-7s %-8s %10s  %s\n", subset.c_str(), origin.c_str(),
                format_pct(row.subset_accuracy).c_str(), row.path.c_str());
  }
  std::cout << "summary written: " << summary_path << "\n";
  return 0;
}

int cmd_distill(const GlobalArgs& args, bool resume,
                const std::string& baseline) {
  RunConfig cfg = load_effective_config(args);
  if (!baseline.empty()) {
    if (baseline != "kd")
      fail_config("--baseline supports only 'kd', got '", baseline, "'");
    validate_run_config(cfg);
    cfg = make_kd_baseline(cfg);
  } else {
    validate_run_config(cfg);
  }

  RunOptions opts;
  opts.resume = resume;
  RunReport report = run_education_distillation(cfg, opts);

  std::cout << "run dir: " << report.run_dir << "\n";
  std::cout << "stage timeline:\n";
  for (const auto& e : report.timeline)
    std::cout << "  stage " << e.stage << ": epochs " << e.start_epoch << ".."
              << e.end_epoch << "\n";
  std::cout << "final top-1 (all): " << format_pct(report.final_top1)
            << "\n";
  for (std::size_t t = 0; t < report.per_subset_top1.size(); ++t)
    std::cout << "final top-1 (subset " << (t + 1)
              << "): " << format_pct(report.per_subset_top1[t]) << "\n";
  std::cout << "artifacts: final.ckpt, metrics.tsv, report/\n";
  return 0;
}

int cmd_evaluate(const GlobalArgs& args, const std::string& ckpt) {
  RunConfig cfg = load_effective_config(args);
  if (ckpt.empty()) fail_config("--checkpoint <file> is required");
  if (!fs::exists(ckpt)) fail_run("checkpoint '", ckpt, "' not found");
  EvalResult result = evaluate_checkpoint(cfg, ckpt);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", result.full_top1);
  std::cout << "stage: " << result.stage << "\n";
  std::cout << "top1 all " << buf << "\n";
  for (std::size_t t = 0; t < result.per_subset_top1.size(); ++t) {
    std::snprintf(buf, sizeof(buf), "%.6f", result.per_subset_top1[t]);
    std::cout << "top1 subset" << (t + 1) << " " << buf << "\n";
  }
  return 0;
}

int cmd_report(const std::string& run_dir) {
  if (run_dir.empty()) fail_config("--run <dir> is required");
  const std::string metrics_path = run_dir + "/metrics.tsv";
  if (!fs::exists(metrics_path))
    fail_run("metrics log '", metrics_path, "' not found");
  auto records = MetricsLog::read_metrics_file(metrics_path);
  ForgettingMatrix matrix = forgetting_matrix(records);
  ReportPaths paths = render_report(records, matrix, run_dir + "/report");
  std::cout << render_forgetting_table(matrix,
                                       "Per-sub-dataset accuracy at stage "
                                       "ends");
  std::cout << "metrics export: " << paths.metrics_export << "\n";
  std::cout << "table: " << paths.forgetting_table << "\n";
  for (const auto& p : paths.plots) std::cout << "plot: " << p << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"education distillation trainer"};
  app.require_subcommand(1);
  app.fallthrough(true);

  GlobalArgs args;
  std::uint64_t seed_arg = 0;
  std::string out_dir_arg;
  bool deterministic_flag = false, no_deterministic_flag = false;
  app.add_option("--config", args.config_path, "run config (JSON)");
  auto* seed_opt =
      app.add_option("--seed", seed_arg, "override the run seed");
  auto* out_opt =
      app.add_option("--out-dir", out_dir_arg, "override output.out_dir");
  auto* det_opt = app.add_flag("--deterministic", deterministic_flag,
                               "force deterministic mode");
  auto* nodet_opt = app.add_flag("--no-deterministic", no_deterministic_flag,
                                 "disable deterministic mode");
  app.add_option("--device", args.device, "compute device (cpu)");

  auto* partition_cmd =
      app.add_subcommand("partition", "create and store the sub-dataset "
                                      "partition");
  auto* teachers_cmd = app.add_subcommand(
      "train-teachers", "train or validate one teacher per sub-dataset");
  auto* distill_cmd =
      app.add_subcommand("distill", "run staged education distillation");
  bool resume = false;
  std::string baseline;
  distill_cmd->add_flag("--resume", resume,
                        "continue from the newest checkpoint");
  distill_cmd->add_option("--baseline", baseline,
                          "run a baseline instead (kd = single-stage "
                          "vanilla KD)");
  auto* evaluate_cmd =
      app.add_subcommand("evaluate", "evaluate a checkpoint on the test set");
  std::string ckpt_path;
  evaluate_cmd->add_option("--checkpoint", ckpt_path, "checkpoint file");
  auto* report_cmd =
      app.add_subcommand("report", "regenerate tables and plots from a run "
                                   "directory");
  std::string run_dir;
  report_cmd->add_option("--run", run_dir, "run directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (*seed_opt) args.seed = seed_arg;
  if (*out_opt) args.out_dir = out_dir_arg;
  if (*det_opt) args.deterministic = true;
  if (*nodet_opt) args.deterministic = false;

  try {
    if (partition_cmd->parsed()) return cmd_partition(args);
    if (teachers_cmd->parsed()) return cmd_train_teachers(args);
    if (distill_cmd->parsed()) return cmd_distill(args, resume, baseline);
    if (evaluate_cmd->parsed()) return cmd_evaluate(args, ckpt_path);
    if (report_cmd->parsed()) return cmd_report(run_dir);
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
