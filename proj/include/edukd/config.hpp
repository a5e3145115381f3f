#pragma once

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "edukd/dataset.hpp"
#include "edukd/loss.hpp"
#include "edukd/model.hpp"
#include "edukd/optim.hpp"
#include "edukd/partition.hpp"
#include "edukd/schedule.hpp"
#include "edukd/teacher.hpp"

namespace edukd {

using json = nlohmann::json;

namespace cfg_detail {

inline void check_keys(const json& j, const std::string& path,
                       const std::set<std::string>& allowed) {
  if (!j.is_object()) fail_config("'", path, "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      fail_config("unknown key '", path, ".", it.key(), "' in config");
}

template <typename T>
T read(const json& j, const std::string& path, const std::string& key,
       const T& fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail_config("bad value for '", path, ".", key, "': ", e.what());
  }
}

}  // namespace cfg_detail

struct ArchConfig {
  int stem_channels = 8;
  std::vector<BlockSpec> blocks;
  int decoder_channels = 0;  // 0 = last block's channels
};

struct DatasetConfig {
  std::string name = "synthetic";
  SyntheticConfig synthetic;
};

struct TeacherSection {
  TeacherMode mode = TeacherMode::PerSubsetTrained;
  bool has_arch = false;
  ArchConfig arch;  // falls back to the student arch
  int epochs = 30;
  bool train_if_missing = true;
  bool cache_logits = true;
  std::string checkpoint;  // optional pre-trained ckpt (shared mode)
};

struct PartitionSection {
  int T = 3;
  std::vector<double> ratios = {1, 1, 1};
  PartitionMode mode = PartitionMode::ClassDisjoint;
  std::uint64_t seed = 1;
};

struct ScheduleSection {
  std::vector<int> advance_epochs = {50, 80};
  int total_epochs = 240;
  AdvanceMode advance_mode = AdvanceMode::FixedEpoch;
  PlateauConfig plateau;
  bool has_allocation = false;
  std::vector<std::vector<std::string>> block_allocation;
};

struct OutputSection {
  std::string out_dir = "runs";
  std::string run_id = "run";
  bool deterministic = true;
  int eval_every = 1;
  int checkpoint_every = 1;
};

struct RunConfig {
  std::uint64_t seed = 1;
  DatasetConfig dataset;
  ArchConfig student;
  TeacherSection teacher;
  PartitionSection partition;
  ScheduleSection schedule;
  DistillConfig loss;
  OptimizerConfig optimizer;
  OutputSection output;
  bool baseline_kd = false;  // set by the CLI flag, not a config key
};

namespace cfg_detail {

inline ArchConfig parse_arch(const json& j, const std::string& path) {
  check_keys(j, path, {"stem_channels", "blocks", "decoder_channels"});
  ArchConfig arch;
  arch.stem_channels = read(j, path, "stem_channels", arch.stem_channels);
  arch.decoder_channels =
      read(j, path, "decoder_channels", arch.decoder_channels);
  if (!j.contains("blocks"))
    fail_config("'", path, ".blocks' is required");
  if (!j.at("blocks").is_array() || j.at("blocks").empty())
    fail_config("'", path, ".blocks' must be a non-empty array");
  int auto_id = 0;
  for (const auto& bj : j.at("blocks")) {
    const std::string bpath = concat(path, ".blocks[", auto_id, "]");
    check_keys(bj, bpath, {"id", "kind", "channels", "reduction"});
    BlockSpec b;
    b.id = read<std::string>(bj, bpath, "id", concat("b", auto_id + 1));
    b.kind = block_kind_from_string(
        read<std::string>(bj, bpath, "kind", "conv"));
    if (!bj.contains("channels"))
      fail_config("'", bpath, ".channels' is required");
    b.out_channels = read(bj, bpath, "channels", 0);
    b.reduction = read(bj, bpath, "reduction", 1);
    arch.blocks.push_back(b);
    ++auto_id;
  }
  return arch;
}

inline json arch_to_json(const ArchConfig& arch) {
  json j;
  j["stem_channels"] = arch.stem_channels;
  j["decoder_channels"] = arch.decoder_channels;
  j["blocks"] = json::array();
  for (const auto& b : arch.blocks)
    j["blocks"].push_back({{"id", b.id},
                           {"kind", to_string(b.kind)},
                           {"channels", b.out_channels},
                           {"reduction", b.reduction}});
  return j;
}

}  // namespace cfg_detail

inline RunConfig parse_run_config(const json& root) {
  using namespace cfg_detail;
  check_keys(root, "config",
             {"seed", "dataset", "student", "teacher", "partition", "schedule",
              "loss", "optimizer", "output"});
  RunConfig cfg;
  cfg.seed = read<std::uint64_t>(root, "config", "seed", cfg.seed);

  if (!root.contains("dataset")) fail_config("'dataset' section is required");
  {
    const json& j = root.at("dataset");
    check_keys(j, "dataset",
               {"name", "classes", "channels", "size", "train_per_class",
                "test_per_class", "noise", "seed"});
    cfg.dataset.name = read<std::string>(j, "dataset", "name", "synthetic");
    auto& s = cfg.dataset.synthetic;
    s.classes = read(j, "dataset", "classes", s.classes);
    s.channels = read(j, "dataset", "channels", s.channels);
    s.size = read(j, "dataset", "size", s.size);
    s.train_per_class = read(j, "dataset", "train_per_class",
                             s.train_per_class);
    s.test_per_class = read(j, "dataset", "test_per_class", s.test_per_class);
    s.noise = read(j, "dataset", "noise", s.noise);
    s.seed = read<std::uint64_t>(j, "dataset", "seed", s.seed);
  }

  if (!root.contains("student")) fail_config("'student' section is required");
  cfg.student = parse_arch(root.at("student"), "student");

  if (root.contains("teacher")) {
    const json& j = root.at("teacher");
    check_keys(j, "teacher",
               {"mode", "arch", "epochs", "train_if_missing", "cache_logits",
                "checkpoint"});
    cfg.teacher.mode = teacher_mode_from_string(
        read<std::string>(j, "teacher", "mode", "per-subset-trained"));
    if (j.contains("arch")) {
      cfg.teacher.has_arch = true;
      cfg.teacher.arch = parse_arch(j.at("arch"), "teacher.arch");
    }
    cfg.teacher.epochs = read(j, "teacher", "epochs", cfg.teacher.epochs);
    cfg.teacher.train_if_missing =
        read(j, "teacher", "train_if_missing", cfg.teacher.train_if_missing);
    cfg.teacher.cache_logits =
        read(j, "teacher", "cache_logits", cfg.teacher.cache_logits);
    cfg.teacher.checkpoint =
        read<std::string>(j, "teacher", "checkpoint", cfg.teacher.checkpoint);
  }

  if (root.contains("partition")) {
    const json& j = root.at("partition");
    check_keys(j, "partition", {"T", "ratios", "mode", "seed"});
    cfg.partition.T = read(j, "partition", "T", cfg.partition.T);
    cfg.partition.ratios =
        read(j, "partition", "ratios", cfg.partition.ratios);
    cfg.partition.mode = partition_mode_from_string(
        read<std::string>(j, "partition", "mode", "class-disjoint"));
    cfg.partition.seed =
        read<std::uint64_t>(j, "partition", "seed", cfg.partition.seed);
  }

  if (root.contains("schedule")) {
    const json& j = root.at("schedule");
    check_keys(j, "schedule",
               {"advance_epochs", "total_epochs", "advance_mode",
                "block_allocation", "plateau"});
    cfg.schedule.advance_epochs =
        read(j, "schedule", "advance_epochs", cfg.schedule.advance_epochs);
    cfg.schedule.total_epochs =
        read(j, "schedule", "total_epochs", cfg.schedule.total_epochs);
    cfg.schedule.advance_mode = advance_mode_from_string(
        read<std::string>(j, "schedule", "advance_mode", "fixed-epoch"));
    if (j.contains("plateau")) {
      const json& p = j.at("plateau");
      check_keys(p, "schedule.plateau", {"delta", "patience"});
      cfg.schedule.plateau.delta =
          read(p, "schedule.plateau", "delta", cfg.schedule.plateau.delta);
      cfg.schedule.plateau.patience = read(p, "schedule.plateau", "patience",
                                           cfg.schedule.plateau.patience);
    }
    if (j.contains("block_allocation")) {
      cfg.schedule.has_allocation = true;
      cfg.schedule.block_allocation =
          read<std::vector<std::vector<std::string>>>(
              j, "schedule", "block_allocation", {});
    }
  }

  if (root.contains("loss")) {
    const json& j = root.at("loss");
    check_keys(j, "loss", {"tau", "alpha", "kd_scale"});
    cfg.loss.tau = read(j, "loss", "tau", cfg.loss.tau);
    cfg.loss.alpha = read(j, "loss", "alpha", cfg.loss.alpha);
    cfg.loss.kd_scale = kd_scale_from_string(
        read<std::string>(j, "loss", "kd_scale", "tau2"));
  }

  if (root.contains("optimizer")) {
    const json& j = root.at("optimizer");
    check_keys(j, "optimizer",
               {"momentum", "weight_decay", "batch_size", "init_lr",
                "lr_milestones", "lr_gamma"});
    auto& o = cfg.optimizer;
    o.momentum = read(j, "optimizer", "momentum", o.momentum);
    o.weight_decay = read(j, "optimizer", "weight_decay", o.weight_decay);
    o.batch_size = read(j, "optimizer", "batch_size", o.batch_size);
    o.init_lr = read(j, "optimizer", "init_lr", o.init_lr);
    o.lr_milestones = read(j, "optimizer", "lr_milestones", o.lr_milestones);
    o.lr_gamma = read(j, "optimizer", "lr_gamma", o.lr_gamma);
  }

  if (root.contains("output")) {
    const json& j = root.at("output");
    check_keys(j, "output",
               {"out_dir", "run_id", "deterministic", "eval_every",
                "checkpoint_every"});
    auto& o = cfg.output;
    o.out_dir = read<std::string>(j, "output", "out_dir", o.out_dir);
    o.run_id = read<std::string>(j, "output", "run_id", o.run_id);
    o.deterministic = read(j, "output", "deterministic", o.deterministic);
    o.eval_every = read(j, "output", "eval_every", o.eval_every);
    o.checkpoint_every =
        read(j, "output", "checkpoint_every", o.checkpoint_every);
  }
  return cfg;
}

inline json config_to_json(const RunConfig& cfg) {
  using namespace cfg_detail;
  json root;
  root["seed"] = cfg.seed;
  const auto& s = cfg.dataset.synthetic;
  root["dataset"] = {{"name", cfg.dataset.name},
                     {"classes", s.classes},
                     {"channels", s.channels},
                     {"size", s.size},
                     {"train_per_class", s.train_per_class},
                     {"test_per_class", s.test_per_class},
                     {"noise", s.noise},
                     {"seed", s.seed}};
  root["student"] = arch_to_json(cfg.student);
  root["teacher"] = {{"mode", to_string(cfg.teacher.mode)},
                     {"epochs", cfg.teacher.epochs},
                     {"train_if_missing", cfg.teacher.train_if_missing},
                     {"cache_logits", cfg.teacher.cache_logits},
                     {"checkpoint", cfg.teacher.checkpoint}};
  if (cfg.teacher.has_arch)
    root["teacher"]["arch"] = arch_to_json(cfg.teacher.arch);
  root["partition"] = {{"T", cfg.partition.T},
                       {"ratios", cfg.partition.ratios},
                       {"mode", to_string(cfg.partition.mode)},
                       {"seed", cfg.partition.seed}};
  root["schedule"] = {{"advance_epochs", cfg.schedule.advance_epochs},
                      {"total_epochs", cfg.schedule.total_epochs},
                      {"advance_mode", to_string(cfg.schedule.advance_mode)},
                      {"plateau",
                       {{"delta", cfg.schedule.plateau.delta},
                        {"patience", cfg.schedule.plateau.patience}}}};
  if (cfg.schedule.has_allocation)
    root["schedule"]["block_allocation"] = cfg.schedule.block_allocation;
  root["loss"] = {{"tau", cfg.loss.tau},
                  {"alpha", cfg.loss.alpha},
                  {"kd_scale", to_string(cfg.loss.kd_scale)}};
  root["optimizer"] = {{"momentum", cfg.optimizer.momentum},
                       {"weight_decay", cfg.optimizer.weight_decay},
                       {"batch_size", cfg.optimizer.batch_size},
                       {"init_lr", cfg.optimizer.init_lr},
                       {"lr_milestones", cfg.optimizer.lr_milestones},
                       {"lr_gamma", cfg.optimizer.lr_gamma}};
  root["output"] = {{"out_dir", cfg.output.out_dir},
                    {"run_id", cfg.output.run_id},
                    {"deterministic", cfg.output.deterministic},
                    {"eval_every", cfg.output.eval_every},
                    {"checkpoint_every", cfg.output.checkpoint_every}};
  return root;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail_config("cannot open config file '", path, "'");
  json root;
  try {
    root = json::parse(in);
  } catch (const json::exception& e) {
    fail_config("config '", path, "' is not valid JSON: ", e.what());
  }
  return parse_run_config(root);
}

inline StudentSpec resolve_arch(const ArchConfig& arch, int in_channels,
                                int num_classes) {
  StudentSpec spec;
  spec.in_channels = in_channels;
  spec.stem.out_channels = arch.stem_channels;
  spec.blocks = arch.blocks;
  spec.decoder.in_channels = arch.decoder_channels > 0
                                 ? arch.decoder_channels
                                 : arch.blocks.back().out_channels;
  spec.num_classes = num_classes;
  return spec;
}

inline StudentSpec student_spec_of(const RunConfig& cfg) {
  return resolve_arch(cfg.student, cfg.dataset.synthetic.channels,
                      cfg.dataset.synthetic.classes);
}

inline StudentSpec teacher_arch_of(const RunConfig& cfg) {
  const ArchConfig& a =
      cfg.teacher.has_arch ? cfg.teacher.arch : cfg.student;
  return resolve_arch(a, cfg.dataset.synthetic.channels,
                      cfg.dataset.synthetic.classes);
}

inline StageSchedule schedule_of(const RunConfig& cfg) {
  const StudentSpec student = student_spec_of(cfg);
  StageSchedule sched;
  sched.T = cfg.partition.T;
  sched.advance_epochs = cfg.schedule.advance_epochs;
  sched.total_epochs = cfg.schedule.total_epochs;
  sched.advance_mode = cfg.schedule.advance_mode;
  sched.plateau = cfg.schedule.plateau;
  sched.block_allocation =
      cfg.schedule.has_allocation
          ? cfg.schedule.block_allocation
          : even_block_allocation(student.block_ids(), sched.T);
  return sched;
}

// Cross-section consistency; `allow_single_stage` admits the degenerate
// T=1 schedule used by the vanilla-KD baseline.
inline void validate_run_config(const RunConfig& cfg,
                                bool allow_single_stage = false) {
  if (cfg.dataset.name != "synthetic")
    fail_config("dataset.name='", cfg.dataset.name,
                "' is not available; this build ships the built-in "
                "'synthetic' dataset");
  const auto& s = cfg.dataset.synthetic;
  if (s.classes < 2) fail_config("dataset.classes must be >= 2");
  if (s.channels < 1) fail_config("dataset.channels must be >= 1");
  if (s.size < 4) fail_config("dataset.size must be >= 4");
  if (s.train_per_class < 1 || s.test_per_class < 1)
    fail_config("dataset needs train_per_class and test_per_class >= 1");
  if (s.noise < 0) fail_config("dataset.noise must be >= 0");

  const StudentSpec student = student_spec_of(cfg);
  student.validate();
  teacher_arch_of(cfg).validate();

  if (cfg.partition.T < 2 && !allow_single_stage)
    fail_config("partition.T must be >= 2, got ", cfg.partition.T);
  if (static_cast<int>(cfg.partition.ratios.size()) != cfg.partition.T)
    fail_config("partition.ratios has ", cfg.partition.ratios.size(),
                " entries but partition.T=", cfg.partition.T);
  for (double r : cfg.partition.ratios)
    if (r <= 0) fail_config("partition.ratios must be positive");
  if (cfg.partition.mode == PartitionMode::ClassDisjoint &&
      cfg.partition.T > s.classes)
    fail_config("partition.T=", cfg.partition.T,
                " exceeds dataset.classes=", s.classes,
                " in class-disjoint mode");

  const StageSchedule sched = schedule_of(cfg);
  sched.validate(student.block_ids());

  cfg.loss.validate();
  cfg.optimizer.validate(cfg.schedule.total_epochs);

  if (cfg.teacher.epochs < 1) fail_config("teacher.epochs must be >= 1");
  if (cfg.output.run_id.empty() ||
      cfg.output.run_id.find('/') != std::string::npos)
    fail_config("output.run_id must be a non-empty plain name");
  if (cfg.output.eval_every < 1) fail_config("output.eval_every must be >= 1");
  if (cfg.output.checkpoint_every < 1)
    fail_config("output.checkpoint_every must be >= 1");
}

// Degenerate single-stage schedule over the full dataset with one shared
// teacher: vanilla KD with the same loss and optimizer settings.
inline RunConfig make_kd_baseline(const RunConfig& base) {
  RunConfig cfg = base;
  cfg.baseline_kd = true;
  cfg.partition.T = 1;
  cfg.partition.ratios = {1.0};
  cfg.schedule.advance_epochs.clear();
  cfg.schedule.has_allocation = false;
  cfg.schedule.advance_mode = AdvanceMode::FixedEpoch;
  cfg.teacher.mode = TeacherMode::SharedPretrained;
  cfg.output.run_id = base.output.run_id + "-kd";
  validate_run_config(cfg, true);
  return cfg;
}

}  // namespace edukd
