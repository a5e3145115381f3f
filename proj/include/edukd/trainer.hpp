#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "edukd/checkpoint.hpp"
#include "edukd/config.hpp"
#include "edukd/dataset.hpp"
#include "edukd/loss.hpp"
#include "edukd/metrics.hpp"
#include "edukd/model.hpp"
#include "edukd/optim.hpp"
#include "edukd/partition.hpp"
#include "edukd/report.hpp"
#include "edukd/schedule.hpp"
#include "edukd/teacher.hpp"

#include <sys/types.h>
#include <unistd.h>

namespace edukd {

namespace fs = std::filesystem;

// Advance trigger for plateau mode: fires when the newest sub-dataset's
// validation accuracy has not improved by `delta` points in `patience`
// epochs. The schedule's fixed epochs stay as a hard ceiling.
class PlateauDetector {
public:
  explicit PlateauDetector(PlateauConfig cfg = {}) : cfg_(cfg) { reset(-1); }

  void reset(int anchor_epoch) {
    best_ = -std::numeric_limits<double>::infinity();
    best_epoch_ = anchor_epoch;
  }

  void observe(int epoch, double accuracy) {
    if (accuracy > best_ + cfg_.delta) {
      best_ = accuracy;
      best_epoch_ = epoch;
    }
  }

  bool plateaued(int epoch) const {
    return epoch - best_epoch_ >= cfg_.patience;
  }

  double best() const { return best_; }
  int best_epoch() const { return best_epoch_; }

  void save(std::map<std::string, std::string>& extra) const {
    extra["plateau_best"] = concat(best_);
    extra["plateau_best_epoch"] = std::to_string(best_epoch_);
  }

  void load(const std::map<std::string, std::string>& extra) {
    auto b = extra.find("plateau_best");
    auto e = extra.find("plateau_best_epoch");
    if (b != extra.end()) best_ = std::stod(b->second);
    if (e != extra.end()) best_epoch_ = std::stoi(e->second);
  }

private:
  PlateauConfig cfg_;
  double best_;
  int best_epoch_;
};

// PID lock file; a second run with the same run_id fails while the owner
// is alive. Stale locks from killed processes are reclaimed.
class RunLock {
public:
  explicit RunLock(const std::string& path) : path_(path) {
    if (fs::exists(path_)) {
      std::ifstream in(path_);
      long pid = 0;
      in >> pid;
      if (pid > 0 && fs::exists("/proc/" + std::to_string(pid)))
        fail_run("run directory is locked by live process ", pid,
                 " (", path_, "); concurrent runs need distinct run_ids");
    }
    std::ofstream out(path_, std::ios::trunc);
    if (!out) fail_run("cannot create lock file '", path_, "'");
    out << ::getpid() << "\n";
    held_ = true;
  }

  ~RunLock() {
    if (held_) {
      std::error_code ec;
      fs::remove(path_, ec);
    }
  }

  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

private:
  std::string path_;
  bool held_ = false;
};

struct StageTimelineEntry {
  int stage = 0;
  int start_epoch = 0;
  int end_epoch = 0;
};

struct RunReport {
  bool interrupted = false;
  double final_top1 = 0;
  std::vector<double> per_subset_top1;
  std::vector<StageTimelineEntry> timeline;
  std::string run_dir;
  std::vector<MetricsRecord> records;
};

struct RunState {
  int epoch = -1;
  int stage = 1;
  StageModel* model = nullptr;
  SgdOptimizer<float>* optimizer = nullptr;
};

struct RunObserver {
  virtual ~RunObserver() = default;
  virtual void on_epoch_end(const RunState&) {}
  virtual void on_advance(const RunState& before, const RunState& after) {}
};

struct RunOptions {
  bool resume = false;
  int stop_after_epoch = -1;  // simulated interrupt for tests; -1 = run out
  RunObserver* observer = nullptr;
};

struct TeacherSummaryRow {
  int subset_id = 0;  // 0 = shared teacher
  std::string path;
  bool trained = false;  // false = loaded from an existing checkpoint
  double subset_accuracy = 0;
};

// Loads or trains the per-stage teachers under {run_dir}/teachers and
// returns the stage -> teacher mapping. Shared-pretrained mode resolves
// every stage to one full-dataset teacher.
inline TeacherAssignment prepare_teacher_assignment(
    const RunConfig& cfg, const StudentSpec& teacher_arch, const Dataset& ds,
    const SubDatasetPartition& part, const std::string& run_dir,
    std::vector<TeacherSummaryRow>* summary = nullptr) {
  TeacherAssignment assignment;
  assignment.mode = cfg.teacher.mode;
  assignment.num_classes = ds.num_classes;
  assignment.by_stage.assign(part.T, nullptr);
  fs::create_directories(run_dir + "/teachers");

  auto train_one = [&](int subset_id, const std::string& path)
      -> std::shared_ptr<Sequential<float>> {
    std::vector<SampleRef> train_view, eval_view;
    if (subset_id == 0) {
      train_view = active_union(ds, part, part.T, Split::Train);
      eval_view = active_union(ds, part, part.T, Split::Test);
    } else {
      train_view = subset_view(ds, part, subset_id, Split::Train);
      eval_view = subset_view(ds, part, subset_id, Split::Test);
    }
    TeacherTrainResult result = train_teacher(
        teacher_arch, ds, train_view, eval_view, cfg.optimizer,
        cfg.teacher.epochs,
        derive_seed(cfg.seed, "teacher", std::uint64_t(subset_id)));
    save_teacher_checkpoint(*result.net, subset_id,
                            result.final_subset_accuracy, ds.content_hash(),
                            path);
    if (summary)
      summary->push_back(
          {subset_id, path, true, result.final_subset_accuracy});
    return std::shared_ptr<Sequential<float>>(result.net.release());
  };

  auto load_one = [&](int subset_id, const std::string& path)
      -> std::shared_ptr<Sequential<float>> {
    std::shared_ptr<Sequential<float>> net =
        load_teacher_checkpoint(teacher_arch, path);
    if (summary) {
      CheckpointData ck = load_checkpoint(path);
      double acc = 0;
      auto it = ck.extra.find("subset_accuracy");
      if (it != ck.extra.end()) acc = std::stod(it->second);
      summary->push_back({subset_id, path, false, acc});
    }
    return net;
  };

  if (cfg.teacher.mode == TeacherMode::SharedPretrained) {
    const std::string path = cfg.teacher.checkpoint.empty()
                                 ? run_dir + "/teachers/teacher_shared.ckpt"
                                 : cfg.teacher.checkpoint;
    std::shared_ptr<Sequential<float>> net;
    if (fs::exists(path)) {
      net = load_one(0, path);
    } else if (cfg.teacher.train_if_missing && cfg.teacher.checkpoint.empty()) {
      net = train_one(0, path);
    } else {
      fail_run("teacher checkpoint '", path, "' not found");
    }
    for (int t = 1; t <= part.T; ++t) assignment.by_stage[t - 1] = net;
  } else {
    for (int t = 1; t <= part.T; ++t) {
      const std::string path = concat(run_dir, "/teachers/teacher_", t,
                                      ".ckpt");
      if (fs::exists(path)) {
        assignment.by_stage[t - 1] = load_one(t, path);
      } else if (cfg.teacher.train_if_missing) {
        assignment.by_stage[t - 1] = train_one(t, path);
      } else {
        fail_run("teacher checkpoint '", path, "' not found");
      }
    }
  }
  return assignment;
}

namespace trainer_detail {

struct NewestCheckpoint {
  std::string path;
  int epoch = -1;
};

inline NewestCheckpoint find_newest_checkpoint(const std::string& run_dir) {
  NewestCheckpoint best;
  if (!fs::exists(run_dir)) return best;
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("stage", 0) != 0) continue;
    const auto epos = name.find("_epoch");
    const auto cpos = name.rfind(".ckpt");
    if (epos == std::string::npos || cpos == std::string::npos) continue;
    const int epoch = std::stoi(name.substr(epos + 6, cpos - epos - 6));
    if (epoch > best.epoch) {
      best.epoch = epoch;
      best.path = entry.path().string();
    }
  }
  return best;
}

}  // namespace trainer_detail

// Owns the whole education-distillation run: partition, teachers, stage
// loop with advance/restore, metrics, checkpoints and the final report.
class EdTrainer {
public:
  EdTrainer(const RunConfig& cfg, const RunOptions& opts)
      : cfg_(cfg), opts_(opts), plateau_(cfg.schedule.plateau),
        start_time_(std::chrono::steady_clock::now()) {
    validate_run_config(cfg_, cfg_.baseline_kd || cfg_.partition.T == 1);
    student_ = student_spec_of(cfg_);
    teacher_arch_ = teacher_arch_of(cfg_);
    schedule_ = schedule_of(cfg_);
    run_dir_ = cfg_.output.out_dir + "/" + cfg_.output.run_id;
  }

  RunReport run() {
    fs::create_directories(run_dir_);
    RunLock lock(run_dir_ + "/.lock");
    try {
      return run_locked();
    } catch (const std::exception& e) {
      std::ofstream marker(run_dir_ + "/ERROR", std::ios::trunc);
      marker << e.what() << "\n";
      throw;
    }
  }

  // Exposed for direct use in tests.
  const Dataset& dataset() const { return dataset_; }
  const SubDatasetPartition& partition_obj() const { return partition_; }
  const TeacherAssignment& teachers() const { return teachers_; }

private:
  RunReport run_locked() {
    prepare_config_snapshot();
    dataset_ = make_synthetic_dataset(cfg_.dataset.synthetic);
    prepare_partition();
    prepare_teachers();
    const std::uint64_t teacher_hash_before = teachers_.param_hash();

    int epoch_start = 0;
    if (opts_.resume) {
      epoch_start = restore_from_newest_checkpoint();
    } else {
      model_ = assemble_stage_model<float>(student_, schedule_, 1, cfg_.seed);
      rebuild_optimizer();
      shuffle_rng_ = RngStream(derive_seed(cfg_.seed, "shuffle"));
      log_.open_fresh(run_dir_ + "/metrics.tsv");
      plateau_.reset(-1);
      stage_start_epoch_ = 0;
    }

    for (int epoch = epoch_start; epoch < schedule_.total_epochs; ++epoch) {
      maybe_advance(epoch);
      train_one_epoch(epoch);
      const bool last = epoch == schedule_.total_epochs - 1;
      if (should_eval(epoch)) evaluate_epoch(epoch);
      if (opts_.observer) {
        RunState st{epoch, model_.stage, &model_, optimizer_.get()};
        opts_.observer->on_epoch_end(st);
      }
      if (epoch % cfg_.output.checkpoint_every == 0 || last ||
          is_fixed_stage_end(epoch) || epoch == opts_.stop_after_epoch)
        save_stage_checkpoint(epoch);
      if (epoch == opts_.stop_after_epoch) {
        RunReport report;
        report.interrupted = true;
        report.run_dir = run_dir_;
        report.records = log_.records();
        return report;
      }
    }

    if (teachers_.param_hash() != teacher_hash_before)
      fail_run("teacher parameters changed during distillation");

    save_final_checkpoint();
    return finalize_report();
  }

  void prepare_config_snapshot() {
    const std::string path = run_dir_ + "/config.json";
    const std::string current = config_to_json(cfg_).dump(2) + "\n";
    if (opts_.resume && fs::exists(path)) {
      std::ifstream in(path, std::ios::binary);
      std::string stored((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
      if (stored != current)
        fail_run("resume config does not match the original run config at ",
                 path);
      return;
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << current;
  }

  void prepare_partition() {
    const std::string path = run_dir_ + "/partition.txt";
    if (schedule_.T == 1) {
      partition_ = single_group_partition(dataset_.train_labels,
                                          cfg_.partition.mode);
      if (!fs::exists(path)) save_partition_file(partition_, path);
      return;
    }
    if (fs::exists(path)) {
      partition_ = load_partition_file(path);
      if (partition_.T != schedule_.T)
        fail_run("partition file T=", partition_.T,
                 " conflicts with schedule T=", schedule_.T);
    } else {
      partition_ =
          partition(dataset_.train_labels, cfg_.partition.T,
                    cfg_.partition.ratios, cfg_.partition.mode,
                    cfg_.partition.seed);
      save_partition_file(partition_, path);
    }
  }

  void prepare_teachers() {
    teachers_ = prepare_teacher_assignment(cfg_, teacher_arch_, dataset_,
                                           partition_, run_dir_);
    if (cfg_.teacher.cache_logits) {
      const std::string path = run_dir_ + "/teachers/logits_train.bin";
      if (fs::exists(path)) {
        logit_store_ = LogitStore::load(path, dataset_.content_hash());
      } else {
        logit_store_ = cache_teacher_outputs(teachers_, dataset_, partition_);
        logit_store_.save(path);
      }
      use_cache_ = true;
    }
  }

  void rebuild_optimizer() {
    optimizer_ = std::make_unique<SgdOptimizer<float>>(
        model_.trainable_params(), cfg_.optimizer);
  }

  double wall_time() const {
    if (cfg_.output.deterministic) return 0.0;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start_time_)
        .count();
  }

  void emit(int epoch, const std::string& split, int subset,
            const std::string& metric, double value) {
    log_.append({cfg_.output.run_id, epoch, model_.stage, split, subset,
                 metric, value, wall_time()});
  }

  void maybe_advance(int epoch) {
    if (model_.stage >= schedule_.T) return;
    const int ceiling = schedule_.advance_epochs[model_.stage - 1];
    bool fire = epoch == ceiling;
    if (!fire && schedule_.advance_mode == AdvanceMode::Plateau &&
        epoch < ceiling && epoch > stage_start_epoch_ &&
        plateau_.plateaued(epoch - 1))
      fire = true;
    if (!fire) return;

    StageModel before = std::move(model_);
    StageModel after =
        before.stage == schedule_.T - 1
            ? restore_final_architecture(before, student_, schedule_,
                                         cfg_.seed)
            : advance_stage(before, student_, schedule_, cfg_.seed);
    model_ = std::move(after);
    rebuild_optimizer();
    plateau_.reset(epoch);
    stage_start_epoch_ = epoch;
    emit(epoch, "train", 0, "event_advance", model_.stage);
    if (model_.stage == schedule_.T)
      emit(epoch, "train", 0, "event_restore", model_.stage);
    if (opts_.observer) {
      RunState b{epoch, before.stage, &before, nullptr};
      RunState a{epoch, model_.stage, &model_, optimizer_.get()};
      opts_.observer->on_advance(b, a);
    }
  }

  std::size_t first_unfrozen_child() const {
    for (std::size_t i = 0; i < model_.net->size(); ++i)
      if (!model_.net->is_frozen(model_.net->child_name(i))) return i;
    return model_.net->size();
  }

  Tensor teacher_logits_for(const Batch& batch) {
    if (!use_cache_) return teacher_logits(teachers_, dataset_, batch);
    Tensor out({batch.size(), teachers_.num_classes});
    for (int i = 0; i < batch.size(); ++i) {
      const float* row = logit_store_.find(batch.sample_indices[i]);
      if (!row)
        fail_run("logit cache is missing train sample ",
                 batch.sample_indices[i]);
      std::copy_n(row, teachers_.num_classes,
                  out.data.begin() +
                      std::size_t(i) * teachers_.num_classes);
    }
    return out;
  }

  void train_one_epoch(int epoch) {
    std::vector<SampleRef> samples =
        active_union(dataset_, partition_, model_.stage, Split::Train);
    shuffle_rng_.shuffle(samples);
    optimizer_->set_lr(lr_at(epoch, cfg_.optimizer));

    struct Acc {
      double total = 0, kd = 0, ce = 0;
      int rows = 0;
    };
    std::map<int, Acc> acc_by_subset;
    const std::size_t bs = std::size_t(cfg_.optimizer.batch_size);
    const std::size_t stop = first_unfrozen_child();

    for (std::size_t begin = 0; begin < samples.size(); begin += bs) {
      const std::size_t end = std::min(samples.size(), begin + bs);
      Batch b = gather_batch(dataset_, Split::Train, samples, begin, end);
      Tensor logits = model_.forward(b.images, true);
      if (!logits.all_finite()) {
        save_diagnostic_checkpoint(epoch);
        fail_run("non-finite student logits at stage ", model_.stage,
                 " epoch ", epoch, "; diagnostic checkpoint written");
      }
      Tensor g = teacher_logits_for(b);

      LogitBatch lb;
      lb.student = logits.cast<double>();
      lb.teacher = g.cast<double>();
      lb.labels = b.labels;
      lb.subset_ids = b.subset_ids;
      EdLossResult res = ed_loss(lb, cfg_.loss);
      if (!std::isfinite(res.total)) {
        save_diagnostic_checkpoint(epoch);
        fail_run("non-finite loss at stage ", model_.stage, " epoch ", epoch,
                 "; diagnostic checkpoint written");
      }
      for (const auto& part : res.breakdown) {
        Acc& a = acc_by_subset[part.subset_id];
        a.total += part.parts.total * part.rows;
        a.kd += part.parts.kd * part.rows;
        a.ce += part.parts.ce * part.rows;
        a.rows += part.rows;
      }

      Tensor grad = ed_loss_grad(lb, cfg_.loss).cast<float>();
      optimizer_->zero_grad();
      model_.net->backward_from(grad, stop);
      optimizer_->step();
    }

    double total = 0;
    int rows = 0;
    for (const auto& [subset, a] : acc_by_subset) {
      emit(epoch, "train", subset, "loss", a.total / a.rows);
      emit(epoch, "train", subset, "loss_kd", a.kd / a.rows);
      emit(epoch, "train", subset, "loss_ce", a.ce / a.rows);
      total += a.total;
      rows += a.rows;
    }
    emit(epoch, "train", 0, "loss", total / rows);
    emit(epoch, "train", 0, "lr", optimizer_->lr());
  }

  bool is_fixed_stage_end(int epoch) const {
    if (epoch == schedule_.total_epochs - 1) return true;
    for (int e : schedule_.advance_epochs)
      if (epoch + 1 == e) return true;
    return false;
  }

  bool should_eval(int epoch) const {
    if (schedule_.advance_mode == AdvanceMode::Plateau) return true;
    return epoch % cfg_.output.eval_every == 0 || is_fixed_stage_end(epoch);
  }

  void evaluate_epoch(int epoch) {
    for (int t = 1; t <= model_.stage; ++t) {
      auto view = subset_view(dataset_, partition_, t, Split::Test);
      const double acc = top1_accuracy(*model_.net, dataset_, Split::Test,
                                       view, cfg_.optimizer.batch_size);
      emit(epoch, "test", t, "top1", acc);
      if (t == model_.stage) plateau_.observe(epoch, acc);
    }
    auto full = active_union(dataset_, partition_, partition_.T, Split::Test);
    emit(epoch, "test", 0, "top1",
         top1_accuracy(*model_.net, dataset_, Split::Test, full,
                       cfg_.optimizer.batch_size));
  }

  CheckpointData make_checkpoint(int epoch, const std::string& kind) {
    CheckpointData ck;
    ck.kind = kind;
    ck.run_id = cfg_.output.run_id;
    ck.epoch = epoch;
    ck.rng_state = shuffle_rng_.serialize();
    capture_model_state(model_, ck);
    for (const auto& [name, buf] : optimizer_->momentum_buffers())
      ck.momentum[name] = buf;
    plateau_.save(ck.extra);
    ck.extra["stage_start_epoch"] = std::to_string(stage_start_epoch_);
    return ck;
  }

  void save_stage_checkpoint(int epoch) {
    CheckpointData ck = make_checkpoint(epoch, "stage");
    save_checkpoint(ck, concat(run_dir_, "/stage", model_.stage, "_epoch",
                               epoch, ".ckpt"));
  }

  void save_diagnostic_checkpoint(int epoch) {
    CheckpointData ck = make_checkpoint(epoch, "diagnostic");
    save_checkpoint(ck, concat(run_dir_, "/diagnostic_epoch", epoch,
                               ".ckpt"));
  }

  void save_final_checkpoint() {
    CheckpointData ck = make_checkpoint(schedule_.total_epochs - 1, "final");
    save_checkpoint(ck, run_dir_ + "/final.ckpt");
    // plain-text structural fingerprint, one layer per line, for diffing
    std::ofstream out(run_dir_ + "/fingerprint.txt",
                      std::ios::binary | std::ios::trunc);
    out << fingerprint_text(model_fingerprint(model_));
  }

  int restore_from_newest_checkpoint() {
    const auto newest = trainer_detail::find_newest_checkpoint(run_dir_);
    if (newest.epoch < 0)
      fail_run("resume requested but no checkpoint found in ", run_dir_);
    CheckpointData ck = load_checkpoint(newest.path);
    model_ = assemble_stage_model<float>(student_, schedule_, ck.stage,
                                         cfg_.seed);
    restore_model_state(ck, model_);
    if (ck.frozen != model_.frozen_param_ids)
      fail_run("checkpoint frozen set does not match schedule");
    rebuild_optimizer();
    std::map<std::string, Tensor> momentum = ck.momentum;
    optimizer_->load_momentum(momentum);
    shuffle_rng_.deserialize(ck.rng_state);
    plateau_ = PlateauDetector(schedule_.plateau);
    plateau_.load(ck.extra);
    auto it = ck.extra.find("stage_start_epoch");
    stage_start_epoch_ = it == ck.extra.end() ? 0 : std::stoi(it->second);
    log_.open_resume(run_dir_ + "/metrics.tsv", ck.epoch);
    return ck.epoch + 1;
  }

  RunReport finalize_report() {
    RunReport report;
    report.run_dir = run_dir_;
    report.records = log_.records();

    ForgettingMatrix matrix = forgetting_matrix(report.records);
    render_report(report.records, matrix, run_dir_ + "/report");

    for (const auto& r : report.records)
      if (r.split == "test" && r.metric == "top1") {
        if (r.subset_id == 0)
          report.final_top1 = r.value;  // last one wins
      }
    report.per_subset_top1.assign(schedule_.T, 0.0);
    for (const auto& r : report.records)
      if (r.split == "test" && r.metric == "top1" && r.subset_id > 0 &&
          r.epoch == matrix.stage_end_epochs[schedule_.T - 1])
        report.per_subset_top1[r.subset_id - 1] = r.value;

    int start = 0, stage = 1;
    for (const auto& r : report.records)
      if (r.metric == "event_advance") {
        report.timeline.push_back({stage, start, r.epoch - 1});
        stage = static_cast<int>(r.value);
        start = r.epoch;
      }
    report.timeline.push_back({stage, start, schedule_.total_epochs - 1});
    return report;
  }

  RunConfig cfg_;
  RunOptions opts_;
  StudentSpec student_;
  StudentSpec teacher_arch_;
  StageSchedule schedule_;
  std::string run_dir_;

  Dataset dataset_;
  SubDatasetPartition partition_;
  TeacherAssignment teachers_;
  LogitStore logit_store_;
  bool use_cache_ = false;

  StageModel model_;
  std::unique_ptr<SgdOptimizer<float>> optimizer_;
  RngStream shuffle_rng_;
  MetricsLog log_;
  PlateauDetector plateau_;
  int stage_start_epoch_ = 0;
  std::chrono::steady_clock::time_point start_time_;
};

inline RunReport run_education_distillation(const RunConfig& cfg,
                                            const RunOptions& opts = {}) {
  EdTrainer trainer(cfg, opts);
  return trainer.run();
}

struct EvalResult {
  int stage = 0;
  double full_top1 = 0;
  std::vector<double> per_subset_top1;
};

// Loads a checkpoint into the architecture implied by its stage and
// evaluates full-set and per-subset top-1 on the test split.
inline EvalResult evaluate_checkpoint(const RunConfig& cfg,
                                      const std::string& ckpt_path) {
  validate_run_config(cfg, cfg.baseline_kd || cfg.partition.T == 1);
  const StudentSpec student = student_spec_of(cfg);
  const StageSchedule schedule = schedule_of(cfg);
  Dataset ds = make_synthetic_dataset(cfg.dataset.synthetic);
  SubDatasetPartition part =
      schedule.T == 1
          ? single_group_partition(ds.train_labels, cfg.partition.mode)
          : partition(ds.train_labels, cfg.partition.T, cfg.partition.ratios,
                      cfg.partition.mode, cfg.partition.seed);

  CheckpointData ck = load_checkpoint(ckpt_path);
  if (ck.kind == "teacher")
    fail_run("'", ckpt_path, "' is a teacher checkpoint; evaluate expects a "
             "student stage or final checkpoint");
  StageModel model =
      assemble_stage_model<float>(student, schedule, ck.stage, cfg.seed);
  restore_model_state(ck, model);

  EvalResult result;
  result.stage = ck.stage;
  auto full = active_union(ds, part, part.T, Split::Test);
  result.full_top1 = top1_accuracy(*model.net, ds, Split::Test, full,
                                   cfg.optimizer.batch_size);
  for (int t = 1; t <= part.T; ++t) {
    auto view = subset_view(ds, part, t, Split::Test);
    result.per_subset_top1.push_back(top1_accuracy(
        *model.net, ds, Split::Test, view, cfg.optimizer.batch_size));
  }
  return result;
}

}  // namespace edukd
