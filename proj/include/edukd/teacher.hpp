#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "edukd/checkpoint.hpp"
#include "edukd/dataset.hpp"
#include "edukd/loss.hpp"
#include "edukd/metrics.hpp"
#include "edukd/model.hpp"
#include "edukd/optim.hpp"
#include "edukd/partition.hpp"

namespace edukd {

enum class TeacherMode { PerSubsetTrained, SharedPretrained };

inline std::string to_string(TeacherMode m) {
  return m == TeacherMode::PerSubsetTrained ? "per-subset-trained"
                                            : "shared-pretrained";
}

inline TeacherMode teacher_mode_from_string(const std::string& s) {
  if (s == "per-subset-trained") return TeacherMode::PerSubsetTrained;
  if (s == "shared-pretrained") return TeacherMode::SharedPretrained;
  fail_config("teacher.mode must be 'per-subset-trained' or "
              "'shared-pretrained', got '", s, "'");
}

// Stage -> teacher mapping. In shared mode every stage resolves to the
// same network; teachers always emit logits over the full class space.
struct TeacherAssignment {
  TeacherMode mode = TeacherMode::PerSubsetTrained;
  int num_classes = 0;
  std::vector<std::shared_ptr<Sequential<float>>> by_stage;  // size T

  Sequential<float>& teacher_for(int subset_id) const {
    if (subset_id < 1 || subset_id > static_cast<int>(by_stage.size()) ||
        !by_stage[subset_id - 1])
      fail_run("no teacher registered for subset ", subset_id);
    return *by_stage[subset_id - 1];
  }

  // Combined hash over all teacher parameters; constant across a
  // distillation run since teachers are never updated.
  std::uint64_t param_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& t : by_stage) {
      if (!t) continue;
      for (const auto& p : named_params(*t)) {
        h = fnv1a(p.name, h);
        h = fnv1a(p.value->data.data(), p.value->data.size() * sizeof(float),
                  h);
      }
    }
    return h;
  }
};

struct TeacherTrainResult {
  std::unique_ptr<Sequential<float>> net;
  double final_subset_accuracy = 0;  // top-1 on the subset's test view
  int epochs = 0;
};

// Plain cross-entropy training of one teacher on its own sub-dataset.
inline TeacherTrainResult train_teacher(
    const StudentSpec& arch, const Dataset& ds,
    const std::vector<SampleRef>& train_view,
    const std::vector<SampleRef>& eval_view, const OptimizerConfig& opt_cfg,
    int epochs, std::uint64_t seed) {
  if (train_view.empty()) fail_run("train_teacher on empty subset");
  if (epochs < 1) fail_config("teacher.epochs must be >= 1");

  TeacherTrainResult result;
  result.net = build_reference_student<float>(arch, seed);
  result.epochs = epochs;

  auto params = named_params(*result.net);
  SgdOptimizer<float> opt(params, opt_cfg);
  RngStream shuffle_rng(derive_seed(seed, "teacher-shuffle"));
  std::vector<SampleRef> samples = train_view;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    opt.set_lr(lr_at(epoch, opt_cfg));
    shuffle_rng.shuffle(samples);
    for (std::size_t begin = 0; begin < samples.size();
         begin += std::size_t(opt_cfg.batch_size)) {
      const std::size_t end = std::min(
          samples.size(), begin + std::size_t(opt_cfg.batch_size));
      Batch b = gather_batch(ds, Split::Train, samples, begin, end);
      Tensor logits = result.net->forward(b.images, true);
      const int n = logits.dim(0), c = logits.dim(1);
      TensorT<double> z = logits.cast<double>();
      double loss = 0;
      Tensor grad({n, c});
      std::vector<double> g(c);
      for (int i = 0; i < n; ++i) {
        const double* zr = z.data.data() + std::size_t(i) * c;
        loss += cross_entropy(zr, c, b.labels[i]);
        cross_entropy_grad(zr, c, b.labels[i], g.data());
        for (int j = 0; j < c; ++j)
          grad.data[std::size_t(i) * c + j] =
              static_cast<float>(g[j] / n);
      }
      loss /= n;
      if (!std::isfinite(loss))
        fail_run("teacher training diverged (non-finite loss) at epoch ",
                 epoch);
      opt.zero_grad();
      result.net->backward(grad);
      opt.step();
    }
  }
  if (!eval_view.empty())
    result.final_subset_accuracy = top1_accuracy(
        *result.net, ds, Split::Test, eval_view, opt_cfg.batch_size);
  return result;
}

inline void save_teacher_checkpoint(Sequential<float>& net, int subset_id,
                                    double subset_accuracy,
                                    std::uint64_t dataset_hash,
                                    const std::string& path) {
  CheckpointData ck;
  ck.kind = "teacher";
  ck.stage = subset_id;
  for (auto& p : named_params(net)) ck.params[p.name] = *p.value;
  for (auto& b : named_buffers(net)) ck.buffers[b.name] = *b.value;
  ck.extra["subset"] = std::to_string(subset_id);
  ck.extra["subset_accuracy"] = std::to_string(subset_accuracy);
  ck.extra["dataset_hash"] = std::to_string(dataset_hash);
  save_checkpoint(ck, path);
}

// Rebuilds a teacher net from its arch spec and a checkpoint; names and
// shapes must match exactly.
inline std::unique_ptr<Sequential<float>> load_teacher_checkpoint(
    const StudentSpec& arch, const std::string& path) {
  CheckpointData ck = load_checkpoint(path);
  if (ck.kind != "teacher")
    fail_run("'", path, "' is a ", ck.kind, " checkpoint, expected teacher");
  auto net = build_reference_student<float>(arch, 0);
  std::set<std::string> used;
  for (auto& p : named_params(*net)) {
    auto it = ck.params.find(p.name);
    if (it == ck.params.end())
      fail_run("teacher checkpoint missing parameter '", p.name, "'");
    if (it->second.shape != p.value->shape)
      fail_run("teacher checkpoint shape mismatch on '", p.name, "'");
    *p.value = it->second;
    used.insert(p.name);
  }
  for (const auto& [name, t] : ck.params)
    if (!used.count(name))
      fail_run("teacher checkpoint has unexpected parameter '", name, "'");
  for (auto& b : named_buffers(*net)) {
    auto it = ck.buffers.find(b.name);
    if (it == ck.buffers.end())
      fail_run("teacher checkpoint missing buffer '", b.name, "'");
    *b.value = it->second;
  }
  return net;
}

// Per-sample teacher logits with routing: row i comes from the teacher
// uniquely mapped to subset_ids[i], run in inference mode.
inline Tensor teacher_logits(const TeacherAssignment& assignment,
                             const Dataset& ds, const Batch& batch) {
  const int n = batch.size();
  const int c = assignment.num_classes;
  Tensor out({n, c});
  std::map<int, std::vector<int>> rows_by_subset;
  for (int i = 0; i < n; ++i)
    rows_by_subset[batch.subset_ids[i]].push_back(i);
  const std::size_t img = ds.image_size();
  for (const auto& [subset, rows] : rows_by_subset) {
    Sequential<float>& teacher = assignment.teacher_for(subset);
    Tensor x({static_cast<int>(rows.size()), ds.channels, ds.height,
              ds.width});
    for (std::size_t k = 0; k < rows.size(); ++k)
      std::copy_n(batch.images.data.data() + std::size_t(rows[k]) * img, img,
                  x.data.begin() + k * img);
    Tensor logits = teacher.forward(x, false);
    for (std::size_t k = 0; k < rows.size(); ++k)
      std::copy_n(logits.data.data() + k * c, c,
                  out.data.begin() + std::size_t(rows[k]) * c);
  }
  return out;
}

// Persistent per-sample teacher logits, keyed by train-split sample index.
// Binary layout: header (magic, version, num_classes, sample count,
// dataset content hash) then (int64 sample id, float32 logits) records.
class LogitStore {
public:
  static constexpr std::uint32_t kMagic = 0x454B4C47;  // "EKLG"
  static constexpr std::uint32_t kVersion = 1;

  int num_classes() const { return num_classes_; }
  std::uint64_t dataset_hash() const { return dataset_hash_; }
  std::size_t size() const { return ids_.size(); }

  void put(std::int64_t sample_id, const float* logits, int c) {
    if (num_classes_ == 0) num_classes_ = c;
    if (c != num_classes_) fail_run("logit store width mismatch");
    offsets_[sample_id] = ids_.size();
    ids_.push_back(sample_id);
    values_.insert(values_.end(), logits, logits + c);
  }

  const float* find(std::int64_t sample_id) const {
    auto it = offsets_.find(sample_id);
    if (it == offsets_.end()) return nullptr;
    return values_.data() + it->second * num_classes_;
  }

  void set_dataset_hash(std::uint64_t h) { dataset_hash_ = h; }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail_run("cannot write logit store '", path, "'");
    ckpt_detail::write_pod(out, kMagic);
    ckpt_detail::write_pod(out, kVersion);
    ckpt_detail::write_pod<std::int32_t>(out, num_classes_);
    ckpt_detail::write_pod<std::int64_t>(
        out, static_cast<std::int64_t>(ids_.size()));
    ckpt_detail::write_pod<std::uint64_t>(out, dataset_hash_);
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      ckpt_detail::write_pod<std::int64_t>(out, ids_[i]);
      out.write(reinterpret_cast<const char*>(values_.data() +
                                              i * num_classes_),
                static_cast<std::streamsize>(num_classes_ * sizeof(float)));
    }
  }

  // Rejects stores whose recorded dataset hash does not match the data the
  // caller is about to train on.
  static LogitStore load(const std::string& path,
                         std::uint64_t expected_dataset_hash) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail_run("cannot open logit store '", path, "'");
    if (ckpt_detail::read_pod<std::uint32_t>(in) != kMagic)
      fail_run("'", path, "' is not a logit store");
    if (ckpt_detail::read_pod<std::uint32_t>(in) != kVersion)
      fail_run("unsupported logit store version");
    LogitStore store;
    store.num_classes_ = ckpt_detail::read_pod<std::int32_t>(in);
    const auto count = ckpt_detail::read_pod<std::int64_t>(in);
    store.dataset_hash_ = ckpt_detail::read_pod<std::uint64_t>(in);
    if (store.dataset_hash_ != expected_dataset_hash)
      fail_run("logit store '", path,
               "' was built for different data (content hash mismatch)");
    std::vector<float> row(store.num_classes_);
    for (std::int64_t i = 0; i < count; ++i) {
      const auto id = ckpt_detail::read_pod<std::int64_t>(in);
      in.read(reinterpret_cast<char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(float)));
      if (!in) fail_run("logit store '", path, "' truncated");
      store.put(id, row.data(), store.num_classes_);
    }
    return store;
  }

private:
  int num_classes_ = 0;
  std::uint64_t dataset_hash_ = 0;
  std::vector<std::int64_t> ids_;
  std::vector<float> values_;
  std::map<std::int64_t, std::size_t> offsets_;
};

// Runs every train sample through its routed teacher once and persists the
// logits so distillation epochs can read instead of re-running teachers.
inline LogitStore cache_teacher_outputs(const TeacherAssignment& assignment,
                                        const Dataset& ds,
                                        const SubDatasetPartition& part,
                                        int batch_size = 64) {
  LogitStore store;
  store.set_dataset_hash(ds.content_hash());
  std::vector<SampleRef> samples = active_union(ds, part, part.T, Split::Train);
  for (std::size_t begin = 0; begin < samples.size();
       begin += std::size_t(batch_size)) {
    const std::size_t end =
        std::min(samples.size(), begin + std::size_t(batch_size));
    Batch b = gather_batch(ds, Split::Train, samples, begin, end);
    Tensor logits = teacher_logits(assignment, ds, b);
    for (int i = 0; i < b.size(); ++i)
      store.put(b.sample_indices[i],
                logits.data.data() + std::size_t(i) * logits.dim(1),
                logits.dim(1));
  }
  return store;
}

}  // namespace edukd
