#pragma once

#include <filesystem>
#include <string>
#include <unistd.h>

#include "edukd/edukd.hpp"

namespace edukd::test {

// Fresh scratch directory per test section; removed up front so reruns
// start clean.
inline std::string scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() /
                   ("edukd-tests-" + std::to_string(::getpid())) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

// Scalar probe loss L = sum_i w_i * y_i over a layer's output; checks the
// analytic input/parameter gradients against central differences.
inline double layer_grad_max_rel_error(Layer<double>& layer,
                                       const TensorT<double>& x0,
                                       bool training, std::uint64_t seed,
                                       double eps = 1e-6) {
  RngStream rng(seed);
  TensorT<double> y0 = layer.forward(x0, training);
  TensorT<double> w(y0.shape);
  w.fill_normal(rng, 0.0, 1.0);

  auto loss_at = [&](const TensorT<double>& x) {
    TensorT<double> y = layer.forward(x, training);
    double l = 0;
    for (std::size_t i = 0; i < y.numel(); ++i) l += w.data[i] * y.data[i];
    return l;
  };

  auto params = named_params(layer);
  for (auto& p : params) p.grad->fill(0.0);
  layer.forward(x0, training);
  TensorT<double> dx = layer.backward(w);

  double max_rel = 0;
  auto update = [&](double analytic, double numeric) {
    const double denom =
        std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    max_rel = std::max(max_rel, std::abs(analytic - numeric) / denom);
  };

  TensorT<double> probe = x0;
  for (std::size_t i = 0; i < x0.numel(); ++i) {
    probe.data[i] = x0.data[i] + eps;
    const double up = loss_at(probe);
    probe.data[i] = x0.data[i] - eps;
    const double down = loss_at(probe);
    probe.data[i] = x0.data[i];
    update(dx.data[i], (up - down) / (2 * eps));
  }
  for (auto& p : params) {
    for (std::size_t i = 0; i < p.value->numel(); ++i) {
      const double orig = p.value->data[i];
      p.value->data[i] = orig + eps;
      const double up = loss_at(x0);
      p.value->data[i] = orig - eps;
      const double down = loss_at(x0);
      p.value->data[i] = orig;
      update(p.grad->data[i], (up - down) / (2 * eps));
    }
  }
  return max_rel;
}

inline TensorT<double> random_tensor(std::vector<int> shape,
                                     std::uint64_t seed, double stddev = 1.0) {
  TensorT<double> t(std::move(shape));
  RngStream rng(seed);
  t.fill_normal(rng, 0.0, stddev);
  return t;
}

// Small three-block student over single-channel images.
inline StudentSpec toy_student_spec(int num_classes = 9, int in_channels = 1) {
  StudentSpec spec;
  spec.in_channels = in_channels;
  spec.stem.out_channels = 8;
  spec.blocks = {{"b1", BlockKind::Conv, 8, 1},
                 {"b2", BlockKind::Conv, 16, 2},
                 {"b3", BlockKind::Conv, 32, 2}};
  spec.decoder.in_channels = 32;
  spec.num_classes = num_classes;
  return spec;
}

inline StageSchedule toy_schedule(int total_epochs = 12,
                                  std::vector<int> advance = {4, 8}) {
  StageSchedule s;
  s.T = 3;
  s.block_allocation = {{"b1"}, {"b2"}, {"b3"}};
  s.advance_epochs = std::move(advance);
  s.total_epochs = total_epochs;
  return s;
}

// Fast 3-stage run over a small 6-class blob dataset; finishes in a few
// seconds and exercises every phase of the pipeline.
inline RunConfig tiny_run_config(const std::string& out_dir,
                                 const std::string& run_id) {
  RunConfig cfg;
  cfg.seed = 5;
  cfg.dataset.synthetic.classes = 6;
  cfg.dataset.synthetic.channels = 1;
  cfg.dataset.synthetic.size = 8;
  cfg.dataset.synthetic.train_per_class = 30;
  cfg.dataset.synthetic.test_per_class = 10;
  cfg.dataset.synthetic.noise = 0.6;
  cfg.dataset.synthetic.seed = 13;
  cfg.student.stem_channels = 6;
  cfg.student.blocks = {{"b1", BlockKind::Conv, 6, 1},
                        {"b2", BlockKind::Conv, 12, 2},
                        {"b3", BlockKind::Conv, 16, 2}};
  cfg.teacher.epochs = 6;
  cfg.partition.T = 3;
  cfg.partition.ratios = {1, 1, 1};
  cfg.partition.seed = 1;
  cfg.schedule.advance_epochs = {3, 6};
  cfg.schedule.total_epochs = 9;
  cfg.optimizer.batch_size = 16;
  cfg.optimizer.lr_milestones = {};
  cfg.output.out_dir = out_dir;
  cfg.output.run_id = run_id;
  return cfg;
}

}  // namespace edukd::test
