#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "edukd/tensor.hpp"

namespace edukd {

enum class KdScale { One, TauSquared };

inline std::string to_string(KdScale s) {
  return s == KdScale::One ? "one" : "tau2";
}

inline KdScale kd_scale_from_string(const std::string& s) {
  if (s == "one" || s == "1") return KdScale::One;
  if (s == "tau2" || s == "tau^2") return KdScale::TauSquared;
  fail_config("loss.kd_scale must be 'one' or 'tau2', got '", s, "'");
}

struct DistillConfig {
  double tau = 4.0;
  double alpha = 0.3;
  KdScale kd_scale = KdScale::TauSquared;

  double kd_multiplier() const {
    return kd_scale == KdScale::TauSquared ? tau * tau : 1.0;
  }

  void validate() const {
    if (!(tau > 0)) fail_config("loss.tau must be positive, got ", tau);
    if (alpha < 0 || alpha > 1)
      fail_config("loss.alpha must lie in [0,1], got ", alpha);
  }
};

// Student and teacher logits for one batch, aligned row by row, labels in
// the global class space.
struct LogitBatch {
  TensorT<double> student;  // (n, num_classes)
  TensorT<double> teacher;  // (n, num_classes)
  std::vector<int> labels;
  std::vector<int> subset_ids;

  int rows() const { return student.ndim() ? student.dim(0) : 0; }
  int cols() const { return student.ndim() ? student.dim(1) : 0; }

  void validate() const {
    if (student.ndim() != 2) fail_run("logit batch must be 2-d");
    if (!student.same_shape(teacher))
      fail_run("student/teacher logit shapes differ: ", student.shape_str(),
               " vs ", teacher.shape_str());
    if (static_cast<int>(labels.size()) != rows() ||
        static_cast<int>(subset_ids.size()) != rows())
      fail_run("logit batch row metadata misaligned");
    if (!student.all_finite() || !teacher.all_finite())
      fail_run("non-finite logits rejected");
    for (int y : labels)
      if (y < 0 || y >= cols())
        fail_run("label ", y, " outside [0, ", cols(), ")");
  }
};

namespace detail {

inline void log_softmax_row(const double* z, int c, double inv_tau,
                            std::vector<double>& out) {
  out.resize(c);
  double mx = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < c; ++j) mx = std::max(mx, z[j] * inv_tau);
  double sum = 0;
  for (int j = 0; j < c; ++j) {
    out[j] = z[j] * inv_tau - mx;
    sum += std::exp(out[j]);
  }
  const double lse = std::log(sum);
  for (int j = 0; j < c; ++j) out[j] -= lse;
}

}  // namespace detail

// KL(softmax(G/tau) || softmax(Z/tau)): the teacher's softened
// distribution is the target.
inline double softened_kl(const double* z, const double* g, int c,
                          double tau) {
  if (!(tau > 0)) fail_config("temperature must be positive");
  for (int j = 0; j < c; ++j)
    if (!std::isfinite(z[j]) || !std::isfinite(g[j]))
      fail_run("non-finite logits rejected");
  std::vector<double> logq, logp;
  detail::log_softmax_row(z, c, 1.0 / tau, logq);
  detail::log_softmax_row(g, c, 1.0 / tau, logp);
  double kl = 0;
  for (int j = 0; j < c; ++j) kl += std::exp(logp[j]) * (logp[j] - logq[j]);
  return kl;
}

inline double softened_kl(const TensorT<double>& z, const TensorT<double>& g,
                          double tau) {
  if (!z.same_shape(g) || z.ndim() != 1)
    fail_run("softened_kl expects two equal-length logit rows");
  return softened_kl(z.data.data(), g.data.data(), z.dim(0), tau);
}

// d/dZ of softened_kl: (softmax(Z/tau) - softmax(G/tau)) / tau.
inline void softened_kl_grad(const double* z, const double* g, int c,
                             double tau, double* out) {
  std::vector<double> logq, logp;
  detail::log_softmax_row(z, c, 1.0 / tau, logq);
  detail::log_softmax_row(g, c, 1.0 / tau, logp);
  for (int j = 0; j < c; ++j)
    out[j] = (std::exp(logq[j]) - std::exp(logp[j])) / tau;
}

inline double cross_entropy(const double* z, int c, int label) {
  std::vector<double> logq;
  detail::log_softmax_row(z, c, 1.0, logq);
  return -logq[label];
}

// d/dZ of cross-entropy: softmax(Z) - onehot(y).
inline void cross_entropy_grad(const double* z, int c, int label,
                               double* out) {
  std::vector<double> logq;
  detail::log_softmax_row(z, c, 1.0, logq);
  for (int j = 0; j < c; ++j) out[j] = std::exp(logq[j]);
  out[label] -= 1.0;
}

struct LossParts {
  double total = 0;
  double kd = 0;  // mean softened KL, already kd_scale-multiplied
  double ce = 0;  // mean cross-entropy
};

// alpha * kd_scale * mean KL + (1-alpha) * mean CE over one subset's rows.
inline LossParts combined_loss(const LogitBatch& batch,
                               const DistillConfig& cfg) {
  cfg.validate();
  batch.validate();
  const int n = batch.rows(), c = batch.cols();
  if (n == 0) fail_run("combined_loss on empty batch");
  for (int i = 1; i < n; ++i)
    if (batch.subset_ids[i] != batch.subset_ids[0])
      fail_run("combined_loss expects a single-subset batch");
  double kl = 0, ce = 0;
  for (int i = 0; i < n; ++i) {
    const double* z = batch.student.data.data() + std::size_t(i) * c;
    const double* g = batch.teacher.data.data() + std::size_t(i) * c;
    kl += softened_kl(z, g, c, cfg.tau);
    ce += cross_entropy(z, c, batch.labels[i]);
  }
  LossParts parts;
  parts.kd = cfg.kd_multiplier() * kl / n;
  parts.ce = ce / n;
  parts.total = cfg.alpha * parts.kd + (1 - cfg.alpha) * parts.ce;
  return parts;
}

// Gradient of combined_loss w.r.t. the student logits.
inline TensorT<double> combined_loss_grad(const LogitBatch& batch,
                                          const DistillConfig& cfg) {
  cfg.validate();
  batch.validate();
  const int n = batch.rows(), c = batch.cols();
  if (n == 0) fail_run("combined_loss on empty batch");
  TensorT<double> grad({n, c});
  std::vector<double> gkl(c), gce(c);
  const double kd_mul = cfg.kd_multiplier();
  for (int i = 0; i < n; ++i) {
    const double* z = batch.student.data.data() + std::size_t(i) * c;
    const double* g = batch.teacher.data.data() + std::size_t(i) * c;
    softened_kl_grad(z, g, c, cfg.tau, gkl.data());
    cross_entropy_grad(z, c, batch.labels[i], gce.data());
    for (int j = 0; j < c; ++j)
      grad.data[std::size_t(i) * c + j] =
          (cfg.alpha * kd_mul * gkl[j] + (1 - cfg.alpha) * gce[j]) / n;
  }
  return grad;
}

struct SubsetLoss {
  int subset_id = 0;
  int rows = 0;
  double weight = 0;  // row fraction of the batch
  LossParts parts;
};

struct EdLossResult {
  double total = 0;
  std::vector<SubsetLoss> breakdown;  // ordered by subset id
};

// Sum over the sub-datasets present in the batch of that subset's combined
// loss, weighted by its row fraction. Absent subsets contribute nothing.
inline EdLossResult ed_loss(const LogitBatch& batch,
                            const DistillConfig& cfg) {
  cfg.validate();
  batch.validate();
  const int n = batch.rows(), c = batch.cols();
  if (n == 0) fail_run("ed_loss on empty batch");
  std::map<int, std::vector<int>> rows_by_subset;
  for (int i = 0; i < n; ++i) {
    if (batch.subset_ids[i] < 1)
      fail_run("sample with unassigned subset id ", batch.subset_ids[i]);
    rows_by_subset[batch.subset_ids[i]].push_back(i);
  }
  EdLossResult result;
  for (const auto& [subset, rows] : rows_by_subset) {
    LogitBatch sub;
    sub.student = TensorT<double>({static_cast<int>(rows.size()), c});
    sub.teacher = TensorT<double>({static_cast<int>(rows.size()), c});
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const int i = rows[k];
      std::copy_n(batch.student.data.data() + std::size_t(i) * c, c,
                  sub.student.data.data() + k * c);
      std::copy_n(batch.teacher.data.data() + std::size_t(i) * c, c,
                  sub.teacher.data.data() + k * c);
      sub.labels.push_back(batch.labels[i]);
      sub.subset_ids.push_back(subset);
    }
    SubsetLoss entry;
    entry.subset_id = subset;
    entry.rows = static_cast<int>(rows.size());
    entry.weight = double(rows.size()) / n;
    entry.parts = combined_loss(sub, cfg);
    result.total += entry.weight * entry.parts.total;
    result.breakdown.push_back(entry);
  }
  return result;
}

// Gradient of ed_loss w.r.t. the student logits; with mean-per-subset
// reduction and row-fraction weights this is the per-row gradient over n.
inline TensorT<double> ed_loss_grad(const LogitBatch& batch,
                                    const DistillConfig& cfg) {
  return combined_loss_grad(batch, cfg);
}

// Central finite differences against the analytic gradient; returns the
// max relative component error. Fn maps logits to {value, grad}.
struct LossWithGrad {
  double value = 0;
  TensorT<double> grad;
};

template <typename Fn>
double gradient_check(Fn&& loss_fn, const TensorT<double>& z, double eps) {
  if (eps < 1e-6 || eps > 1e-3)
    fail_config("gradient_check eps must lie in [1e-6, 1e-3]");
  const LossWithGrad base = loss_fn(z);
  if (!base.grad.same_shape(z)) fail_run("analytic gradient shape mismatch");
  double max_rel = 0;
  TensorT<double> probe = z;
  for (std::size_t i = 0; i < z.numel(); ++i) {
    probe.data[i] = z.data[i] + eps;
    const double up = loss_fn(probe).value;
    probe.data[i] = z.data[i] - eps;
    const double down = loss_fn(probe).value;
    probe.data[i] = z.data[i];
    const double numeric = (up - down) / (2 * eps);
    const double analytic = base.grad.data[i];
    const double denom =
        std::max({std::abs(numeric), std::abs(analytic), 1e-8});
    max_rel = std::max(max_rel, std::abs(numeric - analytic) / denom);
  }
  return max_rel;
}

}  // namespace edukd
