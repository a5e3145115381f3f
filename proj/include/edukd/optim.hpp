#pragma once

#include <map>
#include <string>
#include <vector>

#include "edukd/nn.hpp"

namespace edukd {

// SGD with momentum and weight decay; milestone step decay on the LR.
struct OptimizerConfig {
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int batch_size = 32;
  double init_lr = 0.05;
  std::vector<int> lr_milestones = {150, 180, 210};
  double lr_gamma = 0.1;

  void validate(int total_epochs) const {
    if (momentum < 0 || momentum >= 1)
      fail_config("optimizer.momentum must lie in [0,1), got ", momentum);
    if (weight_decay < 0) fail_config("optimizer.weight_decay must be >= 0");
    if (batch_size <= 0) fail_config("optimizer.batch_size must be positive");
    if (init_lr <= 0) fail_config("optimizer.init_lr must be positive");
    if (lr_gamma <= 0) fail_config("optimizer.lr_gamma must be positive");
    for (std::size_t i = 0; i + 1 < lr_milestones.size(); ++i)
      if (lr_milestones[i] >= lr_milestones[i + 1])
        fail_config("optimizer.lr_milestones must be strictly increasing");
    for (int m : lr_milestones)
      if (m <= 0 || m >= total_epochs)
        fail_config("optimizer.lr_milestone ", m,
                    " must lie in (0, total_epochs=", total_epochs, ")");
  }
};

// init_lr * gamma^(milestones passed).
inline double lr_at(int epoch, const OptimizerConfig& cfg) {
  double lr = cfg.init_lr;
  for (int m : cfg.lr_milestones)
    if (epoch >= m) lr *= cfg.lr_gamma;
  return lr;
}

// Holds state for exactly the unfrozen parameter set; rebuilt from scratch
// after every stage advance so momentum never outlives its parameters.
template <typename S>
class SgdOptimizer {
public:
  SgdOptimizer(std::vector<ParamRef<S>> params, const OptimizerConfig& cfg)
      : params_(std::move(params)), cfg_(cfg), lr_(cfg.init_lr) {
    for (const auto& p : params_)
      momentum_[p.name] = TensorT<S>(p.value->shape);
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  const std::vector<ParamRef<S>>& params() const { return params_; }

  std::vector<std::string> param_names() const {
    std::vector<std::string> out;
    for (const auto& p : params_) out.push_back(p.name);
    return out;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad->fill(S(0));
  }

  void step() {
    const S mu = static_cast<S>(cfg_.momentum);
    const S wd = static_cast<S>(cfg_.weight_decay);
    const S lr = static_cast<S>(lr_);
    for (auto& p : params_) {
      TensorT<S>& v = momentum_[p.name];
      for (std::size_t i = 0; i < p.value->numel(); ++i) {
        const S g = p.grad->data[i] + wd * p.value->data[i];
        v.data[i] = mu * v.data[i] + g;
        p.value->data[i] -= lr * v.data[i];
      }
    }
  }

  // momentum buffers are part of the resumable run state
  const std::map<std::string, TensorT<S>>& momentum_buffers() const {
    return momentum_;
  }

  void load_momentum(const std::map<std::string, TensorT<S>>& buffers) {
    for (auto& [name, buf] : buffers) {
      auto it = momentum_.find(name);
      if (it == momentum_.end())
        fail_run("momentum buffer '", name, "' has no matching parameter");
      if (!it->second.same_shape(buf))
        fail_run("momentum buffer '", name, "' shape mismatch");
      it->second.data = buf.data;
    }
  }

private:
  std::vector<ParamRef<S>> params_;
  OptimizerConfig cfg_;
  double lr_;
  std::map<std::string, TensorT<S>> momentum_;
};

}  // namespace edukd
