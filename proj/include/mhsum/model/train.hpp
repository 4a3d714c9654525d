#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "mhsum/model/model.hpp"

namespace mhsum::model {

struct OptimizerConfig {
  double peak_lr = 1e-3;
  /// Inverse-square-root schedule warmup. The paper retrains with 20000
  /// warmup steps; the desk corpus is far smaller.
  std::size_t warmup = 500;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  /// Global gradient-norm clip; <= 0 disables.
  double clip_norm = 1.0;
};

/// lr(t) = peak * min(t / warmup, sqrt(warmup / t)) for 1-based step t.
double learning_rate(const OptimizerConfig& cfg, std::size_t step);

class Adam {
 public:
  Adam(std::vector<num::Tensor> params, OptimizerConfig cfg);

  /// Applies one update from the gradients currently held by the parameters.
  void step();
  void zero_grad();

  std::size_t steps() const { return t_; }
  double last_lr() const { return last_lr_; }
  double last_grad_norm() const { return last_norm_; }
  const OptimizerConfig& config() const { return cfg_; }

 private:
  std::vector<num::Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  OptimizerConfig cfg_;
  std::size_t t_ = 0;
  double last_lr_ = 0.0;
  double last_norm_ = 0.0;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Example {
  const asr::HypothesisSet* input = nullptr;
  std::vector<int> summary;
};

/// Teacher-forced step over a batch: per-document backward passes in batch
/// order, averaged, then one optimizer update. Returns the mean loss.
double training_step(Model& model, Adam& optimizer, std::span<const Example> batch);

}  // namespace mhsum::model
