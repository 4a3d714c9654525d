#include "mhsum/model/train.hpp"

#include <cmath>
#include <sstream>

#include "mhsum/num/graph.hpp"
#include "mhsum/num/ops.hpp"

namespace mhsum::model {

double learning_rate(const OptimizerConfig& cfg, std::size_t step) {
  if (step == 0) return 0.0;
  const double t = static_cast<double>(step);
  if (cfg.warmup == 0) return cfg.peak_lr;
  const double w = static_cast<double>(cfg.warmup);
  return cfg.peak_lr * std::min(t / w, std::sqrt(w / t));
}

Adam::Adam(std::vector<num::Tensor> params, OptimizerConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  if (!(cfg_.peak_lr >= 0.0)) throw std::invalid_argument("Adam: learning rate must be non-negative");
  if (!(cfg_.beta1 >= 0.0 && cfg_.beta1 < 1.0 && cfg_.beta2 >= 0.0 && cfg_.beta2 < 1.0)) {
    throw std::invalid_argument("Adam: betas must lie in [0, 1)");
  }
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Adam::step() {
  ++t_;
  last_lr_ = learning_rate(cfg_, t_);
  std::vector<std::vector<double>> grads;
  grads.reserve(params_.size());
  double sq = 0.0;
  for (const auto& p : params_) {
    grads.push_back(p.grad());
    for (double g : grads.back()) sq += g * g;
  }
  last_norm_ = std::sqrt(sq);
  const double clip = cfg_.clip_norm > 0.0 && last_norm_ > cfg_.clip_norm ? cfg_.clip_norm / last_norm_ : 1.0;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto data = params_[i].mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double g = grads[i][j] * clip;
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
      data[j] -= last_lr_ * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
    }
  }
}

double training_step(Model& model, Adam& optimizer, std::span<const Example> batch) {
  if (batch.empty()) throw std::invalid_argument("training_step: empty batch");
  optimizer.zero_grad();
  const double inv = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const auto& ex : batch) {
    if (!ex.input) throw std::invalid_argument("training_step: example without input");
    num::Graph graph;
    num::GraphScope scope(graph);
    const num::Tensor loss = model.loss(*ex.input, ex.summary);
    const double value = loss.item();
    if (!std::isfinite(value)) {
      std::ostringstream msg;
      msg << "non-finite loss " << value << " on document '" << ex.input->doc_id << "' at optimizer step "
          << optimizer.steps() + 1 << " (lr " << learning_rate(optimizer.config(), optimizer.steps() + 1) << ")";
      throw NonFiniteLoss(msg.str());
    }
    total += value;
    graph.backward(num::scale(loss, inv));
  }
  optimizer.step();
  return total * inv;
}

}  // namespace mhsum::model
