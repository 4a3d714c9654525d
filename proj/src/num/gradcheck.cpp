#include "mhsum/num/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "mhsum/num/graph.hpp"

namespace mhsum::num {

namespace {

double eval_scalar(const ScalarProgram& f, std::span<const Tensor> inputs) {
  const Tensor out = f(inputs);
  if (out.numel() != 1) throw std::invalid_argument("grad_check: program is not scalar-valued");
  const double v = out.item();
  if (!std::isfinite(v)) throw std::domain_error("grad_check: non-finite program value");
  return v;
}

}  // namespace

GradCheckResult grad_check_detailed(const ScalarProgram& f, std::span<Tensor> inputs, double eps) {
  if (!(eps >= 1e-6 && eps <= 1e-3)) throw std::invalid_argument("grad_check: eps must lie in [1e-6, 1e-3]");

  std::vector<bool> previous(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    previous[i] = inputs[i].requires_grad();
    inputs[i].set_requires_grad(true);
    inputs[i].impl()->grad.clear();
  }

  std::vector<std::vector<double>> analytic;
  {
    Graph graph;
    GraphScope scope(graph);
    const Tensor out = f(std::span<const Tensor>(inputs.data(), inputs.size()));
    if (out.numel() != 1) throw std::invalid_argument("grad_check: program is not scalar-valued");
    if (!std::isfinite(out.item())) throw std::domain_error("grad_check: non-finite program value");
    graph.backward(out);
  }
  for (auto& t : inputs) {
    analytic.push_back(t.grad());
    for (double g : analytic.back())
      if (!std::isfinite(g)) throw std::domain_error("grad_check: non-finite analytic gradient");
  }

  GradCheckResult result;
  const std::span<const Tensor> view(inputs.data(), inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto data = inputs[i].mutable_data();
    for (std::size_t k = 0; k < data.size(); ++k) {
      const double saved = data[k];
      data[k] = saved + eps;
      const double up = eval_scalar(f, view);
      data[k] = saved - eps;
      const double down = eval_scalar(f, view);
      data[k] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[i][k];
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_input = i;
        result.worst_index = k;
      }
    }
  }

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    inputs[i].impl()->grad.clear();
    inputs[i].set_requires_grad(previous[i]);
  }
  return result;
}

double grad_check(const ScalarProgram& f, std::span<Tensor> inputs, double eps) {
  return grad_check_detailed(f, inputs, eps).max_rel_error;
}

}  // namespace mhsum::num
