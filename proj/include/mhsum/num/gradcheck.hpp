#pragma once

#include <functional>
#include <span>
#include <vector>

#include "mhsum/num/tensor.hpp"

namespace mhsum::num {

using ScalarProgram = std::function<Tensor(std::span<const Tensor>)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
};

/// Compares reverse-mode gradients of a scalar program against central
/// differences over every coordinate of every input. Error per coordinate is
/// |analytic - numeric| / max(1, |analytic|, |numeric|).
///
/// Inputs are perturbed in place and restored; they are marked as requiring
/// gradients for the duration of the check.
GradCheckResult grad_check_detailed(const ScalarProgram& f, std::span<Tensor> inputs, double eps = 1e-4);

double grad_check(const ScalarProgram& f, std::span<Tensor> inputs, double eps = 1e-4);

}  // namespace mhsum::num
