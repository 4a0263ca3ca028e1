#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>

#include "irdfusion/autodiff.hpp"

namespace irdfusion {

/// Builds a scalar loss on the given tape from the current parameter values.
/// Must be deterministic: the checker calls it once per perturbation.
using LossBuilder = std::function<Var(Tape&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  /// Max relative error per parameter name.
  std::map<std::string, double> per_parameter;
  std::size_t elements_checked = 0;
};

/// Central-difference gradient check. For every element of every parameter,
/// compares the taped gradient with (f(x+h) - f(x-h)) / 2h using
/// |analytic - numeric| / (|numeric| + 1e-8). Parameter values are restored
/// exactly; their grad tensors hold the analytic gradient afterwards.
GradCheckResult finite_diff_check(const LossBuilder& f, std::span<Parameter* const> params,
                                  double h = 1e-5);

}  // namespace irdfusion
