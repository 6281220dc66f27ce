// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ssar/tensor.hpp"

namespace ssar {

struct GradCheckOptions {
  double eps = 1e-4;
  double tol = 1e-3;
  /// Errors are accepted when both values are below this magnitude and their
  /// absolute difference is too.
  double abs_floor = 1e-6;
  /// 0 checks every element; otherwise a seeded sample of at most this many
  /// elements per parameter.
  std::size_t max_elements = 0;
  std::uint64_t seed = 0;
};

struct ParamReport {
  std::size_t param_index = 0;
  double max_rel_error = 0.0;
  std::int64_t worst_element = -1;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  bool passed = true;
  std::vector<ParamReport> params;
  /// Empty on success; otherwise describes the first failure.
  std::string failure;
};

/// Compares analytic gradients of f with central finite differences
/// (f(p+eps) - f(p-eps)) / (2 eps), element by element. f must be
/// deterministic and return a one-element tensor. params must be leaves with
/// requires_grad set; their values are restored before returning.
GradCheckReport finite_diff_check(const std::function<Tensor()>& f,
                                  std::vector<Tensor> params,
                                  const GradCheckOptions& options = {});

}  // namespace ssar
