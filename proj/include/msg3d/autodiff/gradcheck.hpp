#pragma once

#include "msg3d/autodiff/tensor.hpp"

#include <cstddef>
#include <functional>

namespace msg3d::ad {

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-4;
  // Denominator floor of the relative error, so entries whose true gradient
  // is ~0 are judged on absolute error instead.
  double floor = 1e-5;
  // A coordinate whose one-sided differences disagree by more than this
  // (relative to max(1, |central|)) sits on a kink and is skipped.
  double kink_tol = 1e-3;
  // 0 checks every coordinate, otherwise an evenly spaced subset.
  std::size_t max_coords = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  std::size_t excluded = 0;  // kink coordinates
  bool passed = false;
};

/// Compares d f(at) / d at from backward() against central differences.
/// `f` must return a scalar; `at` must be a leaf and is perturbed in place
/// (restored on return).
/// @throws std::runtime_error if two evaluations at the same point differ.
GradCheckReport finite_diff_check(const std::function<Tensor(const Tensor&)>& f, Tensor at,
                                  const GradCheckOptions& options = {});

}  // namespace msg3d::ad
