#pragma once

// Central finite-difference gradient checking.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "grerank/diff.hpp"

namespace grerank::diff {

struct GradCheckResult {
  /// Largest |analytic - numeric| / max(|analytic|, |numeric|) over entries
  /// whose absolute difference exceeds the floor.
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t entries = 0;

  bool passed(double rel_tol) const { return max_rel_error < rel_tol; }
};

/// Builds f from fresh parameter leaves holding `inputs`, backpropagates, and
/// compares every input entry's gradient with (f(x+h) - f(x-h)) / 2h.
/// f must return a single-entry node and be deterministic.
GradCheckResult check_gradient(const std::function<Node(std::span<const Node>)>& f, std::vector<Array> inputs,
                               double h = 1e-6, double abs_floor = 1e-8);

}  // namespace grerank::diff
