#pragma once

#include <functional>
#include <span>
#include <string>

#include "mfb/autograd.hpp"

namespace mfb {

struct GradCheckOptions {
  double step = 1e-5;
  double rel_tol = 1e-4;
  // Entries whose true gradient is below `small` are judged by absolute error.
  double small = 1e-4;
  double abs_tol = 1e-7;
};

struct GradCheckResult {
  double worst_rel_error = 0.0;
  double worst_abs_error = 0.0;  // among entries judged absolutely
  std::size_t checked = 0;
  std::size_t failures = 0;
  std::string worst_location;

  bool passed() const { return failures == 0; }
  void merge(const GradCheckResult& other);
};

// Builds the scalar loss on a fresh graph. Must bind every checked parameter
// through Graph::parameter and must be deterministic (no dropout).
using LossBuilder = std::function<Var(Graph&)>;

// Compares backward() against central finite differences for every entry of
// every parameter. Parameter gradients are overwritten.
GradCheckResult check_gradients(std::span<Parameter* const> params, const LossBuilder& build,
                                const GradCheckOptions& options = {});

}  // namespace mfb
