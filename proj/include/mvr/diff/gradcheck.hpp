#pragma once

#include <functional>

#include "mvr/diff/tape.hpp"

namespace mvr::diff {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  bool finite = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tol = 0.0;
  bool pass = false;
  double worst() const {
    double w = 0.0;
    for (const auto& e : entries) w = std::max(w, e.max_rel_err);
    return w;
  }
};

/// Compares analytic gradients of a scalar loss against central finite
/// differences over every parameter in the store. `build_loss` must be a
/// pure function of the store values. Set max_elements_per_param to probe a
/// deterministic subset of large tensors.
GradCheckReport grad_check(ParamStore& store, const std::function<Var(Tape&)>& build_loss,
                           double tol = 1e-4, double step = 1e-5,
                           std::size_t max_elements_per_param = 0);

}  // namespace mvr::diff
