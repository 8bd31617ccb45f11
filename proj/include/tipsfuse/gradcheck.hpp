#pragma once

#include <functional>
#include <string>

#include "tipsfuse/tensor.hpp"

namespace tipsfuse::ad {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;
};

// Builds the scalar loss on the given tape from the current parameter values.
using ScalarFn = std::function<Tensor(Tape&)>;

// Compares reverse-mode gradients against central differences over every
// entry of every listed parameter. Error per entry is
// |analytic - numeric| / max(1, |analytic|). Requires h in [1e-7, 1e-3].
// Throws NumericError when two evaluations at the same point disagree.
GradCheckReport finite_difference_check(const ScalarFn& f, const ParamList& params, double h);

}  // namespace tipsfuse::ad
