#include "tipsfuse/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tipsfuse/errors.hpp"

namespace tipsfuse::ad {

namespace {

double evaluate(const ScalarFn& f) {
  Tape tape;
  return f(tape).item();
}

}  // namespace

GradCheckReport finite_difference_check(const ScalarFn& f, const ParamList& params, double h) {
  if (!(h >= 1e-7 && h <= 1e-3)) {
    throw std::invalid_argument("finite_difference_check: step " + std::to_string(h) +
                                " outside [1e-7, 1e-3]");
  }
  GradMap analytic;
  double base = 0.0;
  {
    Tape tape;
    Tensor loss = f(tape);
    base = loss.item();
    tape.backward(loss);
    analytic = tape.parameter_grads(params);
  }
  if (evaluate(f) != base) {
    throw NumericError("finite_difference_check: function is not deterministic");
  }

  GradCheckReport report;
  for (Parameter* p : params) {
    const Matrix& ga = analytic.at(p);
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + h;
      const double up = evaluate(f);
      p->value[i] = orig - h;
      const double down = evaluate(f);
      p->value[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double err = std::fabs(ga[i] - numeric) / std::max(1.0, std::fabs(ga[i]));
      if (report.entries_checked == 0 || err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_param = p->name;
        report.worst_index = i;
        report.worst_analytic = ga[i];
        report.worst_numeric = numeric;
      }
      ++report.entries_checked;
    }
  }
  return report;
}

}  // namespace tipsfuse::ad
