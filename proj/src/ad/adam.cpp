#include "tipsfuse/adam.hpp"

#include <cmath>

#include "tipsfuse/errors.hpp"

namespace tipsfuse::ad {

Adam::Adam(ParamList params, AdamConfig config) : params_(std::move(params)), config_(config) {
  for (const Parameter* p : params_) {
    moments_.emplace(p, Moments{Matrix(p->value.rows(), p->value.cols()),
                                Matrix(p->value.rows(), p->value.cols())});
  }
}

void Adam::step(const GradMap& grads) {
  for (const auto& [p, g] : grads) {
    if (!moments_.contains(p)) continue;
    if (!g.same_shape(p->value)) {
      throw ShapeError("adam: gradient " + g.shape_string() + " for parameter " + p->name + " " +
                       p->value.shape_string());
    }
  }
  ++step_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (Parameter* p : params_) {
    Moments& mo = moments_.at(p);
    auto it = grads.find(p);
    const Matrix* g = it == grads.end() ? nullptr : &it->second;
    Matrix& w = p->value;
    const double decay = config_.lr * config_.weight_decay;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g ? (*g)[i] : 0.0;
      w[i] -= decay * w[i];
      mo.m[i] = b1 * mo.m[i] + (1.0 - b1) * gi;
      mo.v[i] = b2 * mo.v[i] + (1.0 - b2) * gi * gi;
      const double mhat = mo.m[i] / c1;
      const double vhat = mo.v[i] / c2;
      w[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

}  // namespace tipsfuse::ad
