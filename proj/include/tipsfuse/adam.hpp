#pragma once

#include <cstdint>
#include <unordered_map>

#include "tipsfuse/tensor.hpp"

namespace tipsfuse::ad {

struct AdamConfig {
  double lr = 2e-4;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with decoupled weight decay: p <- p - lr*wd*p is applied before the
// bias-corrected moment update. Parameters without a gradient entry are
// stepped with a zero gradient.
class Adam {
 public:
  Adam(ParamList params, AdamConfig config = {});

  void step(const GradMap& grads);

  std::int64_t step_count() const { return step_; }
  const AdamConfig& config() const { return config_; }
  const ParamList& params() const { return params_; }
  const Matrix& first_moment(const Parameter* p) const { return moments_.at(p).m; }
  const Matrix& second_moment(const Parameter* p) const { return moments_.at(p).v; }

 private:
  struct Moments {
    Matrix m;
    Matrix v;
  };

  ParamList params_;
  AdamConfig config_;
  std::unordered_map<const Parameter*, Moments> moments_;
  std::int64_t step_ = 0;
};

}  // namespace tipsfuse::ad
