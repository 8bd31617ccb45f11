#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "tipsfuse/tensor.hpp"

namespace tipsfuse::nn {

using ad::Matrix;
using ad::Parameter;
using ad::ParamList;
using ad::Tape;
using ad::Tensor;

using Rng = std::mt19937_64;

// Decides whether a forward pass records parameters as trainable leaves or
// as constants (frozen sub-models, inference, attribution).
class Binder {
 public:
  Binder(Tape& tape, bool trainable) : tape_(&tape), trainable_(trainable) {}

  Tensor operator()(const Parameter& p) const { return trainable_ ? tape_->param(p) : tape_->frozen(p); }
  Tape& tape() const { return *tape_; }
  bool trainable() const { return trainable_; }

 private:
  Tape* tape_;
  bool trainable_;
};

// Dropout state for one forward pass. Inactive when rng is null.
struct DropoutCtx {
  Rng* rng = nullptr;
  double rate = 0.0;

  bool active() const { return rng != nullptr && rate > 0.0; }
};

// Inverted dropout; identity when ctx is inactive.
Tensor dropout(const Tensor& x, DropoutCtx ctx);

// y = x W + b with W stored as in x out.
struct Linear {
  Parameter weight;
  Parameter bias;

  Linear() = default;
  Linear(std::string name, std::size_t in, std::size_t out);

  std::size_t in_dim() const { return weight.value.rows(); }
  std::size_t out_dim() const { return weight.value.cols(); }

  // Uniform(-1/sqrt(in), 1/sqrt(in)) for weight and bias.
  void init_default(Rng& rng);
  // Normal(0, 1/sqrt(in)) weights and zero bias, suited to SELU stacks.
  void init_lecun(Rng& rng);
  void zero();

  Tensor forward(const Binder& b, const Tensor& x) const;
  void collect(ParamList& out);
};

// Learned per-feature affine part of a layer norm.
struct LayerNorm {
  Parameter gain;
  Parameter shift;

  LayerNorm() = default;
  LayerNorm(std::string name, std::size_t dim);

  Tensor forward(const Binder& b, const Tensor& x) const;
  void collect(ParamList& out);
};

}  // namespace tipsfuse::nn
