#include "tipsfuse/nn.hpp"

#include <cmath>

namespace tipsfuse::nn {

Tensor dropout(const Tensor& x, DropoutCtx ctx) {
  if (!ctx.active()) return x;
  const Matrix& v = x.value();
  Matrix mask(v.rows(), v.cols());
  std::bernoulli_distribution keep(1.0 - ctx.rate);
  const double s = 1.0 / (1.0 - ctx.rate);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = keep(*ctx.rng) ? s : 0.0;
  return ad::mul(x, x.tape()->constant(std::move(mask)));
}

Linear::Linear(std::string name, std::size_t in, std::size_t out)
    : weight{name + ".weight", Matrix(in, out)}, bias{name + ".bias", Matrix(1, out)} {}

void Linear::init_default(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim()));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& w : weight.value.values()) w = u(rng);
  for (auto& b : bias.value.values()) b = u(rng);
}

void Linear::init_lecun(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(in_dim())));
  for (auto& w : weight.value.values()) w = n(rng);
  bias.value.fill(0.0);
}

void Linear::zero() {
  weight.value.fill(0.0);
  bias.value.fill(0.0);
}

Tensor Linear::forward(const Binder& b, const Tensor& x) const {
  return ad::add(ad::matmul(x, b(weight)), b(bias));
}

void Linear::collect(ParamList& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

LayerNorm::LayerNorm(std::string name, std::size_t dim)
    : gain{name + ".gain", Matrix(1, dim, 1.0)}, shift{name + ".shift", Matrix(1, dim)} {}

Tensor LayerNorm::forward(const Binder& b, const Tensor& x) const {
  return ad::add(ad::mul(ad::layer_norm_rows(x), b(gain)), b(shift));
}

void LayerNorm::collect(ParamList& out) {
  out.push_back(&gain);
  out.push_back(&shift);
}

}  // namespace tipsfuse::nn
