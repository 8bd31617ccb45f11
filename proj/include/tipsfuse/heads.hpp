#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tipsfuse/nn.hpp"

namespace tipsfuse::heads {

using ad::Matrix;
using ad::ParamList;
using ad::Tensor;
using nn::Binder;
using nn::Rng;

// Discrete follow-up intervals from interior cut points t_1 < ... < t_{n-1}.
struct TimeBins {
  std::vector<double> cuts;

  std::size_t n() const { return cuts.size() + 1; }
  // 1-based label: the first j with t < t_j, else n.
  int bin(double t) const;
};

// Cut points at the evenly spaced percentiles (quartiles for n = 4) of the
// uncensored times. censored[i] = 1 marks a censored record.
TimeBins make_time_bins(std::span<const double> times, std::span<const int> censored, std::size_t n = 4);

// in -> h1 -> h2 -> n with ReLU, sigmoid hazards out.
struct HazardHead {
  nn::Linear l1, l2, l3;

  HazardHead() = default;
  HazardHead(const std::string& name, std::size_t in, std::size_t h1, std::size_t h2, std::size_t n);
  void init(Rng& rng);
  Tensor forward(const Binder& b, const Tensor& h) const;  // 1 x n
  void collect(ParamList& out);
};

// Main path in -> h1 -> h2 and pressure subnet p_in -> h3, merged to one
// unit and bounded by scale * tanh.
struct PpgHead {
  nn::Linear l1, l2, pressure, merge;
  double scale = 50.0;

  PpgHead() = default;
  PpgHead(const std::string& name, std::size_t in, std::size_t h1, std::size_t h2, std::size_t p_in,
          std::size_t h3, double scale);
  void init(Rng& rng);
  Tensor forward(const Binder& b, const Tensor& h, const Tensor& pressure_values) const;  // 1 x 1
  void collect(ParamList& out);
};

// Row of cumulative products prod_{k<=j} (1 - z_k).
Tensor survival_curve(const Tensor& z);
std::vector<double> survival_curve(std::span<const double> z);

// Discrete-time negative log-likelihood; y is 1-based, censored in {0, 1}.
Tensor nll_loss(const Tensor& z, int y, int censored);

// Negative sum of the survival curve, in [-n, 0].
Tensor risk_score(const Tensor& z);
double risk_score(std::span<const double> z);

// Squared error between the observed post value and pre + delta.
Tensor ppg_loss(const Tensor& delta, double pre, double post);

}  // namespace tipsfuse::heads
