#include "tipsfuse/heads.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "tipsfuse/errors.hpp"
#include "tipsfuse/fusion.hpp"

namespace tipsfuse::heads {

int TimeBins::bin(double t) const {
  const auto it = std::upper_bound(cuts.begin(), cuts.end(), t);
  return static_cast<int>(it - cuts.begin()) + 1;
}

TimeBins make_time_bins(std::span<const double> times, std::span<const int> censored, std::size_t n) {
  if (n < 2) throw ConfigError("time bins: need at least 2 bins");
  if (times.size() != censored.size()) throw ShapeError("time bins: times and censor flags differ in length");
  std::vector<double> events;
  for (std::size_t i = 0; i < times.size(); ++i)
    if (censored[i] == 0) events.push_back(times[i]);
  const std::set<double> distinct(events.begin(), events.end());
  if (distinct.size() < n) {
    throw DataError("time bins: " + std::to_string(distinct.size()) + " distinct uncensored times, need " +
                    std::to_string(n));
  }
  TimeBins bins;
  for (std::size_t j = 1; j < n; ++j)
    bins.cuts.push_back(fusion::percentile(events, 100.0 * static_cast<double>(j) / static_cast<double>(n)));
  for (std::size_t j = 1; j < bins.cuts.size(); ++j) {
    if (!(bins.cuts[j] > bins.cuts[j - 1])) throw DataError("time bins: tied cut points from repeated times");
  }
  return bins;
}

HazardHead::HazardHead(const std::string& name, std::size_t in, std::size_t h1, std::size_t h2, std::size_t n)
    : l1(name + ".l1", in, h1), l2(name + ".l2", h1, h2), l3(name + ".l3", h2, n) {}

void HazardHead::init(Rng& rng) {
  l1.init_default(rng);
  l2.init_default(rng);
  l3.init_default(rng);
}

Tensor HazardHead::forward(const Binder& b, const Tensor& h) const {
  return ad::sigmoid(l3.forward(b, ad::relu(l2.forward(b, ad::relu(l1.forward(b, h))))));
}

void HazardHead::collect(ParamList& out) {
  l1.collect(out);
  l2.collect(out);
  l3.collect(out);
}

PpgHead::PpgHead(const std::string& name, std::size_t in, std::size_t h1, std::size_t h2, std::size_t p_in,
                 std::size_t h3, double s)
    : l1(name + ".l1", in, h1),
      l2(name + ".l2", h1, h2),
      pressure(name + ".pressure", p_in, h3),
      merge(name + ".merge", h2 + h3, 1),
      scale(s) {
  if (!(s > 0.0)) throw ConfigError("ppg head: output scale must be positive");
}

void PpgHead::init(Rng& rng) {
  l1.init_default(rng);
  l2.init_default(rng);
  pressure.init_default(rng);
  merge.init_default(rng);
}

Tensor PpgHead::forward(const Binder& b, const Tensor& h, const Tensor& pressure_values) const {
  if (!pressure_values.valid()) throw ShapeError("ppg head: missing pressure group");
  if (pressure_values.cols() != pressure.in_dim()) {
    throw ShapeError("ppg head: pressure group has " + std::to_string(pressure_values.cols()) +
                     " columns, expected " + std::to_string(pressure.in_dim()));
  }
  Tensor main = ad::relu(l2.forward(b, ad::relu(l1.forward(b, h))));
  Tensor side = ad::relu(pressure.forward(b, pressure_values));
  return ad::scale(ad::tanh(merge.forward(b, ad::concat_cols(std::vector<Tensor>{main, side}))), scale);
}

void PpgHead::collect(ParamList& out) {
  l1.collect(out);
  l2.collect(out);
  pressure.collect(out);
  merge.collect(out);
}

Tensor survival_curve(const Tensor& z) {
  if (z.rows() != 1 || z.cols() == 0) throw ShapeError("survival curve: expected a 1 x n hazard row");
  const Tensor keep = ad::add_scalar(ad::scale(z, -1.0), 1.0);
  std::vector<Tensor> cum{ad::slice_cols(keep, 0, 1)};
  for (std::size_t j = 1; j < z.cols(); ++j) cum.push_back(ad::mul(cum.back(), ad::slice_cols(keep, j, 1)));
  return ad::concat_cols(cum);
}

std::vector<double> survival_curve(std::span<const double> z) {
  std::vector<double> s(z.size());
  double acc = 1.0;
  for (std::size_t j = 0; j < z.size(); ++j) s[j] = acc *= 1.0 - z[j];
  return s;
}

Tensor nll_loss(const Tensor& z, int y, int censored) {
  const auto n = static_cast<int>(z.cols());
  if (y < 1 || y > n) throw std::invalid_argument("nll_loss: label " + std::to_string(y) + " outside 1.." + std::to_string(n));
  if (censored != 0 && censored != 1) throw std::invalid_argument("nll_loss: censor flag must be 0 or 1");
  const Tensor s = survival_curve(z);
  auto log_f = [&](int k) {  // log f(Z, k); the empty product is 1
    return k == 0 ? z.tape()->constant(Matrix(1, 1, 0.0)) : ad::log_clamped(ad::slice_cols(s, k - 1, 1));
  };
  if (censored == 1) return ad::scale(log_f(y), -1.0);
  return ad::scale(ad::add(log_f(y - 1), ad::log_clamped(ad::slice_cols(z, y - 1, 1))), -1.0);
}

Tensor risk_score(const Tensor& z) { return ad::scale(ad::sum_all(survival_curve(z)), -1.0); }

double risk_score(std::span<const double> z) {
  double r = 0.0;
  for (double s : survival_curve(z)) r -= s;
  return r;
}

Tensor ppg_loss(const Tensor& delta, double pre, double post) {
  if (delta.rows() != 1 || delta.cols() != 1) throw ShapeError("ppg_loss: expected a scalar prediction");
  const Tensor err = ad::add_scalar(delta, pre - post);
  return ad::mul(err, err);
}

}  // namespace tipsfuse::heads
