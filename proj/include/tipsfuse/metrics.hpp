#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "tipsfuse/matrix.hpp"
#include "tipsfuse/volume.hpp"

namespace tipsfuse::metrics {

// Harrell's C. Pair (i, j) is comparable when t_i < t_j and i is uncensored
// (c_i = 0); it is concordant when risk_i > risk_j, tied risks count half.
// Empty when no pair is comparable.
struct Concordance {
  std::optional<double> value;
  std::uint64_t comparable = 0;
};
Concordance concordance(std::span<const double> risks, std::span<const double> times,
                        std::span<const int> censored);
std::optional<double> concordance_index(std::span<const double> risks, std::span<const double> times,
                                        std::span<const int> censored);

// Two-level Brier average: per patient over evaluable bins, then per
// (label, censor) category, then over categories. survival is P x n with
// S_i(j) = prod_{k<=j} (1 - z_k); labels are 1-based bins.
struct BrierResult {
  double mbs = 0.0;
  std::size_t categories = 0;
  std::size_t excluded = 0;  // censored in the first bin: nothing evaluable
};
BrierResult mean_brier(const ad::Matrix& survival, std::span<const int> labels,
                       std::span<const int> censored);

struct ErrorStats {
  double mae = 0.0;
  double rmse = 0.0;
};
ErrorStats mae_rmse(std::span<const double> predicted, std::span<const double> truth);

// Product-limit estimate at each distinct event time.
struct KmCurve {
  std::vector<double> times;
  std::vector<double> survival;
  std::vector<std::size_t> at_risk;
  std::vector<std::size_t> events;

  double at(double t) const;  // step function, 1 before the first event
};
// event = 1 when the event was observed (the complement of a censor flag).
KmCurve km_curve(std::span<const double> times, std::span<const int> events);

struct LogRankResult {
  double statistic = 0.0;
  double p_value = 1.0;
};
LogRankResult logrank(std::span<const double> times_a, std::span<const int> events_a,
                      std::span<const double> times_b, std::span<const int> events_b);

// Regularised upper incomplete gamma Q(a, x).
double gamma_q(double a, double x);
double chi_square_sf(double x, double dof);

// Splits at the median risk; ties at the median join the low-risk group.
struct Strata {
  std::vector<std::size_t> high;
  std::vector<std::size_t> low;
};
Strata median_risk_stratify(std::span<const double> risks);
double median(std::vector<double> v);

struct Overlap {
  double dice = 1.0;
  double jaccard = 1.0;
};
Overlap dice_jaccard(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);
Overlap dice_jaccard(const data::LabelVolume& a, const data::LabelVolume& b);

// KM export: CSV `time,survival,at_risk,events,group` and an SVG step plot.
struct KmGroup {
  std::string name;
  KmCurve curve;
};
void write_km_csv(std::ostream& out, std::span<const KmGroup> groups);
std::string km_svg(std::span<const KmGroup> groups, std::optional<double> p_value,
                   const std::string& title);

}  // namespace tipsfuse::metrics
