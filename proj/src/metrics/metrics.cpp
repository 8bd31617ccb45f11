#include "tipsfuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "tipsfuse/errors.hpp"

namespace tipsfuse::metrics {

namespace {

void check_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": lengths " + std::to_string(a) + " and " + std::to_string(b));
  }
}

}  // namespace

Concordance concordance(std::span<const double> risks, std::span<const double> times,
                        std::span<const int> censored) {
  check_same_length(risks.size(), times.size(), "concordance");
  check_same_length(risks.size(), censored.size(), "concordance");
  // Credit is counted in half units so the tally stays exact.
  std::uint64_t halves = 0, comparable = 0;
  for (std::size_t i = 0; i < risks.size(); ++i) {
    if (censored[i]) continue;
    for (std::size_t j = 0; j < risks.size(); ++j) {
      if (!(times[i] < times[j])) continue;
      ++comparable;
      if (risks[i] > risks[j]) {
        halves += 2;
      } else if (risks[i] == risks[j]) {
        halves += 1;
      }
    }
  }
  Concordance c;
  c.comparable = comparable;
  if (comparable > 0) c.value = static_cast<double>(halves) / (2.0 * static_cast<double>(comparable));
  return c;
}

std::optional<double> concordance_index(std::span<const double> risks, std::span<const double> times,
                                        std::span<const int> censored) {
  return concordance(risks, times, censored).value;
}

BrierResult mean_brier(const ad::Matrix& survival, std::span<const int> labels,
                       std::span<const int> censored) {
  check_same_length(survival.rows(), labels.size(), "mean_brier");
  check_same_length(survival.rows(), censored.size(), "mean_brier");
  const int n = static_cast<int>(survival.cols());
  std::map<std::pair<int, int>, std::pair<double, std::size_t>> cats;
  BrierResult out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 1 || y > n) throw DataError("mean_brier: label " + std::to_string(y) + " outside 1.." + std::to_string(n));
    const int evaluable = censored[i] ? y - 1 : n;
    if (evaluable == 0) {
      ++out.excluded;
      continue;
    }
    double s = 0.0;
    for (int j = 1; j <= evaluable; ++j) {
      const double o = j < y ? 1.0 : 0.0;
      const double d = survival(i, static_cast<std::size_t>(j - 1)) - o;
      s += d * d;
    }
    auto& cell = cats[{y, censored[i]}];
    cell.first += s / evaluable;
    ++cell.second;
  }
  if (cats.empty()) throw NumericError("mean_brier: no patient has an evaluable bin");
  double total = 0.0;
  for (const auto& [key, cell] : cats) total += cell.first / static_cast<double>(cell.second);
  out.categories = cats.size();
  out.mbs = total / static_cast<double>(cats.size());
  return out;
}

ErrorStats mae_rmse(std::span<const double> predicted, std::span<const double> truth) {
  check_same_length(predicted.size(), truth.size(), "mae_rmse");
  if (predicted.empty()) throw DataError("mae_rmse: empty input");
  double a = 0.0, s = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double e = predicted[i] - truth[i];
    a += std::fabs(e);
    s += e * e;
  }
  const double n = static_cast<double>(predicted.size());
  return {a / n, std::sqrt(s / n)};
}

double KmCurve::at(double t) const {
  double s = 1.0;
  for (std::size_t k = 0; k < times.size() && times[k] <= t; ++k) s = survival[k];
  return s;
}

KmCurve km_curve(std::span<const double> times, std::span<const int> events) {
  check_same_length(times.size(), events.size(), "km_curve");
  std::vector<std::size_t> order(times.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return times[a] < times[b]; });
  KmCurve km;
  std::size_t at_risk = times.size();
  double s = 1.0;
  for (std::size_t k = 0; k < order.size();) {
    const double t = times[order[k]];
    std::size_t d = 0, leaving = 0;
    while (k < order.size() && times[order[k]] == t) {
      d += events[order[k]] ? 1 : 0;
      ++leaving;
      ++k;
    }
    if (d > 0) {
      s *= 1.0 - static_cast<double>(d) / static_cast<double>(at_risk);
      km.times.push_back(t);
      km.survival.push_back(s);
      km.at_risk.push_back(at_risk);
      km.events.push_back(d);
    }
    at_risk -= leaving;
  }
  return km;
}

double gamma_q(double a, double x) {
  if (!(a > 0.0) || !(x >= 0.0)) throw std::invalid_argument("gamma_q: need a > 0 and x >= 0");
  if (x == 0.0) return 1.0;
  const double lg = std::lgamma(a);
  constexpr int kMaxIter = 1000;
  constexpr double kEps = 1e-16;
  if (x < a + 1.0) {
    // Series for P(a, x).
    double term = 1.0 / a, sum = term, ap = a;
    for (int n = 0; n < kMaxIter; ++n) {
      ap += 1.0;
      term *= x / ap;
      sum += term;
      if (std::fabs(term) < std::fabs(sum) * kEps) break;
    }
    return 1.0 - sum * std::exp(-x + a * std::log(x) - lg);
  }
  // Lentz continued fraction for Q(a, x).
  constexpr double kTiny = 1e-300;
  double b = x + 1.0 - a, c = 1.0 / kTiny, d = 1.0 / b, h = d;
  for (int i = 1; i <= kMaxIter; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = b + an / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return std::exp(-x + a * std::log(x) - lg) * h;
}

double chi_square_sf(double x, double dof) {
  if (x <= 0.0) return 1.0;
  return std::clamp(gamma_q(0.5 * dof, 0.5 * x), 0.0, 1.0);
}

LogRankResult logrank(std::span<const double> times_a, std::span<const int> events_a,
                      std::span<const double> times_b, std::span<const int> events_b) {
  check_same_length(times_a.size(), events_a.size(), "logrank group A");
  check_same_length(times_b.size(), events_b.size(), "logrank group B");
  if (times_a.empty() || times_b.empty()) throw DataError("logrank: both groups must be non-empty");
  struct Obs {
    double t;
    int event;
    int group;
  };
  std::vector<Obs> all;
  for (std::size_t i = 0; i < times_a.size(); ++i) all.push_back({times_a[i], events_a[i] ? 1 : 0, 0});
  for (std::size_t i = 0; i < times_b.size(); ++i) all.push_back({times_b[i], events_b[i] ? 1 : 0, 1});
  std::sort(all.begin(), all.end(), [](const Obs& a, const Obs& b) { return a.t < b.t; });

  double n_a = static_cast<double>(times_a.size()), n_b = static_cast<double>(times_b.size());
  double o_minus_e = 0.0, var = 0.0;
  for (std::size_t k = 0; k < all.size();) {
    const double t = all[k].t;
    double d_a = 0, d = 0, left_a = 0, left_b = 0;
    while (k < all.size() && all[k].t == t) {
      d += all[k].event;
      if (all[k].group == 0) {
        d_a += all[k].event;
        ++left_a;
      } else {
        ++left_b;
      }
      ++k;
    }
    const double n = n_a + n_b;
    if (d > 0) {
      o_minus_e += d_a - d * n_a / n;
      if (n > 1) var += n_a * n_b * d * (n - d) / (n * n * (n - 1));
    }
    n_a -= left_a;
    n_b -= left_b;
  }
  LogRankResult r;
  if (var <= 0.0) return r;
  r.statistic = o_minus_e * o_minus_e / var;
  r.p_value = chi_square_sf(r.statistic, 1.0);
  return r;
}

double median(std::vector<double> v) {
  if (v.empty()) throw DataError("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

Strata median_risk_stratify(std::span<const double> risks) {
  if (risks.size() < 2) throw DataError("median_risk_stratify: need at least 2 patients");
  const double m = median(std::vector<double>(risks.begin(), risks.end()));
  Strata s;
  for (std::size_t i = 0; i < risks.size(); ++i) (risks[i] > m ? s.high : s.low).push_back(i);
  return s;
}

Overlap dice_jaccard(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  check_same_length(a.size(), b.size(), "dice_jaccard");
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] != 0, y = b[i] != 0;
    na += x;
    nb += y;
    both += x && y;
  }
  if (na + nb == 0) return {1.0, 1.0};
  const double inter = static_cast<double>(both);
  return {2.0 * inter / static_cast<double>(na + nb), inter / static_cast<double>(na + nb - both)};
}

Overlap dice_jaccard(const data::LabelVolume& a, const data::LabelVolume& b) {
  if (a.dims != b.dims) throw ShapeError("dice_jaccard: volume dims differ");
  return dice_jaccard(std::span<const std::uint8_t>(a.voxels), std::span<const std::uint8_t>(b.voxels));
}

void write_km_csv(std::ostream& out, std::span<const KmGroup> groups) {
  out << "time,survival,at_risk,events,group\n";
  char buf[64];
  for (const auto& g : groups) {
    for (std::size_t k = 0; k < g.curve.times.size(); ++k) {
      std::snprintf(buf, sizeof buf, "%.17g,%.17g", g.curve.times[k], g.curve.survival[k]);
      out << buf << ',' << g.curve.at_risk[k] << ',' << g.curve.events[k] << ',' << g.name << '\n';
    }
  }
}

std::string km_svg(std::span<const KmGroup> groups, std::optional<double> p_value,
                   const std::string& title) {
  constexpr double kW = 480, kH = 320, kL = 50, kR = 20, kT = 30, kB = 40;
  double t_max = 1.0;
  for (const auto& g : groups)
    if (!g.curve.times.empty()) t_max = std::max(t_max, g.curve.times.back());
  auto px = [&](double t) { return kL + (kW - kL - kR) * t / t_max; };
  auto py = [&](double s) { return kT + (kH - kT - kB) * (1.0 - s); };
  static const char* colours[] = {"#d62728", "#1f77b4", "#2ca02c", "#9467bd"};

  std::ostringstream svg;
  svg.setf(std::ios::fixed);
  svg.precision(2);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << kL << "\" y=\"20\" font-size=\"14\">" << title << "</text>\n";
  svg << "<line x1=\"" << kL << "\" y1=\"" << py(0) << "\" x2=\"" << kW - kR << "\" y2=\"" << py(0)
      << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << kL << "\" y1=\"" << py(0) << "\" x2=\"" << kL << "\" y2=\"" << py(1)
      << "\" stroke=\"black\"/>\n";
  svg << "<text x=\"" << kL << "\" y=\"" << kH - 10 << "\" font-size=\"11\">Time (months), max "
      << t_max << "</text>\n";
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& c = groups[gi].curve;
    svg << "<path fill=\"none\" stroke=\"" << colours[gi % 4] << "\" d=\"M" << px(0) << ' ' << py(1);
    double s = 1.0;
    for (std::size_t k = 0; k < c.times.size(); ++k) {
      svg << " H" << px(c.times[k]) << " V" << py(c.survival[k]);
      s = c.survival[k];
    }
    svg << " H" << px(t_max) << " V" << py(s) << "\"/>\n";
    svg << "<text x=\"" << kW - 140 << "\" y=\"" << kT + 15 * (gi + 1) << "\" font-size=\"11\" fill=\""
        << colours[gi % 4] << "\">" << groups[gi].name << "</text>\n";
  }
  if (p_value) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "log-rank p = %.4g", *p_value);
    svg << "<text x=\"" << kL + 10 << "\" y=\"" << py(0) - 10 << "\" font-size=\"12\">" << buf << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace tipsfuse::metrics
