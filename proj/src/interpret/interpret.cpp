#include "tipsfuse/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "tipsfuse/dataset.hpp"
#include "tipsfuse/errors.hpp"

namespace tipsfuse::interpret {

IgResult integrated_gradients(const TargetFn& f, std::span<const Matrix> input, std::span<const Matrix> baseline,
                              std::size_t steps) {
  if (steps < kMinSteps) {
    throw std::invalid_argument("integrated gradients: need at least " + std::to_string(kMinSteps) + " steps");
  }
  if (input.size() != baseline.size()) throw ShapeError("integrated gradients: input and baseline block counts differ");
  for (std::size_t i = 0; i < input.size(); ++i) {
    if (!input[i].same_shape(baseline[i])) {
      throw ShapeError("integrated gradients: block " + std::to_string(i) + " is " + input[i].shape_string() +
                       " but its baseline is " + baseline[i].shape_string());
    }
  }

  IgResult out;
  out.steps = steps;
  std::vector<Matrix> avg;
  for (const auto& x : input) avg.emplace_back(x.rows(), x.cols());

  // Evaluates f at b + a (x - b) and adds weight * gradient into avg.
  auto visit = [&](double a, double weight) {
    Tape tape;
    std::vector<Tensor> xs;
    xs.reserve(input.size());
    for (std::size_t i = 0; i < input.size(); ++i) {
      Matrix p = baseline[i];
      for (std::size_t k = 0; k < p.size(); ++k) p[k] += a * (input[i][k] - baseline[i][k]);
      xs.push_back(tape.variable(std::move(p)));
    }
    const Tensor y = f(tape, xs);
    if (!y.valid() || y.rows() != 1 || y.cols() != 1) throw ShapeError("integrated gradients: target must be a scalar");
    tape.backward(y);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const Matrix g = tape.grad(xs[i]);
      for (std::size_t k = 0; k < g.size(); ++k) avg[i][k] += weight * g[k];
    }
    return y.item();
  };

  const double h = 1.0 / static_cast<double>(steps);
  out.target_baseline = visit(0.0, 0.5 * h);
  for (std::size_t s = 1; s < steps; ++s) visit(static_cast<double>(s) * h, h);
  out.target_input = visit(1.0, 0.5 * h);

  double total = 0.0;
  for (std::size_t i = 0; i < input.size(); ++i) {
    Matrix a(input[i].rows(), input[i].cols());
    for (std::size_t k = 0; k < a.size(); ++k) {
      a[k] = (input[i][k] - baseline[i][k]) * avg[i][k];
      total += a[k];
    }
    out.attributions.push_back(std::move(a));
  }
  out.residual = std::fabs(total - (out.target_input - out.target_baseline));
  return out;
}

std::string_view to_string(Target t) {
  switch (t) {
    case Target::risk_os: return "risk_os";
    case Target::delta_ppg: return "delta_ppg";
    case Target::risk_ohe: return "risk_ohe";
  }
  return "unknown";
}

Target parse_target(std::string_view s) {
  for (Target t : {Target::risk_os, Target::delta_ppg, Target::risk_ohe})
    if (s == to_string(t)) return t;
  throw ConfigError("unknown attribution target '" + std::string(s) + "' (expected risk_os, delta_ppg or risk_ohe)");
}

namespace {

Tensor model_target(const model::Model& m, Tape& tape, const fusion::InputTensors& in, Target target,
                    const fusion::Frozen* replay) {
  const auto r = m.backbone.forward(tape, in, {.replay = replay});
  const nn::Binder b(tape, false);
  switch (target) {
    case Target::risk_os: return heads::risk_score(m.survival.forward(b, r.h_final));
    case Target::risk_ohe: return heads::risk_score(m.ohe.forward(b, r.h_final));
    case Target::delta_ppg: return m.ppg.forward(b, r.h_final, in.clinical.at(data::kPressureGroup));
  }
  throw ConfigError("unsupported attribution target");
}

}  // namespace

AttributionReport attribute(const model::Model& m, const data::ModelInput& in, const data::GroupIndex& groups,
                            const data::FeatureNormalizer& normalizer, Target target, std::size_t steps,
                            const data::ModelInput* baseline) {
  const std::size_t n_rad = in.radiomics.size(), n_cli = in.clinical.size();
  if (n_rad != groups.group_count()) throw ShapeError("attribute: input does not match the group index");
  if (n_cli != data::kClinicalGroupCount) throw ShapeError("attribute: expected every clinical group");

  fusion::Frozen frozen;
  {
    Tape tape;
    frozen = m.backbone.forward(tape, in, {}).frozen;
  }

  std::vector<Matrix> x, b;
  for (const auto& g : in.radiomics) x.push_back(g);
  for (const auto& g : in.clinical) x.push_back(g);
  if (baseline) {
    for (const auto& g : baseline->radiomics) b.push_back(g);
    for (const auto& g : baseline->clinical) b.push_back(g);
  } else {
    for (const auto& g : x) b.emplace_back(g.rows(), g.cols());
  }

  const TargetFn f = [&](Tape& tape, std::span<const Tensor> xs) {
    fusion::InputTensors t;
    t.deep = tape.constant(in.deep);
    t.radiomics.assign(xs.begin(), xs.begin() + static_cast<std::ptrdiff_t>(n_rad));
    t.clinical.assign(xs.begin() + static_cast<std::ptrdiff_t>(n_rad), xs.end());
    return model_target(m, tape, t, target, &frozen);
  };
  const IgResult ig = integrated_gradients(f, x, b, steps);

  AttributionReport r;
  r.target = target;
  r.target_input = ig.target_input;
  r.target_baseline = ig.target_baseline;
  r.residual = ig.residual;
  r.steps = ig.steps;
  for (std::size_t g = 0; g < n_rad; ++g) {
    double group_abs = 0.0;
    const auto& members = groups.members[g];
    for (std::size_t k = 0; k < members.size(); ++k) {
      const double a = ig.attributions[g][k];
      r.radiomics.push_back({groups.feature_names[members[k]], a});
      group_abs += std::fabs(a);
    }
    r.radiomics_groups.push_back({groups.group_names[g], group_abs});
  }
  for (std::size_t g = 0; g < n_cli; ++g) {
    const auto names = normalizer.encoded_names(g);
    const Matrix& a = ig.attributions[n_rad + g];
    if (names.size() != a.size()) throw ShapeError("attribute: clinical group width does not match the normaliser");
    double group_abs = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      r.clinical.push_back({names[k], a[k]});
      group_abs += std::fabs(a[k]);
    }
    r.clinical_groups.push_back({data::clinical_group_keys()[g], group_abs});
  }
  return r;
}

std::vector<NamedValue> top_attributions(std::span<const NamedValue> values, std::size_t k) {
  if (k == 0) throw std::invalid_argument("top_attributions: k must be >= 1");
  std::vector<NamedValue> out(values.begin(), values.end());
  std::stable_sort(out.begin(), out.end(), [](const NamedValue& a, const NamedValue& b) {
    const double ma = std::fabs(a.value), mb = std::fabs(b.value);
    if (ma != mb) return ma > mb;
    return a.name < b.name;
  });
  if (out.size() > k) out.resize(k);
  return out;
}

void write_attribution_csv(std::ostream& out, const AttributionReport& r) {
  const std::string task(to_string(r.target));
  out << "task,scope,name,attribution\n";
  auto rows = [&](const char* scope, const std::vector<NamedValue>& values, const char* prefix) {
    for (const auto& v : values) out << task << ',' << scope << ',' << prefix << v.name << ',' << data::format_double(v.value) << '\n';
  };
  rows("level1", r.radiomics, "");
  rows("level2", r.radiomics_groups, "");
  rows("clinical", r.clinical, "");
  rows("clinical", r.clinical_groups, "group:");
}

std::vector<CoattentionGroup> rank_coattention(const Matrix& plan, std::span<const std::string> group_names,
                                               std::size_t k) {
  if (plan.cols() != group_names.size()) {
    throw ShapeError("coattention: plan has " + std::to_string(plan.cols()) + " columns for " +
                     std::to_string(group_names.size()) + " group names");
  }
  if (k == 0) throw std::invalid_argument("coattention: k must be >= 1");
  std::vector<CoattentionGroup> cols;
  for (std::size_t j = 0; j < plan.cols(); ++j) {
    CoattentionGroup c{j, group_names[j], 0.0, 0.0};
    for (std::size_t i = 0; i < plan.rows(); ++i) {
      c.mass += plan(i, j);
      c.peak = std::max(c.peak, plan(i, j));
    }
    cols.push_back(std::move(c));
  }
  std::stable_sort(cols.begin(), cols.end(), [](const CoattentionGroup& a, const CoattentionGroup& b) {
    if (a.mass != b.mass) return a.mass > b.mass;
    return a.peak > b.peak;
  });
  if (cols.size() > k) cols.resize(k);
  return cols;
}

void write_coattention_csv(std::ostream& out, const fusion::Frozen& frozen, std::span<const std::string> group_names,
                           std::size_t k) {
  const auto slot = static_cast<std::size_t>(fusion::PlanId::deep_radiomics);
  if (frozen.plans.size() <= slot || frozen.plans[slot].plan.empty()) {
    throw StateError("coattention export: no transport plans were retained; rerun the forward pass in rich mode "
                     "(keep ForwardResult::frozen)");
  }
  const Matrix& plan = frozen.plans[slot].plan;
  out << "deep_index,group,weight\n";
  for (const auto& g : rank_coattention(plan, group_names, k))
    for (std::size_t i = 0; i < plan.rows(); ++i)
      out << i << ',' << g.name << ',' << data::format_double(plan(i, g.column)) << '\n';
}

}  // namespace tipsfuse::interpret
