#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tipsfuse/model.hpp"

namespace tipsfuse::interpret {

using ad::Matrix;
using ad::Tape;
using ad::Tensor;

// Scalar function of a list of input blocks.
using TargetFn = std::function<Tensor(Tape&, std::span<const Tensor>)>;

struct IgResult {
  std::vector<Matrix> attributions;  // same shapes as the inputs
  double target_input = 0.0;
  double target_baseline = 0.0;
  double residual = 0.0;  // |sum of attributions - (f(x) - f(b))|
  std::size_t steps = 0;
};

inline constexpr std::size_t kMinSteps = 16;
inline constexpr std::size_t kDefaultSteps = 256;

// Path integral of the gradient from baseline to input along a straight line,
// trapezoid rule over `steps` intervals, times (x - b).
IgResult integrated_gradients(const TargetFn& f, std::span<const Matrix> input, std::span<const Matrix> baseline,
                              std::size_t steps = kDefaultSteps);

enum class Target { risk_os, delta_ppg, risk_ohe };
std::string_view to_string(Target t);
Target parse_target(std::string_view s);

struct NamedValue {
  std::string name;
  double value = 0.0;
};

struct AttributionReport {
  Target target = Target::risk_os;
  std::vector<NamedValue> radiomics;        // signed, one per radiomics element
  std::vector<NamedValue> radiomics_groups;  // sum of |element| per Level II group
  std::vector<NamedValue> clinical;          // signed, one per encoded clinical column
  std::vector<NamedValue> clinical_groups;   // sum of |column| per clinical group
  double target_input = 0.0;
  double target_baseline = 0.0;
  double residual = 0.0;
  std::size_t steps = 0;
};

// Attributes one model output to the radiomics and clinical inputs of one
// patient. Transport plans are solved once at the input and held fixed along
// the path; the deep bag stays at its observed value. An empty baseline means
// all zeros.
AttributionReport attribute(const model::Model& m, const data::ModelInput& in, const data::GroupIndex& groups,
                            const data::FeatureNormalizer& normalizer, Target target,
                            std::size_t steps = kDefaultSteps, const data::ModelInput* baseline = nullptr);

// Largest |value| first; equal magnitudes by name.
std::vector<NamedValue> top_attributions(std::span<const NamedValue> values, std::size_t k);

// CSV `task,scope,name,attribution` with scopes level1, level2 and clinical.
void write_attribution_csv(std::ostream& out, const AttributionReport& r);

struct CoattentionGroup {
  std::size_t column = 0;
  std::string name;
  double mass = 0.0;
  double peak = 0.0;
};

// Ranks the columns of the deep-to-radiomics plan by mass, then peak weight,
// then column order, and keeps k of them.
std::vector<CoattentionGroup> rank_coattention(const Matrix& plan, std::span<const std::string> group_names,
                                               std::size_t k);

// CSV `deep_index,group,weight` for the k top-ranked groups. Throws StateError
// when the forward pass kept no plans.
void write_coattention_csv(std::ostream& out, const fusion::Frozen& frozen, std::span<const std::string> group_names,
                           std::size_t k);

}  // namespace tipsfuse::interpret
