#include "tipsfuse/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <string>

#include "tipsfuse/errors.hpp"

namespace tipsfuse::data {

namespace {

struct ItemSpec {
  const char* name;
  ClinicalKind kind;
  int levels;  // categorical only
  double center;
  double scale;
  double load;  // correlation with the latent risk
};

constexpr ClinicalKind kNum = ClinicalKind::numeric;
constexpr ClinicalKind kCat = ClinicalKind::categorical;

// Pressure items are generated separately so that PVP = IVCP + PPG holds.
const std::array<std::vector<ItemSpec>, kClinicalGroupCount>& item_table() {
  static const std::array<std::vector<ItemSpec>, kClinicalGroupCount> table = {{
      {{"Sex", kCat, 2, 0, 0, 0.0},
       {"Age", kNum, 0, 55, 10, 0.2},
       {"Etiology", kCat, 3, 0, 0, 0.3},
       {"PVT", kCat, 2, 0, 0, 0.3},
       {"SMVT", kCat, 2, 0, 0, 0.1},
       {"SVT", kCat, 2, 0, 0, 0.1},
       {"BCS", kCat, 2, 0, 0, 0.0},
       {"CTPV", kCat, 2, 0, 0, 0.2},
       {"HE", kCat, 3, 0, 0, 0.6},
       {"Ascites", kCat, 3, 0, 0, 0.6}},
      {{"Pre-IVCP", kNum, 0, 8, 3, 0.0},
       {"Pre-PVP", kNum, 0, 0, 0, 0.0},
       {"Pre-PPG", kNum, 0, 0, 0, 0.0}},
      {{"TBIL", kNum, 0, 30, 15, 0.7},
       {"ALB", kNum, 0, 32, 5, -0.6},
       {"Cr", kNum, 0, 80, 20, 0.4},
       {"ALT", kNum, 0, 40, 15, 0.2},
       {"Prolonged PT", kNum, 0, 4, 2, 0.5},
       {"INR", kNum, 0, 1.4, 0.3, 0.6},
       {"Na+", kNum, 0, 137, 4, -0.4},
       {"PLT", kNum, 0, 90, 40, -0.3},
       {"WBC", kNum, 0, 5, 2, 0.2}},
      {{"Child-Pugh score", kNum, 0, 8, 2, 0.8},
       {"Child-Pugh classification", kCat, 3, 0, 0, 0.8},
       {"MELD score", kNum, 0, 12, 4, 0.9},
       {"MELD classification", kCat, 3, 0, 0, 0.9},
       {"MELD-Na score", kNum, 0, 13, 4, 0.9},
       {"ALBI score", kNum, 0, -1.8, 0.5, 0.8},
       {"ALBI classification", kCat, 3, 0, 0, 0.8},
       {"FIPS score", kNum, 0, 0, 1, 0.9},
       {"CLIF-C AD score", kNum, 0, 50, 8, 0.7},
       {"CLIF-C AD classification", kCat, 3, 0, 0, 0.7}},
      {{"EBL", kCat, 2, 0, 0, 0.1},
       {"Partial splenectomy", kCat, 2, 0, 0, 0.0},
       {"EIS", kCat, 2, 0, 0, 0.1},
       {"GCVE", kCat, 2, 0, 0, 0.1},
       {"PSE", kCat, 2, 0, 0, 0.0}},
  }};
  return table;
}

double level_code(double z, int levels) {
  if (levels == 2) return z > 0.0 ? 1.0 : 0.0;
  // Tertiles of the standard normal.
  return z < -0.4307 ? 0.0 : z < 0.4307 ? 1.0 : 2.0;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

SyntheticData generate_synthetic(std::uint64_t seed, const SyntheticSpec& spec) {
  if (spec.n_patients < 4) throw DataError("synthetic data needs at least 4 patients");
  if (spec.deep_dim == 0 || spec.bag_min == 0 || spec.bag_max < spec.bag_min) {
    throw ConfigError("synthetic deep bag shape is invalid");
  }
  if (!(spec.noise >= 0.0) || !(spec.censor_rate >= 0.0) || spec.censor_rate >= 1.0) {
    throw ConfigError("synthetic noise must be >= 0 and censor_rate in [0, 1)");
  }

  // Structural draws (directions, loadings, scales) and per-patient draws use
  // separate streams so that changing n keeps the structure fixed.
  std::mt19937_64 structure(seed ^ 0x9e3779b97f4a7c15ULL);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const std::vector<std::string> all_names = standard_radiomics_names();
  const GroupIndex full = build_group_index(all_names);
  const std::size_t n_groups = std::clamp<std::size_t>(spec.radiomics_groups, 1, full.group_count());

  SyntheticData out;
  PatientDataset& ds = out.dataset;
  for (std::size_t k = 0; k < n_groups; ++k) {
    const std::size_t g = k * full.group_count() / n_groups;
    for (std::size_t j : full.members[g]) ds.radiomics_names.push_back(all_names[j]);
  }
  const std::size_t n_rad = ds.radiomics_names.size();
  std::vector<double> rad_load(n_rad), rad_scale(n_rad), rad_offset(n_rad);
  for (std::size_t j = 0; j < n_rad; ++j) {
    const double mag = 0.3 + 0.6 * unit(structure);
    rad_load[j] = unit(structure) < 0.5 ? -mag : mag;
    rad_scale[j] = std::pow(10.0, -2.0 + 5.0 * unit(structure));
    rad_offset[j] = rad_scale[j] * 5.0 * unit(structure);
  }
  std::vector<double> direction(spec.deep_dim), deep_mean(spec.deep_dim);
  double norm = 0.0;
  for (std::size_t c = 0; c < spec.deep_dim; ++c) {
    direction[c] = normal(structure);
    norm += direction[c] * direction[c];
    deep_mean[c] = 0.5 * normal(structure);
  }
  norm = std::sqrt(norm);
  for (double& v : direction) v /= norm;

  const double noise = spec.noise;
  std::uniform_int_distribution<std::size_t> bag(spec.bag_min, spec.bag_max);
  const auto& items = item_table();

  auto event_time = [&](double r) {
    std::exponential_distribution<double> expo(1.0);
    const double e = std::max(expo(rng), 1e-300);
    const double raw = std::exp(-spec.hazard_scale * r) * std::pow(e, noise);
    return std::max(80.0 * raw / (raw + 2.0), 1e-9);
  };
  auto censor = [&](double& t, int& c) {
    c = unit(rng) < spec.censor_rate ? 1 : 0;
    if (c) t *= 0.1 + 0.9 * unit(rng);
  };

  for (std::size_t i = 0; i < spec.n_patients; ++i) {
    PatientRecord p;
    char id[16];
    std::snprintf(id, sizeof id, "P%04zu", i + 1);
    p.id = id;
    const double r = normal(rng);
    out.latent_risk.push_back(r);

    const std::size_t rows = bag(rng);
    p.deep = Matrix(rows, spec.deep_dim);
    for (std::size_t a = 0; a < rows; ++a)
      for (std::size_t c = 0; c < spec.deep_dim; ++c)
        p.deep(a, c) = deep_mean[c] + r * direction[c] + noise * normal(rng);

    p.radiomics.resize(n_rad);
    for (std::size_t j = 0; j < n_rad; ++j) {
      p.radiomics[j] = rad_offset[j] + rad_scale[j] * (rad_load[j] * r + 0.8 * noise * normal(rng));
    }

    for (std::size_t g = 0; g < kClinicalGroupCount; ++g) {
      for (const ItemSpec& s : items[g]) {
        const double z = s.load * r + noise * std::sqrt(1.0 - s.load * s.load) * normal(rng);
        const double v = s.kind == kCat ? level_code(z, s.levels) : s.center + s.scale * z;
        p.clinical.groups[g].push_back({s.name, s.kind, v});
      }
    }
    auto& pressure = p.clinical.groups[kPressureGroup];
    const double ivcp = std::max(pressure[0].value, 1.0);
    const double ppg_pre = std::max(22.0 + 6.0 * (0.3 * r + noise * normal(rng)), 3.0);
    pressure[0].value = ivcp;
    pressure[1].value = ivcp + ppg_pre;
    pressure[2].value = ppg_pre;

    Outcomes& o = p.outcomes;
    o.ppg_pre = ppg_pre;
    o.ppg_post = std::max(ppg_pre - (spec.ppg_drop + spec.ppg_gain * sigmoid(r)) + 1.5 * noise * normal(rng), 0.0);
    o.t_os = event_time(r);
    censor(o.t_os, o.c_os);
    o.t_ohe = event_time(r);
    censor(o.t_ohe, o.c_ohe);
    ds.patients.push_back(std::move(p));
  }
  assign_splits(ds, seed + 1, spec.train_frac, spec.val_frac);
  return out;
}

}  // namespace tipsfuse::data
