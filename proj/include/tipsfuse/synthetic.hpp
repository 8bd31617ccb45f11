#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "tipsfuse/dataset.hpp"

namespace tipsfuse::data {

struct SyntheticSpec {
  std::size_t n_patients = 306;
  std::size_t deep_dim = 64;
  std::size_t bag_min = 12;  // deep bag rows drawn uniformly in [bag_min, bag_max]
  std::size_t bag_max = 24;
  std::size_t radiomics_groups = 8;  // Level II groups taken from the standard list
  double noise = 1.0;                // scales every noise term, including event-time spread
  double hazard_scale = 5.0;         // event rate exp(hazard_scale * r)
  double censor_rate = 0.3;          // probability that an outcome is censored
  double ppg_drop = 8.0;             // ppg_post = ppg_pre - (ppg_drop + ppg_gain * sigmoid(r)) + noise
  double ppg_gain = 6.0;
  double train_frac = 0.6;
  double val_frac = 0.2;
};

struct SyntheticData {
  PatientDataset dataset;
  std::vector<double> latent_risk;  // r per patient, same order
};

// Patients with a planted latent risk r ~ N(0,1) that shifts the deep bag
// along a fixed direction, loads onto radiomics and clinical values, and
// drives event rates and the pressure drop. Reproducible from the seed.
SyntheticData generate_synthetic(std::uint64_t seed, const SyntheticSpec& spec = {});

}  // namespace tipsfuse::data
