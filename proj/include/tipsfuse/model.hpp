#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tipsfuse/adam.hpp"
#include "tipsfuse/dataset.hpp"
#include "tipsfuse/fusion.hpp"
#include "tipsfuse/heads.hpp"
#include "tipsfuse/metrics.hpp"
#include "tipsfuse/radiomics.hpp"

namespace tipsfuse::model {

using ad::Matrix;
using ad::ParamList;
using data::ModelInput;

struct ModelConfig {
  fusion::BackboneConfig backbone;
  std::size_t hidden1 = 256;
  std::size_t hidden2 = 64;
  std::size_t pressure_hidden = 16;
  std::size_t n_bins = 4;
  double ppg_scale = 50.0;
};

// Backbone, the three task heads and the fitted time bins.
struct Model {
  ModelConfig cfg;
  fusion::Backbone backbone;
  heads::HazardHead survival;
  heads::HazardHead ohe;
  heads::PpgHead ppg;
  heads::TimeBins os_bins;
  heads::TimeBins ohe_bins;
  fusion::PodState pod;

  Model() = default;
  Model(ModelConfig cfg, std::uint64_t seed);

  ParamList survival_params();  // backbone then survival head
  ParamList all_params();
  std::vector<const ad::Parameter*> all_params() const;
};

// Pressure-related clinical values feed the PPG subnet.
const Matrix& pressure_values(const ModelInput& in);

struct Prediction {
  std::vector<double> hazards_os;
  std::vector<double> hazards_ohe;
  double risk_os = 0.0;
  double risk_ohe = 0.0;
  double delta_ppg = 0.0;
  double ppg_post = 0.0;  // ppg_pre + delta_ppg
};

// Eval-mode pass: no dropout, no orthogonality bookkeeping.
Prediction predict(const Model& m, const ModelInput& in);
// Fans patients out over worker threads; threads = 0 reads TIPSFUSE_THREADS
// and falls back to the hardware count. Output order follows the input.
std::vector<Prediction> predict_all(const Model& m, std::span<const ModelInput> inputs, std::size_t threads = 0);
std::size_t worker_threads();

struct TrainConfig {
  long e0 = 20;
  long e1 = 20;
  long e2 = 20;
  double delta = 0.1;
  ad::AdamConfig adam;
  std::uint64_t seed = 0;
};

struct LogRow {
  long epoch = 0;  // 1-based, counted across stages
  std::string stage;
  double loss = 0.0;
  std::string metric_name;
  std::optional<double> metric_value;
};

using Progress = std::function<void(const LogRow&)>;

// Stage I trains backbone and survival head on L_surv + delta L_ortho;
// Stage II-a trains a fresh PPG head and II-b a fresh OHE head on cached
// representations of the frozen backbone. Each stage keeps its best epoch on
// the validation split. Time bins are fitted on `train`.
std::vector<LogRow> staged_train(Model& m, std::span<const ModelInput> train, std::span<const ModelInput> val,
                                 const TrainConfig& cfg, const Progress& progress = {});

void write_run_log(std::ostream& out, std::span<const LogRow> rows);

struct EvalReport {
  std::size_t patients = 0;
  std::optional<double> cindex_os;  // empty when no pair is comparable or risks are constant
  std::optional<double> cindex_ohe;
  double mbs_os = 0.0;
  double mbs_ohe = 0.0;
  metrics::ErrorStats ppg;
};

EvalReport evaluate(const Model& m, std::span<const ModelInput> inputs, std::span<const Prediction> preds);

// Survival-curve matrix, one row per prediction.
Matrix survival_matrix(std::span<const Prediction> preds, bool ohe);

// Normalised model inputs of every split, with the normaliser fitted on train.
struct PreparedData {
  data::FeatureNormalizer normalizer;
  data::GroupIndex groups;
  std::vector<ModelInput> train, val, test;

  const std::vector<ModelInput>& split(data::Split s) const;
};
PreparedData prepare(const data::PatientDataset& ds);
PreparedData prepare(const data::PatientDataset& ds, data::FeatureNormalizer normalizer);

// Input sizes of the backbone taken from prepared data.
void fit_input_sizes(ModelConfig& cfg, const PreparedData& data);

}  // namespace tipsfuse::model
