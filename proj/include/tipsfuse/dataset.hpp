#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "tipsfuse/matrix.hpp"
#include "tipsfuse/radiomics.hpp"

namespace tipsfuse::data {

using ad::Matrix;

enum class ClinicalKind { numeric, categorical };
enum class Split { train, val, test };

std::string_view to_string(ClinicalKind k);
std::string_view to_string(Split s);
ClinicalKind parse_kind(std::string_view s);
Split parse_split(std::string_view s);

inline constexpr std::size_t kClinicalGroupCount = 5;
inline constexpr std::size_t kPressureGroup = 1;
// Group keys used in files, in model order.
const std::array<std::string, kClinicalGroupCount>& clinical_group_keys();
std::size_t clinical_group_index(std::string_view key);

struct ClinicalItem {
  std::string name;
  ClinicalKind kind = ClinicalKind::numeric;
  double value = 0.0;  // categorical: integer level code
  bool operator==(const ClinicalItem&) const = default;
};

struct ClinicalRecord {
  std::array<std::vector<ClinicalItem>, kClinicalGroupCount> groups;
  bool operator==(const ClinicalRecord&) const = default;
};

struct Outcomes {
  double t_os = 1.0;  // months
  int c_os = 0;       // 1 = censored
  double t_ohe = 1.0;
  int c_ohe = 0;
  double ppg_pre = 0.0;  // mmHg
  double ppg_post = 0.0;
  bool operator==(const Outcomes&) const = default;
};

void validate(const Outcomes& o, std::string_view id);

struct PatientRecord {
  std::string id;
  Matrix deep;  // N_d x deep_dim voxel features
  std::vector<double> radiomics;
  ClinicalRecord clinical;
  Outcomes outcomes;
  Split split = Split::train;
  bool operator==(const PatientRecord&) const = default;
};

struct PatientDataset {
  std::vector<std::string> radiomics_names;
  std::vector<PatientRecord> patients;

  std::size_t size() const { return patients.size(); }
  std::size_t deep_dim() const;
  std::vector<std::size_t> indices(Split s) const;
};

// Deterministic shuffled assignment; every split receives at least one
// patient. The remainder after train and val goes to test.
void assign_splits(PatientDataset& ds, std::uint64_t seed, double train_frac, double val_frac);

// Min-max scaling fitted on one split. Numeric values map to [0,1] (clamped
// outside the fitted range); categorical values expand into one-hot columns
// "<name>_bit<k>" over the levels seen during fitting.
class FeatureNormalizer {
 public:
  struct Column {
    std::string name;
    ClinicalKind kind = ClinicalKind::numeric;
    double min = 0.0;
    double max = 0.0;
    std::vector<double> levels;  // categorical only, ascending
  };

  FeatureNormalizer() = default;
  static FeatureNormalizer fit(const PatientDataset& ds, Split split = Split::train);

  PatientRecord apply(const PatientRecord& p) const;
  PatientDataset apply(const PatientDataset& ds) const;

  const std::vector<double>& radiomics_min() const { return rad_min_; }
  const std::vector<double>& radiomics_max() const { return rad_max_; }
  const std::array<std::vector<Column>, kClinicalGroupCount>& clinical_columns() const {
    return columns_;
  }
  // Names of the encoded columns of one clinical group.
  std::vector<std::string> encoded_names(std::size_t group) const;
  std::size_t encoded_width(std::size_t group) const;
  const std::vector<std::string>& warnings() const { return warnings_; }

  static FeatureNormalizer from_parts(std::vector<double> rad_min, std::vector<double> rad_max,
                                      std::array<std::vector<Column>, kClinicalGroupCount> cols);

 private:
  std::vector<double> rad_min_, rad_max_;
  std::array<std::vector<Column>, kClinicalGroupCount> columns_;
  std::vector<std::string> warnings_;
};

double min_max_scale(double v, double lo, double hi);

// One patient laid out for the model: radiomics values split by Level II
// group, clinical values per group (already encoded).
struct ModelInput {
  std::string id;
  Matrix deep;
  std::vector<Matrix> radiomics;  // 1 x |group| each
  std::vector<Matrix> clinical;   // 1 x width each, kClinicalGroupCount entries
  Outcomes outcomes;
  Split split = Split::train;
};

ModelInput make_model_input(const PatientRecord& normalized, const GroupIndex& groups);

struct DatasetPaths {
  std::filesystem::path deep_dir;
  std::filesystem::path radiomics;
  std::filesystem::path clinical;
  std::filesystem::path outcomes;

  static DatasetPaths in(const std::filesystem::path& dir);
};

PatientDataset load_dataset(const DatasetPaths& paths);
void write_dataset(const PatientDataset& ds, const DatasetPaths& paths);

// 17 significant digits, so values round-trip exactly.
std::string format_double(double v);
double parse_double(std::string_view s, std::string_view where);

}  // namespace tipsfuse::data
