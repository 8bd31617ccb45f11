#include "tipsfuse/radiomics.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>

#include "tipsfuse/errors.hpp"

namespace tipsfuse::data {

namespace {

const std::map<std::string, std::vector<std::string>, std::less<>>& attribute_table() {
  static const std::map<std::string, std::vector<std::string>, std::less<>> table = {
      {"firstorder",
       {"10Percentile", "90Percentile", "Energy", "Entropy", "InterquartileRange", "Kurtosis",
        "Maximum", "MeanAbsoluteDeviation", "Mean", "Median", "Minimum", "Range",
        "RobustMeanAbsoluteDeviation", "RootMeanSquared", "Skewness", "TotalEnergy", "Uniformity",
        "Variance"}},
      {"shape",
       {"Elongation", "Flatness", "LeastAxisLength", "MajorAxisLength", "Maximum2DDiameterColumn",
        "Maximum2DDiameterRow", "Maximum2DDiameterSlice", "Maximum3DDiameter", "MeshVolume",
        "MinorAxisLength", "Sphericity", "SurfaceArea", "SurfaceVolumeRatio", "VoxelVolume"}},
      {"glcm",
       {"Autocorrelation", "ClusterProminence", "ClusterShade", "ClusterTendency", "Contrast",
        "Correlation", "DifferenceAverage", "DifferenceEntropy", "DifferenceVariance", "Id", "Idm",
        "Idmn", "Idn", "Imc1", "Imc2", "InverseVariance", "JointAverage", "JointEnergy",
        "JointEntropy", "MCC", "MaximumProbability", "SumAverage", "SumEntropy", "SumSquares"}},
      {"glrlm",
       {"GrayLevelNonUniformity", "GrayLevelNonUniformityNormalized", "GrayLevelVariance",
        "HighGrayLevelRunEmphasis", "LongRunEmphasis", "LongRunHighGrayLevelEmphasis",
        "LongRunLowGrayLevelEmphasis", "LowGrayLevelRunEmphasis", "RunEntropy",
        "RunLengthNonUniformity", "RunLengthNonUniformityNormalized", "RunPercentage",
        "RunVariance", "ShortRunEmphasis", "ShortRunHighGrayLevelEmphasis",
        "ShortRunLowGrayLevelEmphasis"}},
      {"glszm",
       {"GrayLevelNonUniformity", "GrayLevelNonUniformityNormalized", "GrayLevelVariance",
        "HighGrayLevelZoneEmphasis", "LargeAreaEmphasis", "LargeAreaHighGrayLevelEmphasis",
        "LargeAreaLowGrayLevelEmphasis", "LowGrayLevelZoneEmphasis", "SizeZoneNonUniformity",
        "SizeZoneNonUniformityNormalized", "SmallAreaEmphasis", "SmallAreaHighGrayLevelEmphasis",
        "SmallAreaLowGrayLevelEmphasis", "ZoneEntropy", "ZonePercentage", "ZoneVariance"}},
      {"gldm",
       {"DependenceEntropy", "DependenceNonUniformity", "DependenceNonUniformityNormalized",
        "DependenceVariance", "GrayLevelNonUniformity", "GrayLevelVariance",
        "HighGrayLevelEmphasis", "LargeDependenceEmphasis", "LargeDependenceHighGrayLevelEmphasis",
        "LargeDependenceLowGrayLevelEmphasis", "LowGrayLevelEmphasis", "SmallDependenceEmphasis",
        "SmallDependenceHighGrayLevelEmphasis", "SmallDependenceLowGrayLevelEmphasis"}},
      {"ngtdm", {"Busyness", "Coarseness", "Complexity", "Contrast", "Strength"}},
  };
  return table;
}

bool valid_token(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.';
  });
}

}  // namespace

const std::vector<std::string>& feature_classes() {
  static const std::vector<std::string> classes = {"firstorder", "shape", "glcm", "glrlm",
                                                   "glszm",      "gldm",  "ngtdm"};
  return classes;
}

RadiomicsName parse_radiomics_name(std::string_view name) {
  const auto first = name.find('_');
  if (first == std::string_view::npos) {
    throw DataError("radiomics name '" + std::string(name) + "': expected <filter>_<class>_<attribute>");
  }
  const auto second = name.find('_', first + 1);
  if (second == std::string_view::npos) {
    throw DataError("radiomics name '" + std::string(name) + "': missing attribute after '" +
                    std::string(name.substr(first + 1)) + "'");
  }
  RadiomicsName out{std::string(name.substr(0, first)),
                    std::string(name.substr(first + 1, second - first - 1)),
                    std::string(name.substr(second + 1))};
  if (!valid_token(out.filter)) {
    throw DataError("radiomics name '" + std::string(name) + "': bad filter segment '" + out.filter + "'");
  }
  const auto& classes = feature_classes();
  if (std::find(classes.begin(), classes.end(), out.feature_class) == classes.end()) {
    throw DataError("radiomics name '" + std::string(name) + "': unknown feature class '" +
                    out.feature_class + "'");
  }
  if (!valid_token(out.attribute)) {
    throw DataError("radiomics name '" + std::string(name) + "': bad attribute segment '" +
                    out.attribute + "'");
  }
  return out;
}

std::vector<std::size_t> GroupIndex::group_sizes() const {
  std::vector<std::size_t> s;
  s.reserve(members.size());
  for (const auto& m : members) s.push_back(m.size());
  return s;
}

std::uint64_t GroupIndex::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& n : feature_names) {
    for (unsigned char c : n) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    h ^= 0xff;
    h *= 1099511628211ULL;
  }
  return h;
}

GroupIndex build_group_index(std::span<const std::string> names) {
  GroupIndex idx;
  std::set<std::string, std::less<>> seen;
  std::map<std::string, std::size_t> group_id;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (!seen.insert(names[i]).second) throw DataError("duplicate radiomics feature '" + names[i] + "'");
    const RadiomicsName p = parse_radiomics_name(names[i]);
    const std::string key = p.group();
    auto [it, fresh] = group_id.try_emplace(key, idx.group_names.size());
    if (fresh) {
      idx.group_names.push_back(key);
      idx.members.emplace_back();
      idx.by_filter[p.filter].push_back(it->second);
      idx.by_class[p.feature_class].push_back(it->second);
    }
    idx.members[it->second].push_back(i);
    idx.group_of.push_back(it->second);
    idx.feature_names.push_back(names[i]);
  }
  return idx;
}

const std::vector<std::string>& standard_filters() {
  static const std::vector<std::string> filters = {
      "original",      "wavelet-LLH", "wavelet-LHL",    "wavelet-LHH",   "wavelet-HLL",
      "wavelet-HLH",   "wavelet-HHL", "wavelet-HHH",    "wavelet-LLL",   "square",
      "squareroot",    "logarithm",   "exponential",    "gradient",      "lbp-3D-m1",
      "lbp-3D-m2",     "lbp-3D-k"};
  return filters;
}

const std::vector<std::string>& standard_attributes(std::string_view feature_class) {
  const auto& table = attribute_table();
  auto it = table.find(feature_class);
  if (it == table.end()) throw DataError("unknown feature class '" + std::string(feature_class) + "'");
  return it->second;
}

std::vector<std::string> standard_radiomics_names() {
  std::vector<std::string> names;
  for (const auto& f : standard_filters()) {
    for (const auto& s : feature_classes()) {
      if (s == "shape" && f != "original") continue;
      for (const auto& a : standard_attributes(s)) names.push_back(f + "_" + s + "_" + a);
    }
  }
  return names;
}

std::vector<std::string> read_name_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open name list '" + path + "'");
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    names.push_back(line);
  }
  return names;
}

}  // namespace tipsfuse::data
