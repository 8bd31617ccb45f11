#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tipsfuse::data {

struct RadiomicsName {
  std::string filter;         // preprocessed image type, e.g. "wavelet-LHH"
  std::string feature_class;  // one of feature_classes()
  std::string attribute;

  std::string group() const { return filter + "_" + feature_class; }
  bool operator==(const RadiomicsName&) const = default;
};

const std::vector<std::string>& feature_classes();

// Splits "<filter>_<class>_<attribute>". The filter token may carry hyphenated
// sub-band or parameter parts but no underscore. Throws DataError naming the
// offending segment.
RadiomicsName parse_radiomics_name(std::string_view name);

// Three-level hierarchy. Level II groups are keyed by (filter, class) and
// numbered in order of first appearance; Level III maps each filter and each
// class to the Level II groups it covers.
struct GroupIndex {
  std::vector<std::string> feature_names;
  std::vector<std::string> group_names;              // "<filter>_<class>"
  std::vector<std::vector<std::size_t>> members;     // feature indices per group
  std::vector<std::size_t> group_of;                 // group per feature
  std::map<std::string, std::vector<std::size_t>> by_filter;
  std::map<std::string, std::vector<std::size_t>> by_class;

  std::size_t group_count() const { return group_names.size(); }
  std::size_t feature_count() const { return feature_names.size(); }
  std::vector<std::size_t> group_sizes() const;
  // Stable fingerprint of the ordered feature names.
  std::uint64_t hash() const;
};

GroupIndex build_group_index(std::span<const std::string> names);

// The filter list and per-class attribute lists of the default extraction
// settings: 17 image types, 7 feature classes, shape computed on the
// original image only.
const std::vector<std::string>& standard_filters();
const std::vector<std::string>& standard_attributes(std::string_view feature_class);
std::vector<std::string> standard_radiomics_names();

std::vector<std::string> read_name_list(const std::string& path);

}  // namespace tipsfuse::data
