#include "tipsfuse/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "tipsfuse/errors.hpp"

namespace tipsfuse::data {

namespace fs = std::filesystem;

std::string_view to_string(ClinicalKind k) {
  return k == ClinicalKind::numeric ? "numeric" : "categorical";
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

ClinicalKind parse_kind(std::string_view s) {
  if (s == "numeric") return ClinicalKind::numeric;
  if (s == "categorical") return ClinicalKind::categorical;
  throw DataError("unknown clinical kind '" + std::string(s) + "'");
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + std::string(s) + "' (train|val|test)");
}

const std::array<std::string, kClinicalGroupCount>& clinical_group_keys() {
  static const std::array<std::string, kClinicalGroupCount> keys = {
      "baseline", "pressure", "blood", "scores", "procedures"};
  return keys;
}

std::size_t clinical_group_index(std::string_view key) {
  const auto& keys = clinical_group_keys();
  for (std::size_t g = 0; g < keys.size(); ++g)
    if (keys[g] == key) return g;
  throw DataError("unknown clinical group '" + std::string(key) + "'");
}

void validate(const Outcomes& o, std::string_view id) {
  const std::string who = "patient " + std::string(id);
  if (!(o.t_os > 0.0) || !std::isfinite(o.t_os)) throw DataError(who + ": t_os must be > 0");
  if (!(o.t_ohe > 0.0) || !std::isfinite(o.t_ohe)) throw DataError(who + ": t_ohe must be > 0");
  if (o.c_os != 0 && o.c_os != 1) throw DataError(who + ": c_os must be 0 or 1");
  if (o.c_ohe != 0 && o.c_ohe != 1) throw DataError(who + ": c_ohe must be 0 or 1");
  if (!(o.ppg_pre >= 0.0) || !std::isfinite(o.ppg_pre)) throw DataError(who + ": ppg_pre must be >= 0");
  if (!(o.ppg_post >= 0.0) || !std::isfinite(o.ppg_post)) throw DataError(who + ": ppg_post must be >= 0");
}

std::size_t PatientDataset::deep_dim() const {
  return patients.empty() ? 0 : patients.front().deep.cols();
}

std::vector<std::size_t> PatientDataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < patients.size(); ++i)
    if (patients[i].split == s) out.push_back(i);
  return out;
}

void assign_splits(PatientDataset& ds, std::uint64_t seed, double train_frac, double val_frac) {
  const std::size_t n = ds.size();
  if (n < 3) throw DataError("assign_splits: need at least 3 patients, got " + std::to_string(n));
  if (!(train_frac > 0.0) || !(val_frac > 0.0) || train_frac + val_frac >= 1.0) {
    throw ConfigError("split ratios must be positive and leave room for a test split");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  auto n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n)));
  auto n_val = static_cast<std::size_t>(std::llround(val_frac * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 2);
  n_val = std::clamp<std::size_t>(n_val, 1, n - 1 - n_train);
  for (std::size_t k = 0; k < n; ++k) {
    ds.patients[order[k]].split = k < n_train ? Split::train : k < n_train + n_val ? Split::val : Split::test;
  }
}

// ---------------------------------------------------------------------------
// Normalisation

double min_max_scale(double v, double lo, double hi) {
  if (!(hi > lo)) return 0.0;
  return std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
}

namespace {

void check_layout(const PatientRecord& p, const std::array<std::vector<FeatureNormalizer::Column>,
                                                           kClinicalGroupCount>& cols,
                  std::size_t n_rad) {
  if (p.radiomics.size() != n_rad) {
    throw DataError("patient " + p.id + ": " + std::to_string(p.radiomics.size()) +
                    " radiomics values, expected " + std::to_string(n_rad));
  }
  for (std::size_t g = 0; g < kClinicalGroupCount; ++g) {
    const auto& items = p.clinical.groups[g];
    if (items.size() != cols[g].size()) {
      throw DataError("patient " + p.id + ": clinical group '" + clinical_group_keys()[g] + "' has " +
                      std::to_string(items.size()) + " items, expected " + std::to_string(cols[g].size()));
    }
    for (std::size_t k = 0; k < items.size(); ++k) {
      if (items[k].name != cols[g][k].name || items[k].kind != cols[g][k].kind) {
        throw DataError("patient " + p.id + ": clinical item '" + items[k].name + "' where '" +
                        cols[g][k].name + "' was expected");
      }
    }
  }
}

}  // namespace

FeatureNormalizer FeatureNormalizer::fit(const PatientDataset& ds, Split split) {
  const auto idx = ds.indices(split);
  if (idx.empty()) throw DataError("cannot fit normalisation: " + std::string(to_string(split)) + " split is empty");
  FeatureNormalizer nz;
  const PatientRecord& first = ds.patients[idx.front()];
  const std::size_t n_rad = ds.radiomics_names.size();
  nz.rad_min_.assign(n_rad, std::numeric_limits<double>::infinity());
  nz.rad_max_.assign(n_rad, -std::numeric_limits<double>::infinity());
  for (std::size_t g = 0; g < kClinicalGroupCount; ++g) {
    for (const auto& item : first.clinical.groups[g]) {
      Column c;
      c.name = item.name;
      c.kind = item.kind;
      c.min = std::numeric_limits<double>::infinity();
      c.max = -std::numeric_limits<double>::infinity();
      nz.columns_[g].push_back(c);
    }
  }
  std::array<std::vector<std::set<double>>, kClinicalGroupCount> levels;
  for (std::size_t g = 0; g < kClinicalGroupCount; ++g) levels[g].resize(nz.columns_[g].size());

  for (std::size_t i : idx) {
    const PatientRecord& p = ds.patients[i];
    check_layout(p, nz.columns_, n_rad);
    for (std::size_t j = 0; j < n_rad; ++j) {
      nz.rad_min_[j] = std::min(nz.rad_min_[j], p.radiomics[j]);
      nz.rad_max_[j] = std::max(nz.rad_max_[j], p.radiomics[j]);
    }
    for (std::size_t g = 0; g < kClinicalGroupCount; ++g)
      for (std::size_t k = 0; k < nz.columns_[g].size(); ++k) {
        Column& c = nz.columns_[g][k];
        const double v = p.clinical.groups[g][k].value;
        c.min = std::min(c.min, v);
        c.max = std::max(c.max, v);
        if (c.kind == ClinicalKind::categorical) levels[g][k].insert(v);
      }
  }
  for (std::size_t j = 0; j < n_rad; ++j) {
    if (!(nz.rad_max_[j] > nz.rad_min_[j])) {
      nz.warnings_.push_back("radiomics feature '" + ds.radiomics_names[j] + "' is constant on " +
                             std::string(to_string(split)) + "; mapped to 0");
    }
  }
  for (std::size_t g = 0; g < kClinicalGroupCount; ++g)
    for (std::size_t k = 0; k < nz.columns_[g].size(); ++k) {
      Column& c = nz.columns_[g][k];
      if (c.kind == ClinicalKind::categorical) {
        c.levels.assign(levels[g][k].begin(), levels[g][k].end());
      } else if (!(c.max > c.min)) {
        nz.warnings_.push_back("clinical attribute '" + c.name + "' is constant on " +
                               std::string(to_string(split)) + "; mapped to 0");
      }
    }
  return nz;
}

FeatureNormalizer FeatureNormalizer::from_parts(
    std::vector<double> rad_min, std::vector<double> rad_max,
    std::array<std::vector<Column>, kClinicalGroupCount> cols) {
  if (rad_min.size() != rad_max.size()) throw DataError("normaliser: radiomics stat lengths differ");
  FeatureNormalizer nz;
  nz.rad_min_ = std::move(rad_min);
  nz.rad_max_ = std::move(rad_max);
  nz.columns_ = std::move(cols);
  return nz;
}

PatientRecord FeatureNormalizer::apply(const PatientRecord& p) const {
  check_layout(p, columns_, rad_min_.size());
  PatientRecord out = p;
  for (std::size_t j = 0; j < rad_min_.size(); ++j) {
    out.radiomics[j] = min_max_scale(p.radiomics[j], rad_min_[j], rad_max_[j]);
  }
  for (std::size_t g = 0; g < kClinicalGroupCount; ++g) {
    std::vector<ClinicalItem> enc;
    for (std::size_t k = 0; k < columns_[g].size(); ++k) {
      const Column& c = columns_[g][k];
      const double v = p.clinical.groups[g][k].value;
      if (c.kind == ClinicalKind::numeric) {
        enc.push_back({c.name, ClinicalKind::numeric, min_max_scale(v, c.min, c.max)});
      } else {
        for (std::size_t b = 0; b < c.levels.size(); ++b) {
          enc.push_back({c.name + "_bit" + std::to_string(b), ClinicalKind::numeric,
                         c.levels[b] == v ? 1.0 : 0.0});
        }
      }
    }
    out.clinical.groups[g] = std::move(enc);
  }
  return out;
}

PatientDataset FeatureNormalizer::apply(const PatientDataset& ds) const {
  PatientDataset out;
  out.radiomics_names = ds.radiomics_names;
  out.patients.reserve(ds.size());
  for (const auto& p : ds.patients) out.patients.push_back(apply(p));
  return out;
}

std::vector<std::string> FeatureNormalizer::encoded_names(std::size_t group) const {
  std::vector<std::string> names;
  for (const Column& c : columns_.at(group)) {
    if (c.kind == ClinicalKind::numeric) {
      names.push_back(c.name);
    } else {
      for (std::size_t b = 0; b < c.levels.size(); ++b) names.push_back(c.name + "_bit" + std::to_string(b));
    }
  }
  return names;
}

std::size_t FeatureNormalizer::encoded_width(std::size_t group) const {
  return encoded_names(group).size();
}

ModelInput make_model_input(const PatientRecord& p, const GroupIndex& groups) {
  if (p.radiomics.size() != groups.feature_count()) {
    throw DataError("patient " + p.id + ": radiomics length " + std::to_string(p.radiomics.size()) +
                    " does not match the group index (" + std::to_string(groups.feature_count()) + ")");
  }
  if (p.deep.rows() == 0) throw DataError("patient " + p.id + ": empty deep feature bag");
  ModelInput in;
  in.id = p.id;
  in.deep = p.deep;
  in.outcomes = p.outcomes;
  in.split = p.split;
  for (const auto& members : groups.members) {
    Matrix g(1, members.size());
    for (std::size_t k = 0; k < members.size(); ++k) g[k] = p.radiomics[members[k]];
    in.radiomics.push_back(std::move(g));
  }
  for (const auto& items : p.clinical.groups) {
    if (items.empty()) throw DataError("patient " + p.id + ": empty clinical group");
    Matrix g(1, items.size());
    for (std::size_t k = 0; k < items.size(); ++k) g[k] = items[k].value;
    in.clinical.push_back(std::move(g));
  }
  return in;
}

// ---------------------------------------------------------------------------
// CSV surfaces

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(std::string_view s, std::string_view where) {
  double v = 0.0;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw DataError(std::string(where) + ": bad number '" + std::string(s) + "'");
  }
  return v;
}

DatasetPaths DatasetPaths::in(const fs::path& dir) {
  return {dir / "deep", dir / "radiomics.csv", dir / "clinical.csv", dir / "outcomes.csv"};
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

class CsvReader {
 public:
  explicit CsvReader(const fs::path& path) : path_(path.string()), in_(path) {
    if (!in_) throw DataError("cannot open '" + path_ + "'");
  }
  bool next(std::vector<std::string>& fields) {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      fields = split_csv(line);
      return true;
    }
    return false;
  }
  std::string where() const { return path_ + ":" + std::to_string(line_no_); }
  void expect_columns(const std::vector<std::string>& f, std::size_t n) const {
    if (f.size() != n) {
      throw DataError(where() + ": " + std::to_string(f.size()) + " columns, expected " + std::to_string(n));
    }
  }

 private:
  std::string path_;
  std::ifstream in_;
  std::size_t line_no_ = 0;
};

int parse_flag(std::string_view s, std::string_view where) {
  if (s == "0") return 0;
  if (s == "1") return 1;
  throw DataError(std::string(where) + ": censor flag must be 0 or 1, got '" + std::string(s) + "'");
}

Matrix read_deep(const fs::path& path) {
  CsvReader r(path);
  std::vector<std::string> f;
  std::vector<double> values;
  std::size_t rows = 0, cols = 0;
  while (r.next(f)) {
    if (rows == 0) cols = f.size();
    r.expect_columns(f, cols);
    for (const auto& s : f) values.push_back(parse_double(s, r.where()));
    ++rows;
  }
  if (rows == 0) throw DataError("'" + path.string() + "': empty deep feature bag");
  return Matrix(rows, cols, std::move(values));
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write '" + p.string() + "'");
  return out;
}

}  // namespace

PatientDataset load_dataset(const DatasetPaths& paths) {
  PatientDataset ds;
  std::vector<std::string> f;

  // Outcomes fix the patient order.
  std::map<std::string, std::size_t> slot;
  {
    CsvReader r(paths.outcomes);
    if (!r.next(f) || f != std::vector<std::string>{"id", "t_os", "c_os", "t_ohe", "c_ohe", "ppg_pre", "ppg_post"}) {
      throw DataError(r.where() + ": outcomes header must be id,t_os,c_os,t_ohe,c_ohe,ppg_pre,ppg_post");
    }
    while (r.next(f)) {
      r.expect_columns(f, 7);
      if (!slot.emplace(f[0], ds.patients.size()).second) {
        throw DataError(r.where() + ": duplicate patient id '" + f[0] + "'");
      }
      PatientRecord p;
      p.id = f[0];
      const std::string w = r.where();
      p.outcomes = {parse_double(f[1], w), parse_flag(f[2], w), parse_double(f[3], w),
                    parse_flag(f[4], w),   parse_double(f[5], w), parse_double(f[6], w)};
      validate(p.outcomes, p.id);
      ds.patients.push_back(std::move(p));
    }
  }
  if (ds.patients.empty()) throw DataError("'" + paths.outcomes.string() + "': no patients");

  std::vector<bool> have_rad(ds.size(), false), have_cli(ds.size(), false);
  std::set<std::string> unknown;
  {
    CsvReader r(paths.radiomics);
    if (!r.next(f) || f.empty() || f[0] != "id") throw DataError(r.where() + ": radiomics header must start with id");
    ds.radiomics_names.assign(f.begin() + 1, f.end());
    const std::size_t cols = f.size();
    while (r.next(f)) {
      r.expect_columns(f, cols);
      auto it = slot.find(f[0]);
      if (it == slot.end()) {
        unknown.insert(f[0]);
        continue;
      }
      if (have_rad[it->second]) throw DataError(r.where() + ": duplicate patient id '" + f[0] + "'");
      have_rad[it->second] = true;
      auto& v = ds.patients[it->second].radiomics;
      for (std::size_t k = 1; k < cols; ++k) v.push_back(parse_double(f[k], r.where()));
    }
  }
  {
    CsvReader r(paths.clinical);
    if (!r.next(f) || f != std::vector<std::string>{"id", "group", "name", "kind", "value"}) {
      throw DataError(r.where() + ": clinical header must be id,group,name,kind,value");
    }
    while (r.next(f)) {
      r.expect_columns(f, 5);
      auto it = slot.find(f[0]);
      if (it == slot.end()) {
        unknown.insert(f[0]);
        continue;
      }
      have_cli[it->second] = true;
      const std::size_t g = clinical_group_index(f[1]);
      ds.patients[it->second].clinical.groups[g].push_back(
          {f[2], parse_kind(f[3]), parse_double(f[4], r.where())});
    }
  }

  std::vector<std::string> missing;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    PatientRecord& p = ds.patients[i];
    const fs::path deep = paths.deep_dir / (p.id + ".csv");
    if (!have_rad[i] || !have_cli[i] || !fs::exists(deep)) {
      missing.push_back(p.id);
      continue;
    }
    p.deep = read_deep(deep);
  }
  if (!missing.empty() || !unknown.empty()) {
    std::string msg = "patient ids not present in every file:";
    for (const auto& id : missing) msg += " " + id;
    for (const auto& id : unknown) msg += " " + id;
    throw DataError(msg);
  }
  const std::size_t dim = ds.deep_dim();
  for (const auto& p : ds.patients) {
    if (p.deep.cols() != dim) {
      throw DataError("patient " + p.id + ": deep feature dim " + std::to_string(p.deep.cols()) +
                      ", expected " + std::to_string(dim));
    }
  }
  return ds;
}

void write_dataset(const PatientDataset& ds, const DatasetPaths& paths) {
  fs::create_directories(paths.deep_dir);
  {
    auto out = open_out(paths.outcomes);
    out << "id,t_os,c_os,t_ohe,c_ohe,ppg_pre,ppg_post\n";
    for (const auto& p : ds.patients) {
      const Outcomes& o = p.outcomes;
      out << p.id << ',' << format_double(o.t_os) << ',' << o.c_os << ',' << format_double(o.t_ohe)
          << ',' << o.c_ohe << ',' << format_double(o.ppg_pre) << ',' << format_double(o.ppg_post) << '\n';
    }
  }
  {
    auto out = open_out(paths.radiomics);
    out << "id";
    for (const auto& n : ds.radiomics_names) out << ',' << n;
    out << '\n';
    for (const auto& p : ds.patients) {
      out << p.id;
      for (double v : p.radiomics) out << ',' << format_double(v);
      out << '\n';
    }
  }
  {
    auto out = open_out(paths.clinical);
    out << "id,group,name,kind,value\n";
    for (const auto& p : ds.patients)
      for (std::size_t g = 0; g < kClinicalGroupCount; ++g)
        for (const auto& item : p.clinical.groups[g])
          out << p.id << ',' << clinical_group_keys()[g] << ',' << item.name << ','
              << to_string(item.kind) << ',' << format_double(item.value) << '\n';
  }
  for (const auto& p : ds.patients) {
    auto out = open_out(paths.deep_dir / (p.id + ".csv"));
    for (std::size_t r = 0; r < p.deep.rows(); ++r) {
      for (std::size_t c = 0; c < p.deep.cols(); ++c) {
        if (c) out << ',';
        out << format_double(p.deep(r, c));
      }
      out << '\n';
    }
  }
}

}  // namespace tipsfuse::data
