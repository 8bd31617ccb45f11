#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>

#include "tipsfuse/cli.hpp"
#include "tipsfuse/errors.hpp"

namespace tipsfuse::cli {

namespace fs = std::filesystem;

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace

RunConfig::RunConfig() {
  entries_ = {
      {"seed", "7"},
      {"data_dir", ""},
      {"out_dir", "tipsfuse_out"},
      {"checkpoint", ""},
      {"names_file", ""},
      // synthetic cohort
      {"n_patients", "306"},
      {"deep_dim", "64"},
      {"bag_min", "12"},
      {"bag_max", "24"},
      {"radiomics_groups", "8"},
      {"noise", "1"},
      {"censor_rate", "0.3"},
      {"train_frac", "0.6"},
      {"val_frac", "0.2"},
      // model
      {"d", "256"},
      {"n_c", "6"},
      {"heads", "4"},
      {"ffn_mult", "2"},
      {"dropout", "0.25"},
      {"hidden1", "256"},
      {"hidden2", "64"},
      {"pressure_hidden", "16"},
      {"bins", "4"},
      {"ppg_scale", "50"},
      {"ot.epsilon", "0.1"},
      {"ot.max_iters", "100"},
      {"ot.tol", "1e-6"},
      // training
      {"e0", "20"},
      {"e1", "20"},
      {"e2", "20"},
      {"delta", "0.1"},
      {"lr", "2e-4"},
      {"weight_decay", "1e-5"},
      // reports
      {"split", "test"},
      {"task", "os"},
      {"target", "risk_os"},
      {"patient", ""},
      {"steps", "256"},
      {"top_k", "10"},
      {"coattention_k", "0"},
  };
}

RunConfig RunConfig::parse(std::istream& in, const std::string& source, fs::path base_dir) {
  RunConfig cfg;
  cfg.base_dir_ = std::move(base_dir);
  std::string line;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    const std::string_view s = trim(line);
    if (s.empty() || s.front() == '#') continue;
    const auto eq = s.find('=');
    const std::string where = source + ":" + std::to_string(no);
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected key = value");
    const std::string_view key = trim(s.substr(0, eq));
    if (key.empty()) throw ConfigError(where + ": empty key");
    try {
      cfg.set(key, std::string(trim(s.substr(eq + 1))));
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig RunConfig::load(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config file " + file.string());
  return parse(in, file.string(), file.parent_path());
}

void RunConfig::set(std::string_view key, std::string value) {
  const auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
  it->second = std::move(value);
}

const std::string& RunConfig::text(std::string_view key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
  return it->second;
}

double RunConfig::number(std::string_view key) const {
  const std::string& v = text(key);
  double out = 0.0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size()) {
    throw ConfigError("config key '" + std::string(key) + "' expects a number, got '" + v + "'");
  }
  return out;
}

std::uint64_t RunConfig::count(std::string_view key) const {
  const std::string& v = text(key);
  std::uint64_t out = 0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || end != v.data() + v.size()) {
    throw ConfigError("config key '" + std::string(key) + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

fs::path RunConfig::path(std::string_view key) const {
  const std::string& v = text(key);
  if (v.empty()) return {};
  const fs::path p(v);
  return p.is_relative() && !base_dir_.empty() ? base_dir_ / p : p;
}

std::uint64_t content_hash(const fs::path& p) {
  std::uint64_t h = 1469598103934665603ULL;
  const auto mix = [&h](unsigned char c) {
    h ^= c;
    h *= 1099511628211ULL;
  };
  const auto file = [&](const fs::path& f) {
    std::ifstream in(f, std::ios::binary);
    if (!in) throw DataError("cannot read " + f.string());
    for (char c; in.get(c);) mix(static_cast<unsigned char>(c));
  };
  if (fs::is_directory(p)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(p))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      for (unsigned char c : f.filename().string()) mix(c);
      mix(0);
      file(f);
    }
  } else {
    file(p);
  }
  return h;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace tipsfuse::cli
