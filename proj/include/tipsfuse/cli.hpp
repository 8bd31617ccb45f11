#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace tipsfuse::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4 };

// Flat `key = value` settings. Every key has a default, unknown keys are
// rejected, and the effective entries are echoed into run manifests.
class RunConfig {
 public:
  RunConfig();

  // Lines are `key = value`; blank lines and lines starting with '#' are
  // skipped. Relative paths resolve against base_dir.
  static RunConfig parse(std::istream& in, const std::string& source, std::filesystem::path base_dir = {});
  static RunConfig load(const std::filesystem::path& file);

  void set(std::string_view key, std::string value);
  const std::string& text(std::string_view key) const;
  double number(std::string_view key) const;
  std::uint64_t count(std::string_view key) const;  // non-negative integer
  // Empty value maps to an empty path; relative values resolve against base_dir.
  std::filesystem::path path(std::string_view key) const;

  const std::map<std::string, std::string, std::less<>>& entries() const { return entries_; }
  const std::filesystem::path& base_dir() const { return base_dir_; }

 private:
  std::map<std::string, std::string, std::less<>> entries_;
  std::filesystem::path base_dir_;
};

// Runs one command line (args excludes the program name). Errors are
// reported on err and mapped to ExitCode values.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// FNV-1a over file bytes; a directory hashes its regular files in name order.
std::uint64_t content_hash(const std::filesystem::path& p);
std::string hex(std::uint64_t v);

}  // namespace tipsfuse::cli
