#pragma once

#include <string>
#include <vector>

#include "moma/tensor.hpp"

namespace moma {

// Flat key = value configuration with a fixed key registry. Precedence is
// flags > config file > defaults; unknown keys are rejected at every layer.
class RunConfig {
 public:
  // Full registry with shipped defaults.
  static RunConfig defaults();

  void load_file(const std::string& path);
  void set(const std::string& key, const std::string& value);
  bool known(const std::string& key) const;

  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  long get_long(const std::string& key) const;
  int get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  const std::vector<std::pair<std::string, std::string>>& entries() const {
    return entries_;
  }
  // "key = value" lines, sorted by key.
  std::string render() const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

// FNV-1a 64 of a file's bytes, as 16 hex digits.
std::string hash_file_hex(const std::string& path);

// Run manifest written beside every CLI output: the subcommand, the fully
// resolved config and a content hash per produced artifact.
void write_run_manifest(const std::string& path, const std::string& subcommand,
                        const RunConfig& config,
                        const std::vector<std::pair<std::string, std::string>>&
                            artifacts /* name, file path */);

}  // namespace moma
