#pragma once

#include <string>
#include <vector>

#include "moma/nn.hpp"
#include "moma/tensor.hpp"

namespace moma {

// Self-describing binary container for model parameters, config entries and
// the training step counter. Arrays are stored as named f64 matrices.
class Checkpoint {
 public:
  uint64_t step = 0;

  void set_config(const std::string& key, const std::string& value);
  bool has_config(const std::string& key) const;
  const std::string& get_config(const std::string& key) const;
  double get_config_double(const std::string& key) const;
  long get_config_long(const std::string& key) const;
  const std::vector<std::pair<std::string, std::string>>& config() const {
    return config_;
  }

  void set_array(const std::string& name, Mat value);
  bool has_array(const std::string& name) const;
  const Mat& get_array(const std::string& name) const;
  const std::vector<std::pair<std::string, Mat>>& arrays() const {
    return arrays_;
  }

  // Copies parameter values out of / into a live store. Loading checks that
  // every parameter is present with matching shape.
  void put_params(const std::string& prefix, const nn::ParamStore& ps);
  void load_params(const std::string& prefix, nn::ParamStore& ps) const;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

 private:
  std::vector<std::pair<std::string, std::string>> config_;
  std::vector<std::pair<std::string, Mat>> arrays_;
};

}  // namespace moma
