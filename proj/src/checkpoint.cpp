#include "moma/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace moma {

namespace {

constexpr char kMagic[8] = {'M', 'O', 'M', 'A', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_u64(std::ostream& os, uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
uint32_t read_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  MOMA_CHECK(static_cast<bool>(is), "checkpoint: truncated");
  return v;
}
uint64_t read_u64(std::istream& is) {
  uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  MOMA_CHECK(static_cast<bool>(is), "checkpoint: truncated");
  return v;
}
std::string read_string(std::istream& is) {
  const uint32_t n = read_u32(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  MOMA_CHECK(static_cast<bool>(is), "checkpoint: truncated");
  return s;
}

}  // namespace

void Checkpoint::set_config(const std::string& key, const std::string& value) {
  for (auto& [k, v] : config_)
    if (k == key) {
      v = value;
      return;
    }
  config_.emplace_back(key, value);
}

bool Checkpoint::has_config(const std::string& key) const {
  for (const auto& [k, v] : config_)
    if (k == key) return true;
  return false;
}

const std::string& Checkpoint::get_config(const std::string& key) const {
  for (const auto& [k, v] : config_)
    if (k == key) return v;
  throw Error("checkpoint: missing config key " + key);
}

double Checkpoint::get_config_double(const std::string& key) const {
  return std::stod(get_config(key));
}

long Checkpoint::get_config_long(const std::string& key) const {
  return std::stol(get_config(key));
}

void Checkpoint::set_array(const std::string& name, Mat value) {
  for (auto& [k, v] : arrays_)
    if (k == name) {
      v = std::move(value);
      return;
    }
  arrays_.emplace_back(name, std::move(value));
}

bool Checkpoint::has_array(const std::string& name) const {
  for (const auto& [k, v] : arrays_)
    if (k == name) return true;
  return false;
}

const Mat& Checkpoint::get_array(const std::string& name) const {
  for (const auto& [k, v] : arrays_)
    if (k == name) return v;
  throw Error("checkpoint: missing array " + name);
}

void Checkpoint::put_params(const std::string& prefix, const nn::ParamStore& ps) {
  for (const auto& [name, node] : ps.items())
    set_array(prefix + name, node->value);
}

void Checkpoint::load_params(const std::string& prefix,
                             nn::ParamStore& ps) const {
  for (const auto& [name, node] : ps.items()) {
    const Mat& v = get_array(prefix + name);
    MOMA_CHECK(v.rows() == node->value.rows() && v.cols() == node->value.cols(),
               "checkpoint: shape mismatch for " + prefix + name);
    node->value = v;
  }
}

void Checkpoint::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  MOMA_CHECK(os.good(), "checkpoint: cannot open " + path);
  os.write(kMagic, 8);
  write_u32(os, kVersion);
  write_u64(os, step);
  write_u32(os, static_cast<uint32_t>(config_.size()));
  for (const auto& [k, v] : config_) {
    write_string(os, k);
    write_string(os, v);
  }
  write_u32(os, static_cast<uint32_t>(arrays_.size()));
  for (const auto& [name, m] : arrays_) {
    write_string(os, name);
    write_u32(os, static_cast<uint32_t>(m.rows()));
    write_u32(os, static_cast<uint32_t>(m.cols()));
    os.write(reinterpret_cast<const char*>(m.data()),
             static_cast<std::streamsize>(sizeof(double)) * m.size());
  }
  MOMA_CHECK(os.good(), "checkpoint: write failed for " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  MOMA_CHECK(is.good(), "checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  MOMA_CHECK(is && std::memcmp(magic, kMagic, 8) == 0,
             "checkpoint: bad magic in " + path);
  const uint32_t version = read_u32(is);
  MOMA_CHECK(version == kVersion,
             "checkpoint: unsupported format version in " + path);
  Checkpoint ck;
  ck.step = read_u64(is);
  const uint32_t n_config = read_u32(is);
  for (uint32_t i = 0; i < n_config; ++i) {
    std::string k = read_string(is);
    std::string v = read_string(is);
    ck.config_.emplace_back(std::move(k), std::move(v));
  }
  const uint32_t n_arrays = read_u32(is);
  for (uint32_t i = 0; i < n_arrays; ++i) {
    std::string name = read_string(is);
    const uint32_t rows = read_u32(is);
    const uint32_t cols = read_u32(is);
    Mat m(rows, cols);
    is.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double)) * m.size());
    MOMA_CHECK(static_cast<bool>(is), "checkpoint: truncated array " + name);
    ck.arrays_.emplace_back(std::move(name), std::move(m));
  }
  return ck;
}

}  // namespace moma
