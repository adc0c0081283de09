#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace moma {

// Deterministic random stream. Gaussian draws use Box-Muller on the raw
// 64-bit stream so results do not depend on the standard library's
// distribution internals.
class RngStream {
 public:
  explicit RngStream(uint64_t seed);

  uint64_t next_u64();
  // Uniform in [0, 1).
  double uniform();
  // Uniform in [lo, hi).
  double uniform(double lo, double hi);
  // Standard normal.
  double normal();
  // Uniform integer in [0, n).
  uint64_t integer(uint64_t n);

  // k distinct values from [0, n), k <= n, order random.
  std::vector<int> sample_without_replacement(int n, int k);
  std::vector<int> permutation(int n);

 private:
  uint64_t state_;
};

// Derives an independent child stream from a master seed, a tag and up to two
// integer keys. Same inputs always give the same stream.
RngStream derive_stream(uint64_t master_seed, std::string_view tag,
                        uint64_t a = 0, uint64_t b = 0);

}  // namespace moma
