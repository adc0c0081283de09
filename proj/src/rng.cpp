#include "moma/rng.hpp"

#include <cmath>

namespace moma {
namespace {

inline uint64_t splitmix64(uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t mix_u64(uint64_t h, uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  return h;
}

}  // namespace

RngStream::RngStream(uint64_t seed) : state_(seed) {
  // Warm up so nearby seeds decorrelate.
  for (int i = 0; i < 4; ++i) splitmix64(state_);
}

uint64_t RngStream::next_u64() { return splitmix64(state_); }

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

double RngStream::normal() {
  // Box-Muller without caching the second value.
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

uint64_t RngStream::integer(uint64_t n) {
  if (n == 0) return 0;
  // Rejection sampling to avoid modulo bias.
  const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  uint64_t v = next_u64();
  while (v >= limit) v = next_u64();
  return v % n;
}

std::vector<int> RngStream::permutation(int n) {
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(integer(static_cast<uint64_t>(i) + 1));
    std::swap(idx[i], idx[j]);
  }
  return idx;
}

std::vector<int> RngStream::sample_without_replacement(int n, int k) {
  // Partial Fisher-Yates.
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  std::vector<int> out;
  out.reserve(k);
  for (int i = 0; i < k; ++i) {
    const int j = i + static_cast<int>(integer(static_cast<uint64_t>(n - i)));
    std::swap(idx[i], idx[j]);
    out.push_back(idx[i]);
  }
  return out;
}

RngStream derive_stream(uint64_t master_seed, std::string_view tag, uint64_t a,
                        uint64_t b) {
  uint64_t h = fnv1a64(tag);
  h = mix_u64(h, master_seed);
  h = mix_u64(h, a);
  h = mix_u64(h, b);
  return RngStream(h);
}

}  // namespace moma
