#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace nvs {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// One root seed fans out to independent named streams, so adding a consumer
// never perturbs the draws of another.
class SeedTree {
 public:
  explicit SeedTree(std::uint64_t root = 0) : root_(root) {}
  std::uint64_t root() const noexcept { return root_; }
  std::uint64_t seed_for(std::string_view stream) const { return splitmix64(root_ ^ splitmix64(fnv1a(stream))); }
  Rng stream(std::string_view name) const { return Rng(seed_for(name)); }
  SeedTree child(std::string_view name) const { return SeedTree(seed_for(name)); }

 private:
  std::uint64_t root_;
};

template <class T>
T uniform(Rng& rng, T lo, T hi) {
  return std::uniform_real_distribution<T>(lo, hi)(rng);
}

inline std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi_inclusive) {
  return std::uniform_int_distribution<std::int64_t>(lo, hi_inclusive)(rng);
}

template <class T>
T normal(Rng& rng) {
  return std::normal_distribution<T>(T(0), T(1))(rng);
}

}  // namespace nvs
