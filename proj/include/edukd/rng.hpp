#pragma once

#include <random>
#include <sstream>
#include <string>
#include <string_view>

#include "edukd/common.hpp"

namespace edukd {

// Derives an independent stream seed from a base seed and a label, so each
// consumer (weight init per stage, shuffling, data synthesis) gets its own
// reproducible stream.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag,
                                 std::uint64_t index = 0) {
  std::uint64_t h = fnv1a(tag);
  h = fnv1a(&base, sizeof(base), h);
  h = fnv1a(&index, sizeof(index), h);
  // splitmix64 finalizer, avoids low-entropy seeds for nearby indices
  h += 0x9e3779b97f4a7c15ull;
  h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
  h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
  return h ^ (h >> 31);
}

class RngStream {
public:
  RngStream() : engine_(0) {}
  explicit RngStream(std::uint64_t seed) : engine_(seed) {}

  std::mt19937_64& engine() { return engine_; }

  float normal(float mean, float stddev) {
    std::normal_distribution<float> d(mean, stddev);
    return d(engine_);
  }

  double uniform(double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(engine_);
  }

  // [lo, hi] inclusive
  long uniform_int(long lo, long hi) {
    std::uniform_int_distribution<long> d(lo, hi);
    return d(engine_);
  }

  template <typename Vec>
  void shuffle(Vec& v) {
    std::shuffle(v.begin(), v.end(), engine_);
  }

  // State round-trips through text so checkpoints can capture it exactly.
  std::string serialize() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }

  void deserialize(const std::string& state) {
    std::istringstream is(state);
    is >> engine_;
    if (!is) fail_run("invalid rng state string");
  }

private:
  std::mt19937_64 engine_;
};

}  // namespace edukd
