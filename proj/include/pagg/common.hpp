#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace pagg {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

inline void check(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

using Shape = std::vector<int64_t>;

enum class Mode { Train, Eval };

inline int64_t numel_of(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

// Deterministic PRNG. mt19937_64 is fully specified by the standard; the
// distribution transforms are hand-rolled so streams reproduce across stdlib
// versions.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // uniform in [0,1)
  double uniform() { return double(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  uint64_t uniform_int(uint64_t n) {
    return uint64_t((static_cast<__uint128_t>(engine_()) * n) >> 64);
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

  // Derive an independent child stream from a tag.
  Rng child(const std::string& tag) const {
    uint64_t h = 1469598103934665603ull;
    for (char c : tag) {
      h ^= uint64_t(uint8_t(c));
      h *= 1099511628211ull;
    }
    return Rng(mix(seed_hash() ^ h));
  }

  Rng child(uint64_t salt) const { return Rng(mix(seed_hash() ^ (salt * 0x9e3779b97f4a7c15ull))); }

  std::string serialize() const {
    std::ostringstream os;
    os << engine_ << " " << (has_spare_ ? 1 : 0) << " " << spare_bits();
    return os.str();
  }

  void deserialize(const std::string& text) {
    std::istringstream is(text);
    int spare_flag = 0;
    uint64_t bits = 0;
    is >> engine_ >> spare_flag >> bits;
    check(!is.fail(), "Rng::deserialize: malformed state string");
    has_spare_ = spare_flag != 0;
    std::memcpy(&spare_, &bits, sizeof(double));
  }

 private:
  uint64_t seed_hash() const {
    // Hash of current engine output without disturbing the stream.
    std::mt19937_64 copy = engine_;
    return copy();
  }

  static uint64_t mix(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  uint64_t spare_bits() const {
    uint64_t bits = 0;
    std::memcpy(&bits, &spare_, sizeof(double));
    return bits;
  }

  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// PAGG_THREADS caps data-pipeline workers. Kernel threads follow OpenMP.
inline int data_workers() {
#ifdef _OPENMP
  int n = omp_get_max_threads();
#else
  int n = 1;
#endif
  if (const char* env = std::getenv("PAGG_THREADS")) {
    int cap = std::atoi(env);
    if (cap >= 1 && cap < n) n = cap;
  }
  return n;
}

}  // namespace pagg
