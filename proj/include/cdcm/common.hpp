#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace cdcm {

// Error taxonomy. Configuration problems (bad shapes, invalid hyper-parameters,
// malformed inputs) are distinguished from numeric failure modes so callers can
// map them to distinct exit codes.
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class EmptyBatchError : public std::runtime_error {
public:
  explicit EmptyBatchError(const std::string& msg) : std::runtime_error(msg) {}
};

class SingularityError : public std::runtime_error {
public:
  explicit SingularityError(const std::string& msg) : std::runtime_error(msg) {}
};

class UndefinedMetricError : public std::runtime_error {
public:
  explicit UndefinedMetricError(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public std::runtime_error {
public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training aborted because the loss became non-finite (the failure mode that
// must be reported, not crash on).
class NanAbort : public std::runtime_error {
public:
  explicit NanAbort(const std::string& msg) : std::runtime_error(msg) {}
};

inline void check_config(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

// splitmix64; used to derive independent named seed streams from one root seed.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t hash_str(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Substream seed for a named component ("init", "shuffle", "augment", ...).
inline uint64_t substream(uint64_t root_seed, const std::string& name, uint64_t index = 0) {
  return mix64(root_seed ^ mix64(hash_str(name)) ^ mix64(index * 0x9e3779b97f4a7c15ULL + 1));
}

// Deterministic RNG. std:: distributions are implementation-defined, so the
// few transforms we need are spelled out here to keep runs reproducible.
class Rng {
public:
  explicit Rng(uint64_t seed) : state_(seed ? seed : 0x853c49e6748fea9bULL) {}

  uint64_t next_u64() {
    // xorshift128+ style via splitmix stepping; quality is ample for data
    // shuffling and weight init.
    state_ = state_ * 6364136223846793005ULL + 1442695040888963407ULL;
    return mix64(state_);
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  uint64_t uniform_index(uint64_t n) { return n ? next_u64() % n : 0; }

  double gaussian() {
    // Box-Muller; one value per call keeps the stream position predictable.
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

private:
  uint64_t state_;
};

}  // namespace cdcm
