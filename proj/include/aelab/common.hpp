#pragma once

#include <cstdint>
#include <cstring>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace aelab {

// Error taxonomy. Everything user-facing is catchable as aelab::Error;
// the subclasses exist so callers (and tests) can tell shape bugs from
// bad configs from I/O trouble.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite values, degenerate denominators, out-of-range magnitudes.
class ValueError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

// --- content hashing -------------------------------------------------------

// FNV-1a, 64-bit. Used for content ids (models, ensembles, cache keys).
class Hasher {
 public:
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 1099511628211ull;
    }
  }
  void update(std::string_view s) { update(s.data(), s.size()); }
  void update_u64(std::uint64_t v) { update(&v, sizeof(v)); }
  void update_doubles(const double* p, std::size_t n) { update(p, n * sizeof(double)); }
  std::uint64_t digest() const { return h_; }
  std::string hex() const;

 private:
  std::uint64_t h_ = 1469598103934665603ull;
};

std::string hex64(std::uint64_t v);

// Mixes a base seed with a purpose tag so independent components never share
// RNG streams.
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag);

// --- deterministic RNG -----------------------------------------------------

// splitmix64 core. Self-contained so streams are identical across standard
// libraries (std::normal_distribution and friends are implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // unbiased integer in [0, n)
  std::uint64_t below(std::uint64_t n);

  // standard normal via Box-Muller (two uniforms per draw, no cached spare)
  double normal();

  void shuffle(std::vector<int>& v);

 private:
  std::uint64_t state_;
};

// --- misc ------------------------------------------------------------------

bool all_finite(const double* p, std::size_t n);

// Static-chunked parallel map; results must be written by index so the
// outcome is identical for any thread count. threads <= 1 runs inline.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

// AELAB_THREADS env var, else hardware_concurrency.
int default_threads();

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

}  // namespace aelab
