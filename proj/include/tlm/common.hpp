#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tlm {

// Thrown by every module; the CLI turns it into a one-line "error: <what>" on
// stderr with a nonzero exit, so tests can match on the message prefix.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

inline void require(bool ok, const std::string& msg) {
  if (!ok) fail(msg);
}

// Deterministic RNG. All distribution logic is implemented here instead of
// <random>'s distributions, whose outputs are implementation-defined; the
// sequences below are stable across platforms and standard libraries.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : gen_(seed), seed_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection-free multiply-shift would do, but the
  // simple modulo is fine for n far below 2^64 and keeps the stream obvious.
  std::uint64_t below(std::uint64_t n) {
    require(n > 0, "Rng::below: empty range");
    return next_u64() % n;
  }

  int range(int lo, int hi_exclusive) {
    require(hi_exclusive > lo, "Rng::range: empty range");
    return lo + int(below(std::uint64_t(hi_exclusive - lo)));
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller; one value consumed per call, the pair's
  // second half cached so streams stay cheap and reproducible.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

  // k distinct values from [0, n), ascending. Floyd's algorithm would avoid
  // the O(n) scratch, but n is small everywhere this is used.
  std::vector<int> sample_without_replacement(int n, int k) {
    require(0 <= k && k <= n, "Rng: sample size exceeds population");
    std::vector<int> pool(static_cast<std::size_t>(n));
    std::iota(pool.begin(), pool.end(), 0);
    shuffle(pool);
    pool.resize(std::size_t(k));
    std::sort(pool.begin(), pool.end());
    return pool;
  }

  // Derived stream: mixes a label into the seed so per-item generators are
  // order-independent.
  Rng child(std::uint64_t salt) const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    h = (h ^ seed_) * 0x100000001b3ull;
    h = (h ^ salt) * 0x100000001b3ull;
    h ^= h >> 33;
    return Rng(h == 0 ? 0x9e3779b97f4a7c15ull : h);
  }

private:
  std::mt19937_64 gen_;
  std::uint64_t seed_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// FNV-1a, used for frozen-parameter hashing in the stage-isolation checks.
inline std::uint64_t fnv1a(const void* data, std::size_t len,
                           std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a(s.data(), s.size(), h);
}

// Default root for run artifacts; subcommands resolve relative outputs here.
inline std::filesystem::path lab_home() {
  if (const char* env = std::getenv("TLM_LAB_HOME")) return env;
  return std::filesystem::current_path();
}

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view content);

// Minimal CSV support: comma separator, double-quote escaping, no embedded
// newlines. Header row is returned as row 0.
std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path);

}  // namespace tlm
