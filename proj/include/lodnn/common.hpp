// Shared primitives: error types, point/cell class labels, deterministic
// counter-based RNG, and the thread-count knob used by the NN kernels.
#ifndef LODNN_COMMON_HPP
#define LODNN_COMMON_HPP

#include <atomic>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace lodnn {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// File system / stream failures.
class IoError : public Error {
 public:
  using Error::Error;
};

// Structurally invalid input data (bad magic, truncated record, ...).
class FormatError : public Error {
 public:
  using Error::Error;
};

// A documented API precondition was violated by the caller.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

// Invalid configuration (bad key, out-of-range value, too-small dataset).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Semantically invalid data discovered mid-pipeline (non-finite loss, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractViolation(msg);
}

// Per-point / per-cell classification tag. Numeric values are load-bearing:
// they double as class indices for the 2-class network (Unknown is masked).
enum class Label : std::uint8_t { NotRoad = 0, Road = 1, Unknown = 2 };

// ---------------------------------------------------------------------------
// Counter-based RNG. Stateless: every draw is a hash of (key..., counter),
// so results are independent of evaluation order and thread scheduling.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
}

inline std::uint64_t counter_hash(std::uint64_t seed, std::uint64_t a,
                                  std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t h = splitmix64(seed);
  h = hash_combine(h, a);
  h = hash_combine(h, b);
  h = hash_combine(h, c);
  return h;
}

// Uniform double in [0, 1) from a hashed counter.
inline double uniform01(std::uint64_t h) {
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

inline double uniform_range(std::uint64_t h, double lo, double hi) {
  return lo + (hi - lo) * uniform01(h);
}

// Standard normal via Box-Muller; consumes two hashed counters.
inline double gaussian01(std::uint64_t h1, std::uint64_t h2) {
  double u1 = uniform01(h1);
  double u2 = uniform01(h2);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

// Small sequential RNG for shuffles. Still counter-seeded so an epoch
// shuffle is a pure function of (run seed, epoch index).
class SequentialRng {
 public:
  explicit SequentialRng(std::uint64_t seed) : state_(splitmix64(seed)) {}
  std::uint64_t next() {
    state_ = splitmix64(state_);
    return state_;
  }
  // Unbiased-enough index draw for Fisher-Yates at our sizes.
  std::size_t next_below(std::size_t n) { return static_cast<std::size_t>(next() % n); }

 private:
  std::uint64_t state_;
};

template <typename Vec>
void shuffle_in_place(Vec& v, SequentialRng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = rng.next_below(i);
    std::swap(v[i - 1], v[j]);
  }
}

// ---------------------------------------------------------------------------
// Threading knob. Kernels parallelize over disjoint output elements, so the
// values produced are identical for any thread count; default 1.
// ---------------------------------------------------------------------------

inline std::atomic<int>& thread_count_ref() {
  static std::atomic<int> n{1};
  return n;
}

inline void set_num_threads(int n) { thread_count_ref() = n < 1 ? 1 : n; }
inline int num_threads() { return thread_count_ref().load(); }

}  // namespace lodnn

#endif  // LODNN_COMMON_HPP
