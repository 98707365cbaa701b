#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace romoseg {

// Error hierarchy. The CLI maps FormatError/IoError to exit code 2 and the
// computation errors to exit code 3.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};
struct DegeneracyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InsufficientDataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct PipelineError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Log verbosity, controlled by the ROMOSEG_LOG env var:
// "quiet" < "warn" (default) < "info" < "debug".
enum class LogLevel { kQuiet = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

LogLevel log_level();
void log_warn(const std::string& msg);
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

// SplitMix64; used to derive independent per-pair seeds from a global seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t global_seed, std::uint64_t stream) {
  return splitmix64(global_seed ^ splitmix64(stream + 1));
}

// Deterministic RNG. mt19937_64 has a fully specified bit stream; the
// standard distributions do not, so uniform/gaussian draws are mapped here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double next_double() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Uniform index in [0, n). Modulo bias is negligible for n << 2^64.
  std::size_t next_index(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }

  // Standard normal via Box-Muller (one value per call, second discarded
  // to keep the stream position independent of call pairing).
  double gaussian();

  // k distinct indices from [0, n), in draw order.
  std::vector<std::size_t> distinct_indices(std::size_t k, std::size_t n);

 private:
  std::mt19937_64 engine_;
};

// Pairwise (cascade) summation in the given order; deterministic and far more
// accurate than naive accumulation for large N.
double pairwise_sum(std::span<const double> values);

// FNV-1a over raw bytes; used for config/input hashes in run manifests.
std::uint64_t fnv1a(const void* data, std::size_t size);
std::string fnv1a_hex(const void* data, std::size_t size);
std::string fnv1a_hex(const std::string& s);

}  // namespace romoseg
