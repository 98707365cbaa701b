#include "romoseg/common.hpp"

#include <cmath>
#include <cstring>

namespace romoseg {

LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("ROMOSEG_LOG");
    if (env == nullptr) return LogLevel::kWarn;
    const std::string s(env);
    if (s == "quiet") return LogLevel::kQuiet;
    if (s == "info") return LogLevel::kInfo;
    if (s == "debug") return LogLevel::kDebug;
    return LogLevel::kWarn;
  }();
  return level;
}

static void log_line(const char* tag, const std::string& msg) {
  std::fprintf(stderr, "[romoseg %s] %s\n", tag, msg.c_str());
}

void log_warn(const std::string& msg) {
  if (log_level() >= LogLevel::kWarn) log_line("warn", msg);
}

void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::kInfo) log_line("info", msg);
}

void log_debug(const std::string& msg) {
  if (log_level() >= LogLevel::kDebug) log_line("debug", msg);
}

double Rng::gaussian() {
  double u1 = next_double();
  while (u1 <= 0.0) u1 = next_double();
  const double u2 = next_double();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::vector<std::size_t> Rng::distinct_indices(std::size_t k, std::size_t n) {
  if (k > n) throw ContractError("distinct_indices: k > n");
  std::vector<std::size_t> out;
  out.reserve(k);
  while (out.size() < k) {
    const std::size_t idx = next_index(n);
    bool seen = false;
    for (const std::size_t prev : out) {
      if (prev == idx) {
        seen = true;
        break;
      }
    }
    if (!seen) out.push_back(idx);
  }
  return out;
}

double pairwise_sum(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n == 0) return 0.0;
  if (n <= 8) {
    double s = 0.0;
    for (const double v : values) s += v;
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

std::uint64_t fnv1a(const void* data, std::size_t size) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string fnv1a_hex(const void* data, std::size_t size) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(data, size)));
  return std::string(buf);
}

std::string fnv1a_hex(const std::string& s) { return fnv1a_hex(s.data(), s.size()); }

}  // namespace romoseg
