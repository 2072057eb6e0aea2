#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace lgpt {

// ---------------------------------------------------------------------------
// Error taxonomy. Everything user-facing derives from std::runtime_error so
// callers can catch broadly; the concrete type names the contract violated.
// ---------------------------------------------------------------------------

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};
struct IndexError : std::runtime_error {
  explicit IndexError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
struct CapacityError : std::runtime_error {
  explicit CapacityError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};
struct EvalError : std::runtime_error {
  explicit EvalError(const std::string& msg) : std::runtime_error(msg) {}
};
struct VersionError : std::runtime_error {
  explicit VersionError(const std::string& msg) : std::runtime_error(msg) {}
};
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

using Shape = std::vector<std::size_t>;

inline std::string format_shape(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

inline std::mt19937_64 seeded_rng(std::uint64_t seed) {
  return std::mt19937_64(seed);
}

// ---------------------------------------------------------------------------
// Thread pool-free row parallelism. Work is split into contiguous ranges, so
// every output element is computed by exactly one thread with the same
// arithmetic order as the serial loop; results are bitwise independent of the
// thread count.
// ---------------------------------------------------------------------------

inline int& thread_count_ref() {
  static int n = 1;
  return n;
}

inline void set_threads(int n) {
  if (n < 1) n = 1;
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw > 0 && n > 4 * hw) n = 4 * hw;
  thread_count_ref() = n;
}

inline int threads() { return thread_count_ref(); }

template <class Fn>
void parallel_for(std::size_t n, std::size_t grain, Fn&& fn) {
  int t = threads();
  if (t <= 1 || n <= grain) {
    fn(std::size_t{0}, n);
    return;
  }
  std::size_t chunks = std::min<std::size_t>(static_cast<std::size_t>(t), n);
  std::size_t per = (n + chunks - 1) / chunks;
  std::vector<std::thread> workers;
  workers.reserve(chunks - 1);
  for (std::size_t c = 1; c < chunks; ++c) {
    std::size_t b = c * per;
    std::size_t e = std::min(n, b + per);
    if (b >= e) break;
    workers.emplace_back([&fn, b, e] { fn(b, e); });
  }
  fn(std::size_t{0}, std::min(n, per));
  for (auto& w : workers) w.join();
}

}  // namespace lgpt
