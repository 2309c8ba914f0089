#ifndef EVSSM_COMMON_HPP
#define EVSSM_COMMON_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace evssm {

// Error categories. File parsers and validators must report distinct codes so
// callers (and the CLI exit-code mapping) can tell failures apart.
enum class Errc {
  io_failure,
  bad_magic,
  bad_version,
  truncated,
  non_monotonic_timestamps,
  channel_out_of_range,
  label_out_of_range,
  invariant_violation,
  dimension_mismatch,
  bad_argument,
  non_finite,
  divergence,
  degenerate_fit,
  bad_config,
};

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& msg) { throw Error(code, msg); }

inline void require(bool cond, Errc code, const std::string& msg) {
  if (!cond) fail(code, msg);
}

using Vec = std::vector<double>;

// Dense row-major matrix. Small enough that value semantics are the right call.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }

  std::size_t size() const { return a.size(); }
  double* data() { return a.data(); }
  const double* data() const { return a.data(); }

  static Mat identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
};

inline bool all_finite(std::span<const double> xs) {
  for (double x : xs)
    if (!std::isfinite(x)) return false;
  return true;
}

inline bool all_finite(const Mat& m) { return all_finite(std::span<const double>(m.a)); }

inline double max_abs(std::span<const double> xs) {
  double m = 0.0;
  for (double x : xs) m = std::max(m, std::abs(x));
  return m;
}

inline double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// y += alpha * x
inline void axpy(double alpha, const Vec& x, Vec& y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

// Shared state-update kernel: out[i] = a[i]*h[i] + b[i]. The sequential scan,
// step_state and the hardware state-node model all go through here so their
// trajectories agree bit-for-bit.
inline void decay_update(const double* a, const double* h, const double* b, double* out,
                         std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * h[i] + b[i];
}

// Static-partition parallel for. Results must be written to disjoint slots so the
// outcome is independent of the worker count.
template <typename Fn>
void parallel_for(std::size_t n, unsigned workers, Fn&& fn) {
  if (n == 0) return;
  if (workers <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  unsigned w = static_cast<unsigned>(std::min<std::size_t>(workers, n));
  std::vector<std::thread> pool;
  pool.reserve(w);
  std::size_t chunk = (n + w - 1) / w;
  for (unsigned t = 0; t < w; ++t) {
    std::size_t lo = static_cast<std::size_t>(t) * chunk;
    std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace evssm

#endif  // EVSSM_COMMON_HPP
