#ifndef EVSSM_SCAN_HPP
#define EVSSM_SCAN_HPP

#include <bit>
#include <cstddef>
#include <utility>
#include <vector>

#include "evssm/common.hpp"

namespace evssm::scan {

// One step of the linear recurrence h_k = A_k h_{k-1} + b_k. The transition
// coefficient is a scalar under the shared-decay constraint and a per-dimension
// vector in the grouped-decay generalization.
template <typename Coef>
struct Element {
  Coef a;
  Vec b;
};

using ScalarElement = Element<double>;
using DiagElement = Element<Vec>;

inline ScalarElement identity_like(const ScalarElement& e) {
  return {1.0, Vec(e.b.size(), 0.0)};
}
inline DiagElement identity_like(const DiagElement& e) {
  return {Vec(e.a.size(), 1.0), Vec(e.b.size(), 0.0)};
}

// (A_i, b_i) o (A_j, b_j) = (A_j * A_i, A_j * b_i + b_j); associative, not commutative.
inline ScalarElement combine(const ScalarElement& left, const ScalarElement& right) {
  require(left.b.size() == right.b.size(), Errc::dimension_mismatch,
          "scan combine: mismatched element sizes");
  ScalarElement out;
  out.a = right.a * left.a;
  out.b.resize(left.b.size());
  for (std::size_t i = 0; i < left.b.size(); ++i) out.b[i] = right.a * left.b[i] + right.b[i];
  return out;
}

inline DiagElement combine(const DiagElement& left, const DiagElement& right) {
  require(left.a.size() == right.a.size() && left.b.size() == right.b.size(),
          Errc::dimension_mismatch, "scan combine: mismatched element sizes");
  DiagElement out;
  out.a.resize(left.a.size());
  out.b.resize(left.b.size());
  for (std::size_t i = 0; i < left.a.size(); ++i) out.a[i] = right.a[i] * left.a[i];
  decay_update(right.a.data(), left.b.data(), right.b.data(), out.b.data(), left.b.size());
  return out;
}

// Applies one element to a running state, sharing the kernel used by the
// sequential state-update paths.
inline void apply_element(const ScalarElement& e, Vec& state) {
  for (std::size_t i = 0; i < state.size(); ++i) state[i] = e.a * state[i] + e.b[i];
}
inline void apply_element(const DiagElement& e, Vec& state) {
  Vec out(state.size());
  decay_update(e.a.data(), state.data(), e.b.data(), out.data(), state.size());
  state = std::move(out);
}

inline void mul_into(double& a, const double& prev) { a *= prev; }
inline void mul_into(Vec& a, const Vec& prev) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] *= prev[i];
}

inline double zero_coef_like(const ScalarElement&) { return 0.0; }
inline Vec zero_coef_like(const DiagElement& e) { return Vec(e.a.size(), 0.0); }

inline double coef_grad(const Vec& d, const Vec& h_prev, const double&) { return dot(d, h_prev); }
inline Vec coef_grad(const Vec& d, const Vec& h_prev, const Vec&) {
  Vec g(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) g[i] = d[i] * h_prev[i];
  return g;
}

struct ScanOptions {
  std::size_t sequential_threshold = 1024;  // tree overhead dominates below this
  unsigned workers = 1;
};

// Output k equals elements[0] o ... o elements[k]; its b component is the state h_k.
template <typename E>
std::vector<E> inclusive_scan_sequential(const std::vector<E>& elements) {
  std::vector<E> out(elements.size());
  if (elements.empty()) return out;
  out[0] = elements[0];
  Vec state = elements[0].b;
  for (std::size_t k = 1; k < elements.size(); ++k) {
    apply_element(elements[k], state);
    out[k].a = elements[k].a;
    mul_into(out[k].a, out[k - 1].a);
    out[k].b = state;
  }
  return out;
}

// Work-efficient Blelloch tree: up-sweep reductions, identity at the root, then a
// down-sweep producing exclusive prefixes; one final combine per slot makes the scan
// inclusive. Combine order is fixed by the tree shape, so results do not depend on
// the worker count. Non-power-of-two lengths are padded with identity elements.
template <typename E>
std::vector<E> inclusive_scan_tree(const std::vector<E>& elements, unsigned workers = 1) {
  const std::size_t n = elements.size();
  if (n == 0) return {};
  if (n == 1) return {elements[0]};

  const std::size_t m = std::bit_ceil(n);
  std::vector<E> work(m, identity_like(elements[0]));
  for (std::size_t i = 0; i < n; ++i) work[i] = elements[i];

  for (std::size_t stride = 1; stride < m; stride *= 2) {
    const std::size_t pairs = m / (2 * stride);
    parallel_for(pairs, pairs >= 64 ? workers : 1, [&](std::size_t i) {
      const std::size_t left = 2 * stride * i + stride - 1;
      const std::size_t right = 2 * stride * (i + 1) - 1;
      work[right] = combine(work[left], work[right]);
    });
  }

  work[m - 1] = identity_like(elements[0]);

  for (std::size_t stride = m / 2; stride >= 1; stride /= 2) {
    const std::size_t pairs = m / (2 * stride);
    parallel_for(pairs, pairs >= 64 ? workers : 1, [&](std::size_t i) {
      const std::size_t left = 2 * stride * i + stride - 1;
      const std::size_t right = 2 * stride * (i + 1) - 1;
      E left_total = std::move(work[left]);
      work[left] = work[right];                       // prefix flows to the left child
      work[right] = combine(work[left], left_total);  // prefix-then-left-subtotal
    });
    if (stride == 1) break;
  }

  std::vector<E> out(n);
  parallel_for(n, workers, [&](std::size_t k) { out[k] = combine(work[k], elements[k]); });
  return out;
}

template <typename E>
std::vector<E> inclusive_scan(const std::vector<E>& elements, const ScanOptions& opts = {}) {
  if (elements.size() < opts.sequential_threshold) return inclusive_scan_sequential(elements);
  return inclusive_scan_tree(elements, opts.workers);
}

// Gradients of a scalar loss with respect to every (A_k, b_k), given the upstream
// gradients g_k = dL/dh_k. The adjoint recurrence d_k = g_k + A_{k+1} d_{k+1} is a
// linear recurrence run backward and is evaluated with the same scan machinery:
//   dL/db_k = d_k,   dL/dA_k = d_k * h_{k-1}  (h_{-1} = 0, so dL/dA_0 = 0).
// `states` holds the forward results h_k (the b components of the forward scan).
template <typename Coef>
struct AdjointResult {
  std::vector<Coef> d_a;
  std::vector<Vec> d_b;
};

template <typename Coef>
AdjointResult<Coef> scan_adjoint(const std::vector<Element<Coef>>& elements,
                                 const std::vector<Vec>& states,
                                 const std::vector<Vec>& upstream,
                                 const ScanOptions& opts = {}) {
  const std::size_t n = elements.size();
  require(states.size() == n && upstream.size() == n, Errc::dimension_mismatch,
          "scan_adjoint: lengths disagree");
  AdjointResult<Coef> out;
  if (n == 0) return out;

  std::vector<Element<Coef>> reversed(n);
  reversed[0].a = identity_like(elements[0]).a;
  reversed[0].b = upstream[n - 1];
  for (std::size_t j = 1; j < n; ++j) {
    reversed[j].a = elements[n - j].a;
    reversed[j].b = upstream[n - 1 - j];
  }
  std::vector<Element<Coef>> scanned = inclusive_scan(reversed, opts);

  out.d_b.resize(n);
  for (std::size_t j = 0; j < n; ++j) out.d_b[n - 1 - j] = std::move(scanned[j].b);

  out.d_a.resize(n);
  out.d_a[0] = zero_coef_like(elements[0]);
  for (std::size_t k = 1; k < n; ++k)
    out.d_a[k] = coef_grad(out.d_b[k], states[k - 1], elements[0].a);
  return out;
}

}  // namespace evssm::scan

#endif  // EVSSM_SCAN_HPP
