#include "evssm/hippo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace evssm::model {

void symmetric_eigh(const Mat& s, Vec& eigenvalues, Mat& eigenvectors) {
  require(s.rows == s.cols && s.rows >= 1, Errc::dimension_mismatch, "eigh needs a square matrix");
  const std::size_t n = s.rows;
  Mat a = s;
  Mat v = Mat::identity(n);

  auto off_max = [&]() {
    double m = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) m = std::max(m, std::abs(a(p, q)));
    return m;
  };

  const double scale = std::max(max_abs(std::span<const double>(a.a)), 1e-300);
  const double tol = 1e-15 * scale;
  const int max_sweeps = 64;

  for (int sweep = 0; sweep < max_sweeps && off_max() > tol; ++sweep) {
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double apq = a(p, q);
        if (std::abs(apq) <= tol * 1e-2) continue;
        double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(1.0 + theta * theta));
        double c = 1.0 / std::sqrt(1.0 + t * t);
        double sn = t * c;

        for (std::size_t k = 0; k < n; ++k) {
          double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - sn * akq;
          a(k, q) = sn * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - sn * aqk;
          a(q, k) = sn * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - sn * vkq;
          v(k, q) = sn * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a(i, i) < a(j, j); });

  eigenvalues.assign(n, 0.0);
  eigenvectors = Mat(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    eigenvalues[j] = a(order[j], order[j]);
    for (std::size_t i = 0; i < n; ++i) eigenvectors(i, j) = v(i, order[j]);
  }
}

HippoOperator hippo_init(std::size_t h) {
  require(h >= 1, Errc::bad_argument, "hippo_init needs H >= 1");

  Mat m(h, h);
  for (std::size_t i = 0; i < h; ++i) {
    double ri = std::sqrt(1.0 + 2.0 * static_cast<double>(i));
    for (std::size_t j = 0; j <= i; ++j)
      m(i, j) = ri * std::sqrt(1.0 + 2.0 * static_cast<double>(j));
    m(i, i) -= static_cast<double>(i);
  }

  Vec p(h);
  for (std::size_t i = 0; i < h; ++i) p[i] = std::sqrt(static_cast<double>(i) + 0.5);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < h; ++j) m(i, j) += p[i] * p[j];

  HippoOperator op;
  op.rank_one = std::move(p);
  op.s = Mat(h, h);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < h; ++j) op.s(i, j) = 0.5 * (m(i, j) + m(j, i));

  symmetric_eigh(op.s, op.eigenvalues, op.eigenvectors);
  return op;
}

}  // namespace evssm::model
