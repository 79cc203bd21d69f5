#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "avatar/tensor.hpp"

namespace testsupport {

inline avatar::Tensor random_tensor(const avatar::Shape& shape, uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  avatar::Tensor t(shape);
  for (double& v : t.storage()) v = dist(rng);
  return t;
}

/// ||a - b|| / max(||a||, ||b||, floor).
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-12) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

/// Central differences of f with respect to every entry of `x` (restored after).
inline std::vector<double> numeric_gradient(double* x, std::size_t n, const std::function<double()>& f,
                                            double h = 1e-6) {
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f();
    x[i] = saved - h;
    const double down = f();
    x[i] = saved;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Same, restricted to a strided subset of entries, for large tensors.
inline void numeric_gradient_subset(double* x, const std::vector<std::size_t>& idx, const std::function<double()>& f,
                                    std::vector<double>& out, double h = 1e-6) {
  out.clear();
  for (std::size_t i : idx) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f();
    x[i] = saved - h;
    const double down = f();
    x[i] = saved;
    out.push_back((up - down) / (2.0 * h));
  }
}

inline std::vector<std::size_t> spread_indices(std::size_t n, std::size_t count, uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(std::min(n, count));
  return idx;
}

}  // namespace testsupport
