// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "aqpim/rng.hpp"
#include "aqpim/tensor.hpp"

#include <cstdint>
#include <cstring>
#include <limits>
#include <vector>

namespace aqpim::test {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double scale = 1.0) {
  SeqRng rng(seed);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = static_cast<float>(scale * rng.normal());
  return m;
}

inline Vector random_vector(Eigen::Index n, std::uint64_t seed) {
  return random_matrix(1, n, seed).row(0).transpose();
}

inline Vector random_weights(Eigen::Index n, std::uint64_t seed) {
  SeqRng rng(seed);
  Vector w(n);
  for (Eigen::Index i = 0; i < n; ++i) w(i) = static_cast<float>(0.05 + rng.uniform());
  return w;
}

// Plain Lloyd iterations with the same accumulation order as the weighted
// implementation, for clusters that never go empty.
struct Plain {
  Matrix centroids;
  std::vector<std::uint32_t> assign;
  std::vector<double> objective;
};

inline Plain unweighted_lloyd(const Matrix& x, Matrix c, std::uint32_t iters) {
  Plain r;
  const auto n = x.rows(), d = x.cols(), k = c.rows();
  r.assign.assign(static_cast<std::size_t>(n), 0);
  for (std::uint32_t it = 0; it < iters; ++it) {
    for (Eigen::Index i = 0; i < n; ++i) {
      float best = std::numeric_limits<float>::infinity();
      for (Eigen::Index j = 0; j < k; ++j) {
        float acc = 0.0f;
        for (Eigen::Index t = 0; t < d; ++t) acc += (x(i, t) - c(j, t)) * (x(i, t) - c(j, t));
        if (acc < best) {
          best = acc;
          r.assign[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(j);
        }
      }
    }
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, d);
    std::vector<double> cnt(static_cast<std::size_t>(k), 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto a = r.assign[static_cast<std::size_t>(i)];
      for (Eigen::Index t = 0; t < d; ++t) sums(a, t) += 1.0 * static_cast<double>(x(i, t));
      cnt[a] += 1.0;
    }
    for (Eigen::Index j = 0; j < k; ++j)
      if (cnt[static_cast<std::size_t>(j)] > 0)
        for (Eigen::Index t = 0; t < d; ++t)
          c(j, t) = static_cast<float>(sums(j, t) / cnt[static_cast<std::size_t>(j)]);
    double obj = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      float acc = 0.0f;
      const auto a = r.assign[static_cast<std::size_t>(i)];
      for (Eigen::Index t = 0; t < d; ++t) acc += (x(i, t) - c(a, t)) * (x(i, t) - c(a, t));
      obj += 1.0 * static_cast<double>(acc);
    }
    r.objective.push_back(obj);
  }
  r.centroids = c;
  return r;
}

template <typename T>
void put(std::vector<std::uint8_t>& b, T v) {
  const auto at = b.size();
  b.resize(at + sizeof(T));
  std::memcpy(b.data() + at, &v, sizeof(T));
}

}  // namespace aqpim::test
