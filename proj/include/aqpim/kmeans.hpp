// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "aqpim/error.hpp"
#include "aqpim/rng.hpp"
#include "aqpim/tensor.hpp"

#include <cstdint>
#include <limits>
#include <vector>

namespace aqpim {

template <typename Scalar>
struct KMeansResult {
  RowMatrix<Scalar> centroids;           // k x d
  std::vector<std::uint32_t> assignments;  // n
  std::vector<double> objective_per_iter;  // one entry per round
};

// Squared Euclidean distance, accumulated left to right in Scalar.
template <typename A, typename B>
typename A::Scalar squared_distance(const Eigen::MatrixBase<A>& x, const Eigen::MatrixBase<B>& c) {
  typename A::Scalar acc(0);
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const auto diff = x(j) - c(j);
    acc += diff * diff;
  }
  return acc;
}

// Index of the nearest centroid to row `x`; ties go to the lowest index.
template <typename Scalar, typename Row>
std::uint32_t nearest_centroid(const RowMatrix<Scalar>& centroids, const Eigen::MatrixBase<Row>& x,
                               Scalar* best_distance = nullptr) {
  std::uint32_t best = 0;
  Scalar best_d = std::numeric_limits<Scalar>::infinity();
  for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
    const Scalar dist = squared_distance(x, centroids.row(c));
    if (dist < best_d) {
      best_d = dist;
      best = static_cast<std::uint32_t>(c);
    }
  }
  if (best_distance) *best_distance = best_d;
  return best;
}

// Distance-weighted seeding: the first centroid is drawn with probability
// proportional to w, each next one proportional to w * D^2 to the closest
// chosen centroid. When every remaining point has zero mass the next point
// in index order is taken.
template <typename Scalar>
RowMatrix<Scalar> kmeans_pp_init(const RowMatrix<Scalar>& points, const ColVector<Scalar>& weights, std::uint32_t k,
                                 std::uint64_t rng_seed) {
  const auto n = static_cast<std::size_t>(points.rows());
  require(k >= 1 && k <= n, "invalid-k", "k must be in [1, n]");
  SeqRng rng(mix_keys(rng_seed, {0x4B4D5050ULL}));
  RowMatrix<Scalar> centroids(k, points.cols());
  std::vector<double> mass(n);
  for (std::size_t i = 0; i < n; ++i) mass[i] = static_cast<double>(weights(i));

  auto draw = [&](std::size_t fallback) {
    double total = 0.0;
    for (double v : mass) total += v;
    if (!(total > 0.0)) return fallback % n;
    const double target = rng.uniform() * total;
    double run = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (mass[i] <= 0.0) continue;
      run += mass[i];
      last_positive = i;
      if (target < run) return i;
    }
    return last_positive;
  };

  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  for (std::uint32_t c = 0; c < k; ++c) {
    const std::size_t pick = draw(c);
    centroids.row(c) = points.row(static_cast<Eigen::Index>(pick));
    for (std::size_t i = 0; i < n; ++i) {
      const double d2 = static_cast<double>(squared_distance(points.row(i), centroids.row(c)));
      dist[i] = std::min(dist[i], d2);
      mass[i] = static_cast<double>(weights(i)) * dist[i];
    }
  }
  return centroids;
}

namespace detail {

template <typename Scalar>
double weighted_objective(const RowMatrix<Scalar>& points, const ColVector<Scalar>& weights,
                          const RowMatrix<Scalar>& centroids, const std::vector<std::uint32_t>& assign) {
  double obj = 0.0;
  for (Eigen::Index i = 0; i < points.rows(); ++i)
    obj += static_cast<double>(weights(i)) *
           static_cast<double>(squared_distance(points.row(i), centroids.row(assign[static_cast<std::size_t>(i)])));
  return obj;
}

}  // namespace detail

// Lloyd rounds from a given initialization: assign each point to its nearest
// centroid, then move every centroid to the weighted mean of its members.
// A centroid whose members carry zero total weight is moved onto the point
// with the largest weighted distance to its current centroid (if that
// distance is positive); otherwise it stays where it is.
template <typename Scalar>
KMeansResult<Scalar> weighted_kmeans_from(const RowMatrix<Scalar>& points, const ColVector<Scalar>& weights,
                                          RowMatrix<Scalar> init, std::uint32_t iters) {
  const auto n = static_cast<std::size_t>(points.rows());
  require(n >= 1, "invalid-input", "k-means needs at least one point");
  require(weights.size() == points.rows(), "dimension-mismatch", "one weight per point required");
  require((weights.array() >= Scalar(0)).all(), "negative-weight", "weights must be nonnegative");
  require(weights.template cast<double>().sum() > 0.0, "zero-weights", "weights must not all be zero");
  require(init.rows() >= 1 && init.cols() == points.cols(), "dimension-mismatch", "bad initial centroids");

  const auto k = static_cast<std::size_t>(init.rows());
  const auto d = points.cols();
  KMeansResult<Scalar> r;
  r.centroids = std::move(init);
  r.assignments.assign(n, 0);
  std::vector<Scalar> point_dist(n);

  Eigen::MatrixXd sums(k, d);
  std::vector<double> mass(k);
  for (std::uint32_t it = 0; it < iters; ++it) {
    for (std::size_t i = 0; i < n; ++i)
      r.assignments[i] = nearest_centroid(r.centroids, points.row(static_cast<Eigen::Index>(i)), &point_dist[i]);

    sums.setZero();
    std::fill(mass.begin(), mass.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double w = static_cast<double>(weights(static_cast<Eigen::Index>(i)));
      const auto a = r.assignments[i];
      for (Eigen::Index j = 0; j < d; ++j) sums(a, j) += w * static_cast<double>(points(static_cast<Eigen::Index>(i), j));
      mass[a] += w;
    }

    std::vector<bool> taken(n, false);
    for (std::size_t c = 0; c < k; ++c) {
      if (mass[c] > 0.0) {
        for (Eigen::Index j = 0; j < d; ++j)
          r.centroids(static_cast<Eigen::Index>(c), j) = static_cast<Scalar>(sums(c, j) / mass[c]);
        continue;
      }
      // Empty-cluster repair.
      double worst = 0.0;
      std::size_t worst_i = n;
      for (std::size_t i = 0; i < n; ++i) {
        const double wd = static_cast<double>(weights(static_cast<Eigen::Index>(i))) * static_cast<double>(point_dist[i]);
        if (!taken[i] && wd > worst) {
          worst = wd;
          worst_i = i;
        }
      }
      if (worst_i < n) {
        taken[worst_i] = true;
        r.centroids.row(static_cast<Eigen::Index>(c)) = points.row(static_cast<Eigen::Index>(worst_i));
      }
    }
    r.objective_per_iter.push_back(detail::weighted_objective(points, weights, r.centroids, r.assignments));
  }
  if (iters == 0) {
    for (std::size_t i = 0; i < n; ++i)
      r.assignments[i] = nearest_centroid(r.centroids, points.row(static_cast<Eigen::Index>(i)));
  }
  return r;
}

// Importance-weighted k-means: k-means++-style seeding then `iters` rounds.
template <typename Scalar>
KMeansResult<Scalar> weighted_kmeans(const RowMatrix<Scalar>& points, const ColVector<Scalar>& weights,
                                     std::uint32_t k, std::uint32_t iters, std::uint64_t rng_seed) {
  require(points.rows() >= 1, "invalid-input", "k-means needs at least one point");
  require(weights.size() == points.rows(), "dimension-mismatch", "one weight per point required");
  require(weights.template cast<double>().sum() > 0.0, "zero-weights", "weights must not all be zero");
  require(k >= 1 && k <= static_cast<std::uint64_t>(points.rows()), "invalid-k",
          "k = " + std::to_string(k) + " exceeds the number of points " + std::to_string(points.rows()));
  return weighted_kmeans_from(points, weights, kmeans_pp_init(points, weights, k, rng_seed), iters);
}

}  // namespace aqpim
