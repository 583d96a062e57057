// SPDX-License-Identifier: Apache-2.0
#include "aqpim/error.hpp"
#include "aqpim/kmeans.hpp"

#include "helpers.hpp"

#include <doctest.h>

using namespace aqpim;
using aqpim::test::random_matrix;
using aqpim::test::random_weights;
using aqpim::test::unweighted_lloyd;

TEST_CASE("objective is non-increasing") {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const Matrix x = random_matrix(80, 4, s);
    const Vector w = random_weights(80, s + 1000);
    const auto r = weighted_kmeans(x, w, 8, 6, s);
    REQUIRE(r.objective_per_iter.size() == 6);
    for (std::size_t i = 1; i < r.objective_per_iter.size(); ++i)
      CHECK(r.objective_per_iter[i] <= r.objective_per_iter[i - 1] * (1.0 + 1e-12));
  }
}

TEST_CASE("uniform weights bit-match unweighted Lloyd with shared init") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Matrix x = random_matrix(60, 4, s);
    const Vector w = Vector::Ones(60);
    const Matrix init = kmeans_pp_init(x, w, 6, s);
    const auto a = weighted_kmeans_from(x, w, init, 4);
    const auto b = unweighted_lloyd(x, init, 4);
    CHECK(a.centroids == b.centroids);
    CHECK(a.assignments == b.assign);
    CHECK(a.objective_per_iter == b.objective);
  }
}

TEST_CASE("k = n on distinct points reaches zero objective") {
  const Matrix x = random_matrix(10, 3, 77);
  const auto r = weighted_kmeans(x, Vector(Vector::Ones(10)), 10, 4, 1);
  CHECK(r.objective_per_iter.back() == 0.0);
}

TEST_CASE("heavy group pulls a single centroid to its weighted mean") {
  Matrix x(4, 2);
  x << 0, 0, 0.2f, 0, 10, 10, 10.4f, 10;
  Vector w(4);
  w << 1, 1, 1000, 3000;
  const auto r = weighted_kmeans(x, w, 1, 1, 0);
  // Eq. 2 over all four points.
  const double mx = (0.2 + 1000 * 10.0 + 3000 * 10.4) / 4002.0;
  const double my = (1000 * 10.0 + 3000 * 10.0) / 4002.0;
  const double heavy_x = (1000 * 10.0 + 3000 * 10.4) / 4000.0;
  CHECK(r.centroids(0, 0) == doctest::Approx(mx).epsilon(1e-6));
  CHECK(r.centroids(0, 1) == doctest::Approx(my).epsilon(1e-6));
  CHECK(std::abs(r.centroids(0, 0) - heavy_x) <= 1e-3 * heavy_x);
}

TEST_CASE("ties go to the lowest centroid index") {
  Matrix c(3, 1);
  c << 1, -1, 1;
  Vector x(1);
  x << 0;
  CHECK(nearest_centroid(c, x.transpose()) == 0);
}

TEST_CASE("empty cluster moves to the worst-served point") {
  Matrix x(3, 1);
  x << 0, 1, 9;
  Matrix init(2, 1);
  init << 0.5f, 100;
  const auto r = weighted_kmeans_from(x, Vector(Vector::Ones(3)), init, 1);
  CHECK(r.centroids(1, 0) == 9.0f);
}

TEST_CASE("errors") {
  const Matrix x = random_matrix(4, 2, 1);
  CHECK_THROWS_AS(weighted_kmeans(x, Vector(Vector::Ones(4)), 5, 1, 0), Error);
  CHECK_THROWS_AS(weighted_kmeans(x, Vector(Vector::Zero(4)), 2, 1, 0), Error);
  Vector neg = Vector(Vector::Ones(4));
  neg(2) = -1;
  CHECK_THROWS_AS(weighted_kmeans_from(x, neg, Matrix(x.topRows(2)), 1), Error);
}

TEST_CASE("seeding is deterministic and weight-aware") {
  const Matrix x = random_matrix(30, 3, 2);
  Vector w = Vector(Vector::Zero(30));
  w(17) = 1;
  const Matrix c = kmeans_pp_init(x, w, 1, 123);
  CHECK(c.row(0) == x.row(17));
  CHECK(kmeans_pp_init(x, Vector(Vector::Ones(30)), 5, 4) == kmeans_pp_init(x, Vector(Vector::Ones(30)), 5, 4));
}
