// SPDX-License-Identifier: Apache-2.0
#include "aqpim/pq_attention.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <numeric>

using namespace aqpim;
using aqpim::test::random_matrix;
using aqpim::test::random_vector;
using aqpim::test::random_weights;

namespace {

ChannelPermutation shuffled(std::uint32_t d, std::uint32_t m, std::uint64_t seed) {
  auto p = ChannelPermutation::identity(d, m);
  SeqRng rng(seed);
  for (std::uint32_t i = d - 1; i > 0; --i) std::swap(p.order[i], p.order[rng.below(i + 1)]);
  return p;
}

PqConfig cfg(std::uint32_t m, std::uint32_t k, std::uint32_t sink, std::uint32_t recent) {
  PqConfig c;
  c.m = m;
  c.k = k;
  c.sink_tokens = sink;
  c.recent_tokens = recent;
  c.rng_seed = 5;
  return c;
}

}  // namespace

TEST_CASE("exact attention on a hand example") {
  // Two keys, equal logits: uniform probabilities, mean of the values.
  Matrix k(2, 2), v(2, 2);
  k << 1, 0, 0, 1;
  v << 2, 4, 6, 8;
  Vector q(2);
  q << 3, 3;
  const auto r = exact_attention<float>(q, k, v, 1.0f);
  CHECK((*r.scores)(0) == doctest::Approx(0.5));
  CHECK(r.out(0) == doctest::Approx(4.0));
  CHECK(r.out(1) == doctest::Approx(6.0));
  CHECK(default_scale<float>(64) == doctest::Approx(0.125));
}

TEST_CASE("lookup-sum equals the inner product with reconstructed keys") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Matrix k = random_matrix(256, 64, 3 * s), v = random_matrix(256, 64, 3 * s + 1);
    const auto pk = shuffled(64, 8, s), pv = shuffled(64, 8, s + 99);
    auto c = cfg(8, 16, 4, 8);
    c.window_len = s % 2 ? 80 : 0;
    const auto ckv = build_compressed_kv(k, v, random_weights(256, s), c, pk, pv);
    const Vector q = permute(random_vector(64, 3 * s + 2), pk);
    const Vector got = lookup_sum_scores(q, ckv);
    const Vector ref = reconstruct_keys(ckv) * q;
    CHECK(relative_error(got, ref) <= 1e-5);
  }
}

TEST_CASE("inner product table entries") {
  const Matrix k = random_matrix(64, 16, 1);
  const auto ckv = build_compressed_kv(k, k, Vector::Ones(64), cfg(4, 8, 0, 0), ChannelPermutation::identity(16, 4),
                                       ChannelPermutation::identity(16, 4));
  const Vector q = random_vector(16, 2);
  const auto t = build_inner_product_table(ckv.key_codebook, q);
  for (std::uint32_t s = 0; s < 4; ++s)
    for (std::uint16_t j = 0; j < 8; ++j)
      CHECK(t.lookup(0, s, j) ==
            doctest::Approx(ckv.key_codebook.windows[0].tables[s].row(j).dot(q.segment(4 * s, 4))).epsilon(1e-6));
}

TEST_CASE("identity codebook reproduces exact attention") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Matrix k = random_matrix(128, 64, s), v = random_matrix(128, 64, s + 50);
    const auto id = ChannelPermutation::identity(64, 8);
    const auto ckv = build_compressed_kv(k, v, Vector::Ones(128), cfg(8, 120, 4, 4), id, id);
    const Vector q = random_vector(64, s + 100);
    const float scale = default_scale<float>(64);
    const auto ex = exact_attention<float>(q, k, v, scale);
    const auto pq = pq_attention(q, ckv, scale);
    CHECK(relative_error(pq.out, ex.out) <= 1e-4);
    CHECK(relative_error(*pq.scores, *ex.scores) <= 1e-4);
  }
}

TEST_CASE("permuted cache returns the output in value order") {
  const Matrix k = random_matrix(64, 16, 1), v = random_matrix(64, 16, 2);
  const auto pk = shuffled(16, 4, 3), pv = shuffled(16, 4, 4);
  const auto ckv = build_compressed_kv(k, v, Vector::Ones(64), cfg(4, 60, 2, 2), pk, pv);
  const Vector q = random_vector(16, 5);
  const auto ex = exact_attention<float>(q, k, v, 0.25f);
  const auto pq = pq_attention(permute(q, pk), ckv, 0.25f);
  CHECK(relative_error(permute(pq.out, pv.inverse()), ex.out) <= 1e-4);
}

TEST_CASE("FP16 rounding mode stays close to exact") {
  const Matrix k = random_matrix(96, 32, 7), v = random_matrix(96, 32, 8);
  const auto id = ChannelPermutation::identity(32, 4);
  const auto ckv = build_compressed_kv(k, v, Vector::Ones(96), cfg(4, 16, 2, 4), id, id);
  const Vector q = random_vector(32, 9);
  const auto a = pq_attention(q, ckv, default_scale<float>(32), Rounding::Exact32);
  const auto b = pq_attention(q, ckv, default_scale<float>(32), Rounding::Round16);
  CHECK(relative_error(b.out, a.out) <= 2e-2);
  CHECK(!(b.out == a.out));
  CHECK(rounding_from_string(to_string(Rounding::Round16)) == Rounding::Round16);
}

TEST_CASE("fidelity of a lossless cache is perfect") {
  const Matrix k = random_matrix(64, 16, 1), v = random_matrix(64, 16, 2);
  const auto id = ChannelPermutation::identity(16, 4);
  const auto ckv = build_compressed_kv(k, v, Vector::Ones(64), cfg(4, 64, 0, 0), id, id);
  const auto f = attention_fidelity(k, v, ckv, 16, 3);
  CHECK(f.n_queries == 16);
  CHECK(f.score_l1 <= 1e-5);
  CHECK(f.output_cos >= 1.0 - 1e-6);
  const auto lossy = build_compressed_kv(k, v, Vector::Ones(64), cfg(4, 2, 0, 0), id, id);
  const auto g = attention_fidelity(k, v, lossy, 16, 3);
  CHECK(g.score_l1 > f.score_l1);
  CHECK(g.output_cos < f.output_cos);
}

TEST_CASE("fidelity csv") {
  Fidelity f;
  f.score_l1 = 0.5;
  f.output_cos = 0.25;
  f.n_queries = 3;
  const auto c = cfg(8, 16, 1, 2);
  CHECK(fidelity_csv_header() == "m,k,iters,window_len,sink_tokens,recent_tokens,t,rng_seed,n_queries,score_l1,output_cos");
  CHECK(fidelity_csv_row(c, f) == "8,16,4,0,1,2,32,5,3,0.5,0.25");
}
