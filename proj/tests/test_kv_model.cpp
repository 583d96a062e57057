// SPDX-License-Identifier: Apache-2.0
#include "aqpim/error.hpp"
#include "aqpim/io.hpp"
#include "aqpim/kv_model.hpp"
#include "aqpim/quantizer.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

using namespace aqpim;
using aqpim::test::put;

namespace {

std::vector<std::uint8_t> header(std::uint32_t flags, std::uint32_t L, std::uint32_t H, std::uint32_t N,
                                 std::uint32_t D, std::uint32_t dtype) {
  std::vector<std::uint8_t> b = {'A', 'Q', 'K', 'V'};
  put<std::uint32_t>(b, 1);
  put<std::uint32_t>(b, flags);
  for (auto v : {L, H, N, D, dtype}) put<std::uint32_t>(b, v);
  return b;
}

std::string kind_of(const std::vector<std::uint8_t>& bytes) {
  try {
    parse_kv_dump(bytes);
  } catch (const Error& e) {
    return e.kind();
  }
  return "";
}

KvDump small_dump(bool weights) {
  SyntheticSpec s;
  s.n_tokens = 12;
  s.head_dim = 8;
  s.n_latent_clusters = 3;
  s.n_layers = 2;
  s.n_kv_heads = 2;
  s.with_weights = weights;
  s.rng_seed = 99;
  return generate_synthetic_kv(s);
}

}  // namespace

TEST_CASE("hand-built minimal file parses to zeros") {
  auto b = header(0, 1, 1, 2, 4, 0);
  for (int i = 0; i < 16; ++i) put<float>(b, 0.0f);
  const auto d = parse_kv_dump(b);
  CHECK(d.n_tokens == 2);
  CHECK(d.head_dim == 4);
  CHECK(!d.has_weights());
  CHECK(d.key(0, 0).isZero());
  CHECK(d.value(0, 0).isZero());
}

TEST_CASE("byte layout: layer-major keys, then values, then f32 weights") {
  // 1 layer, 2 heads, 2 tokens, 1 dim, f16 payload. Values chosen exact in f16.
  auto b = header(1, 1, 2, 2, 1, 1);
  const std::uint16_t k[4] = {0x3C00, 0x4000, 0x4200, 0x4400};  // 1 2 3 4
  const std::uint16_t v[4] = {0xBC00, 0x0000, 0x3800, 0x3400};  // -1 0 0.5 0.25
  for (auto x : k) put(b, x);
  for (auto x : v) put(b, x);
  for (float w : {1.0f, 0.0f, 2.0f, 3.0f}) put(b, w);
  const auto d = parse_kv_dump(b);
  CHECK(d.dtype == DType::F16);
  CHECK(d.key(0, 0)(1, 0) == 2.0f);
  CHECK(d.key(0, 1)(0, 0) == 3.0f);
  CHECK(d.value(0, 0)(0, 0) == -1.0f);
  CHECK(d.value(0, 1)(1, 0) == 0.25f);
  CHECK(d.weights[1](1) == 3.0f);
  CHECK(serialize_kv_dump(d) == b);
}

TEST_CASE("format errors") {
  auto good = header(0, 1, 1, 2, 4, 0);
  for (int i = 0; i < 16; ++i) put<float>(good, 0.5f);

  auto bad = good;
  bad[0] = 'X';
  CHECK(kind_of(bad) == "bad-magic");
  bad = good;
  bad[4] = 2;
  CHECK(kind_of(bad) == "bad-version");
  bad = good;
  bad[28] = 7;
  CHECK(kind_of(bad) == "bad-dtype");
  bad = good;
  bad.resize(bad.size() - 4);
  CHECK(kind_of(bad) == "truncated");
  bad = good;
  bad[12 + 8] = 3;  // n_tokens 2 -> 3: payload now short
  CHECK(kind_of(bad) == "truncated");
  bad = good;
  const float nan = std::nanf("");
  std::memcpy(bad.data() + 32 + 4 * 5, &nan, 4);
  CHECK(kind_of(bad) == "non-finite");
  bad = header(1, 1, 1, 2, 4, 0);
  for (int i = 0; i < 16; ++i) put<float>(bad, 0.5f);
  put<float>(bad, -1.0f);
  put<float>(bad, 1.0f);
  CHECK(kind_of(bad) == "negative-weight");
}

TEST_CASE("errors carry the byte offset") {
  auto b = header(0, 1, 1, 2, 4, 0);
  try {
    parse_kv_dump(b);
    FAIL("expected truncated");
  } catch (const FormatError& e) {
    CHECK(e.kind() == "truncated");
    CHECK(e.offset() == 32);
  }
}

TEST_CASE("weights flag follows presence") {
  CHECK((serialize_kv_dump(small_dump(false))[8] & 1) == 0);
  CHECK((serialize_kv_dump(small_dump(true))[8] & 1) == 1);
}

TEST_CASE("round trip through a file is bit exact and writes are deterministic") {
  const auto d = small_dump(true);
  const auto dir = std::filesystem::temp_directory_path() / "aqpim_kv_rt";
  std::filesystem::create_directories(dir);
  write_kv_dump(d, dir / "a.aqkv");
  write_kv_dump(d, dir / "b.aqkv");
  CHECK(load_kv_dump(dir / "a.aqkv") == d);
  CHECK(io::read_file(dir / "a.aqkv") == io::read_file(dir / "b.aqkv"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("missing file reports input-not-found") {
  try {
    load_kv_dump("/nonexistent/x.aqkv");
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.kind() == "input-not-found");
  }
}

TEST_CASE("fuzzed headers never crash") {
  const auto base = serialize_kv_dump(small_dump(true));
  SeqRng rng(5);
  int errors = 0;
  for (int trial = 0; trial < 500; ++trial) {
    auto b = base;
    const auto flips = 1 + rng.below(4);
    for (std::uint64_t f = 0; f < flips; ++f) b[rng.below(32)] = static_cast<std::uint8_t>(rng.next());
    if (rng.below(3) == 0) b.resize(rng.below(b.size()));
    try {
      parse_kv_dump(b).validate();
    } catch (const Error&) {
      ++errors;
    }
  }
  CHECK(errors > 0);
}

TEST_CASE("synthetic generator") {
  SyntheticSpec s;
  s.n_tokens = 64;
  s.head_dim = 16;
  s.n_latent_clusters = 5;
  s.cluster_spread = 0.0f;
  s.rng_seed = 3;
  const auto d = generate_synthetic_kv(s);
  std::set<std::vector<float>> rows;
  for (Eigen::Index i = 0; i < d.key(0, 0).rows(); ++i) {
    const Vector r = d.key(0, 0).row(i).transpose();
    rows.insert(std::vector<float>(r.data(), r.data() + r.size()));
  }
  CHECK(rows.size() == 5);
  CHECK(generate_synthetic_kv(s) == d);
  s.rng_seed = 4;
  CHECK(!(generate_synthetic_kv(s) == d));

  s.n_latent_clusters = 8;
  s.with_weights = false;
  s.head_dim = 16;
  s.n_tokens = 256;
  PqConfig pq;
  pq.m = 4;
  pq.k = 8;
  pq.sink_tokens = 0;
  pq.recent_tokens = 0;
  auto mse_at = [&](float spread) {
    s.cluster_spread = spread;
    const auto dd = generate_synthetic_kv(s);
    const auto id = ChannelPermutation::identity(16, 4);
    return quantization_error(dd, 0, 0, build_compressed_kv(dd, 0, 0, pq, id, id)).mse;
  };
  CHECK(mse_at(0.01f) < mse_at(10.0f));
}

TEST_CASE("invalid synthetic spec") {
  SyntheticSpec s;
  s.n_latent_clusters = s.n_tokens + 1;
  CHECK_THROWS_AS(generate_synthetic_kv(s), Error);
}
