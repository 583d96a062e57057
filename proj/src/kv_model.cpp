// SPDX-License-Identifier: Apache-2.0
#include "aqpim/kv_model.hpp"

#include "aqpim/error.hpp"
#include "aqpim/io.hpp"
#include "aqpim/rng.hpp"

#include <algorithm>
#include <numeric>

namespace aqpim {

namespace {

constexpr char kMagic[4] = {'A', 'Q', 'K', 'V'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kFlagWeights = 1u;

std::size_t scalar_bytes(DType t) { return t == DType::F32 ? 4 : 2; }

float decode_scalar(io::Reader& r, DType t) {
  switch (t) {
    case DType::F32: return r.get<float>();
    case DType::F16: return half_from_bits(r.get<std::uint16_t>());
    case DType::BF16: return bf16_from_bits(r.get<std::uint16_t>());
  }
  return 0.0f;
}

void encode_scalar(io::Writer& w, DType t, float x) {
  switch (t) {
    case DType::F32: w.put(x); break;
    case DType::F16: w.put(half_bits(x)); break;
    case DType::BF16: w.put(bf16_bits(x)); break;
  }
}

void read_block(io::Reader& r, DType t, std::vector<Matrix>& out, std::size_t n_heads, std::uint32_t rows,
                std::uint32_t cols) {
  out.assign(n_heads, Matrix(rows, cols));
  for (auto& m : out) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        const auto at = r.offset();
        const float v = decode_scalar(r, t);
        if (!std::isfinite(v)) throw FormatError("non-finite", at, "non-finite tensor value");
        m(i, j) = v;
      }
    }
  }
}

}  // namespace

void KvDump::validate() const {
  const std::size_t n_heads = static_cast<std::size_t>(n_layers) * n_kv_heads;
  require(keys.size() == n_heads && values.size() == n_heads, "dimension-mismatch",
          "expected " + std::to_string(n_heads) + " key/value matrices");
  for (std::size_t h = 0; h < n_heads; ++h) {
    require(keys[h].rows() == n_tokens && keys[h].cols() == head_dim, "dimension-mismatch",
            "key matrix " + std::to_string(h) + " has wrong shape");
    require(values[h].rows() == n_tokens && values[h].cols() == head_dim, "dimension-mismatch",
            "value matrix " + std::to_string(h) + " has wrong shape");
    require(keys[h].allFinite() && values[h].allFinite(), "non-finite", "non-finite value in head " + std::to_string(h));
  }
  if (!weights.empty()) {
    require(weights.size() == n_heads, "dimension-mismatch", "weights must be given for every head");
    for (std::size_t h = 0; h < n_heads; ++h) {
      const auto& w = weights[h];
      require(w.size() == n_tokens, "dimension-mismatch", "weight vector has wrong length");
      require(w.allFinite(), "non-finite", "non-finite weight");
      require((w.array() >= 0.0f).all(), "negative-weight", "weights must be nonnegative");
      require(n_tokens == 0 || (w.array() > 0.0f).any(), "zero-weights",
              "head " + std::to_string(h) + " has no positive weight");
    }
  }
}

bool operator==(const KvDump& a, const KvDump& b) {
  if (a.n_layers != b.n_layers || a.n_kv_heads != b.n_kv_heads || a.n_tokens != b.n_tokens ||
      a.head_dim != b.head_dim || a.dtype != b.dtype || a.keys.size() != b.keys.size() ||
      a.values.size() != b.values.size() || a.weights.size() != b.weights.size())
    return false;
  for (std::size_t i = 0; i < a.keys.size(); ++i)
    if (a.keys[i] != b.keys[i] || a.values[i] != b.values[i]) return false;
  for (std::size_t i = 0; i < a.weights.size(); ++i)
    if (a.weights[i] != b.weights[i]) return false;
  return true;
}

KvDump parse_kv_dump(const std::vector<std::uint8_t>& bytes) {
  io::Reader r(bytes);
  const auto magic = r.get_bytes(4);
  if (!std::equal(magic.begin(), magic.end(), kMagic)) throw FormatError("bad-magic", 0, "not an AQKV file");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) throw FormatError("bad-version", 4, "unsupported version " + std::to_string(version));
  const auto flags = r.get<std::uint32_t>();
  if ((flags & ~kFlagWeights) != 0) throw FormatError("bad-flags", 8, "unknown flag bits");

  KvDump d;
  d.n_layers = r.get<std::uint32_t>();
  d.n_kv_heads = r.get<std::uint32_t>();
  d.n_tokens = r.get<std::uint32_t>();
  d.head_dim = r.get<std::uint32_t>();
  const auto dtype = r.get<std::uint32_t>();
  if (dtype > 2) throw FormatError("bad-dtype", 28, "unknown dtype code " + std::to_string(dtype));
  d.dtype = static_cast<DType>(dtype);

  const std::size_t n_heads = static_cast<std::size_t>(d.n_layers) * d.n_kv_heads;
  const std::size_t per_block = n_heads * d.n_tokens * d.head_dim;
  const bool has_w = (flags & kFlagWeights) != 0;
  // Size check up front (in 128-bit-safe arithmetic) so bogus headers fail
  // before any allocation.
  const long double expected = 32.0L + 2.0L * per_block * scalar_bytes(d.dtype) +
                               (has_w ? 4.0L * n_heads * d.n_tokens : 0.0L);
  if (static_cast<long double>(bytes.size()) < expected)
    throw FormatError("truncated", bytes.size(),
                      "payload shorter than declared dimensions require (" +
                          std::to_string(static_cast<unsigned long long>(expected)) + " bytes)");
  if (static_cast<long double>(bytes.size()) > expected)
    throw FormatError("dimension-mismatch", static_cast<std::uint64_t>(expected),
                      "payload longer than declared dimensions");

  read_block(r, d.dtype, d.keys, n_heads, d.n_tokens, d.head_dim);
  read_block(r, d.dtype, d.values, n_heads, d.n_tokens, d.head_dim);
  if (has_w) {
    d.weights.assign(n_heads, Vector(d.n_tokens));
    for (auto& w : d.weights) {
      for (Eigen::Index i = 0; i < w.size(); ++i) {
        const auto at = r.offset();
        const float v = r.get<float>();
        if (!std::isfinite(v)) throw FormatError("non-finite", at, "non-finite weight");
        if (v < 0.0f) throw FormatError("negative-weight", at, "negative weight");
        w(i) = v;
      }
    }
  }
  for (std::size_t h = 0; h < d.weights.size(); ++h) {
    if (d.n_tokens > 0 && !(d.weights[h].array() > 0.0f).any())
      throw FormatError("zero-weights", 32 + 2 * per_block * scalar_bytes(d.dtype) + 4 * h * d.n_tokens,
                        "head " + std::to_string(h) + " has no positive weight");
  }
  return d;
}

KvDump load_kv_dump(const std::filesystem::path& path) { return parse_kv_dump(io::read_file(path)); }

std::vector<std::uint8_t> serialize_kv_dump(const KvDump& dump) {
  dump.validate();
  io::Writer w;
  w.put_bytes({kMagic, 4});
  w.put(kVersion);
  w.put<std::uint32_t>(dump.has_weights() ? kFlagWeights : 0u);
  w.put(dump.n_layers);
  w.put(dump.n_kv_heads);
  w.put(dump.n_tokens);
  w.put(dump.head_dim);
  w.put(static_cast<std::uint32_t>(dump.dtype));
  for (const auto* block : {&dump.keys, &dump.values})
    for (const auto& m : *block)
      for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) encode_scalar(w, dump.dtype, m(i, j));
  for (const auto& wv : dump.weights)
    for (Eigen::Index i = 0; i < wv.size(); ++i) w.put(wv(i));
  return std::move(w.bytes());
}

void write_kv_dump(const KvDump& dump, const std::filesystem::path& path) {
  io::write_file_atomic(path, serialize_kv_dump(dump));
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

void SyntheticSpec::validate() const {
  require(n_tokens > 0 && head_dim > 0 && n_layers > 0 && n_kv_heads > 0, "invalid-spec", "dimensions must be positive");
  require(n_latent_clusters >= 1 && n_latent_clusters <= n_tokens, "invalid-spec",
          "n_latent_clusters must be in [1, n_tokens]");
  require(cluster_spread >= 0.0f && std::isfinite(cluster_spread), "invalid-spec", "cluster_spread must be >= 0");
  require(channel_groups <= head_dim, "invalid-spec", "channel_groups must not exceed head_dim");
  require(heavy_fraction >= 0.0f && heavy_fraction <= 1.0f && heavy_scale > 0.0f, "invalid-spec",
          "heavy_fraction in [0,1], heavy_scale > 0");
}

namespace {

enum Stream : std::uint64_t { kKeyStream = 1, kValueStream = 2, kAssign = 3, kHeavy = 4, kGroup = 5, kLoading = 6 };

std::uint32_t cluster_of(const SyntheticSpec& s, std::uint32_t layer, std::uint32_t head, std::uint32_t token) {
  if (token < s.n_latent_clusters) return token;
  return static_cast<std::uint32_t>(mix_keys(s.rng_seed, {kAssign, layer, head, token}) % s.n_latent_clusters);
}

bool is_heavy(const SyntheticSpec& s, std::uint32_t layer, std::uint32_t head, std::uint32_t token) {
  return s.heavy_fraction > 0.0f && counter_uniform(s.rng_seed, {kHeavy, layer, head, token}) < s.heavy_fraction;
}

// Scattered channel -> group assignment: a seeded shuffle of 0..d-1 dealt
// round-robin into groups.
std::vector<std::uint32_t> channel_group_map(const SyntheticSpec& s, std::uint32_t layer, std::uint32_t head) {
  std::vector<std::uint32_t> order(s.head_dim);
  std::iota(order.begin(), order.end(), 0u);
  for (std::uint32_t i = s.head_dim; i > 1; --i) {
    const auto j = mix_keys(s.rng_seed, {kGroup, layer, head, i}) % i;
    std::swap(order[i - 1], order[j]);
  }
  std::vector<std::uint32_t> group(s.head_dim);
  for (std::uint32_t i = 0; i < s.head_dim; ++i) group[order[i]] = i % s.channel_groups;
  return group;
}

Matrix generate_stream(const SyntheticSpec& s, std::uint32_t layer, std::uint32_t head, Stream stream) {
  const std::uint32_t latent_dim = s.channel_groups > 0 ? s.channel_groups : s.head_dim;
  Matrix centers(s.n_latent_clusters, latent_dim);
  for (std::uint32_t c = 0; c < s.n_latent_clusters; ++c)
    for (std::uint32_t j = 0; j < latent_dim; ++j)
      centers(c, j) = static_cast<float>(counter_normal(mix_keys(s.rng_seed, {stream, layer, head, 0xC0, c, j})));

  Matrix out(s.n_tokens, s.head_dim);
  std::vector<std::uint32_t> group;
  Vector loading;
  if (s.channel_groups > 0) {
    group = channel_group_map(s, layer, head);
    loading.resize(s.head_dim);
    for (std::uint32_t j = 0; j < s.head_dim; ++j)
      loading(j) = 0.5f + static_cast<float>(counter_uniform(s.rng_seed, {kLoading, stream, layer, head, j}));
  }
  for (std::uint32_t t = 0; t < s.n_tokens; ++t) {
    const auto c = cluster_of(s, layer, head, t);
    if (s.channel_groups == 0) {
      for (std::uint32_t j = 0; j < s.head_dim; ++j) {
        const double noise = counter_normal(mix_keys(s.rng_seed, {stream, layer, head, 0x70, t, j}));
        out(t, j) = centers(c, j) + s.cluster_spread * static_cast<float>(noise);
      }
    } else {
      Vector factor(latent_dim);
      for (std::uint32_t g = 0; g < latent_dim; ++g)
        factor(g) = centers(c, g) +
                    s.cluster_spread * static_cast<float>(counter_normal(mix_keys(s.rng_seed, {stream, layer, head, 0x7F, t, g})));
      for (std::uint32_t j = 0; j < s.head_dim; ++j) {
        const double eps = counter_normal(mix_keys(s.rng_seed, {stream, layer, head, 0x70, t, j}));
        out(t, j) = loading(j) * factor(group[j]) + 0.02f * static_cast<float>(eps);
      }
    }
  }
  return out;
}

}  // namespace

std::vector<std::uint32_t> synthetic_heavy_tokens(const SyntheticSpec& spec, std::uint32_t layer,
                                                  std::uint32_t kv_head) {
  std::vector<std::uint32_t> out;
  for (std::uint32_t t = 0; t < spec.n_tokens; ++t)
    if (is_heavy(spec, layer, kv_head, t)) out.push_back(t);
  return out;
}

KvDump generate_synthetic_kv(const SyntheticSpec& spec) {
  spec.validate();
  KvDump d;
  d.n_layers = spec.n_layers;
  d.n_kv_heads = spec.n_kv_heads;
  d.n_tokens = spec.n_tokens;
  d.head_dim = spec.head_dim;
  for (std::uint32_t l = 0; l < spec.n_layers; ++l) {
    for (std::uint32_t h = 0; h < spec.n_kv_heads; ++h) {
      d.keys.push_back(generate_stream(spec, l, h, kKeyStream));
      d.values.push_back(generate_stream(spec, l, h, kValueStream));
      if (spec.with_weights) {
        Vector w = Vector::Ones(spec.n_tokens);
        for (std::uint32_t t = 0; t < spec.n_tokens; ++t)
          if (is_heavy(spec, l, h, t)) w(t) *= spec.heavy_scale;
        d.weights.push_back(std::move(w));
      }
    }
  }
  return d;
}

}  // namespace aqpim
