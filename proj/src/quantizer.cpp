// SPDX-License-Identifier: Apache-2.0
#include "aqpim/quantizer.hpp"

#include "aqpim/error.hpp"
#include "aqpim/io.hpp"
#include "aqpim/kmeans.hpp"
#include "aqpim/rng.hpp"

#include <json.hpp>

#include <algorithm>

namespace aqpim {

void PqConfig::validate() const {
  require(m >= 1, "invalid-config", "m must be >= 1");
  require(k >= 1 && k <= 65536, "invalid-config", "k must be in [1, 65536] (16-bit indices)");
}

std::string PqConfig::to_json() const {
  nlohmann::json j{{"m", m},
                   {"k", k},
                   {"iters", iters},
                   {"window_len", window_len},
                   {"sink_tokens", sink_tokens},
                   {"recent_tokens", recent_tokens},
                   {"t", t},
                   {"rng_seed", rng_seed}};
  return j.dump();
}

PqConfig PqConfig::from_json(const std::string& text) {
  PqConfig c;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error("invalid-config", e.what());
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& key = it.key();
    auto get = [&](auto& field) {
      try {
        field = it.value().get<std::remove_reference_t<decltype(field)>>();
      } catch (const nlohmann::json::exception& e) {
        throw Error("invalid-config", "field '" + key + "': " + e.what());
      }
    };
    if (key == "m") get(c.m);
    else if (key == "k") get(c.k);
    else if (key == "iters") get(c.iters);
    else if (key == "window_len") get(c.window_len);
    else if (key == "sink_tokens") get(c.sink_tokens);
    else if (key == "recent_tokens") get(c.recent_tokens);
    else if (key == "t") get(c.t);
    else if (key == "rng_seed") get(c.rng_seed);
    else throw Error("invalid-config", "unknown PqConfig key '" + key + "'");
  }
  c.validate();
  return c;
}

void check_page_residency(const PqConfig& cfg, std::size_t row_buffer_bytes) {
  require(static_cast<std::size_t>(cfg.k) * 2 <= row_buffer_bytes, "page-residency",
          "k = " + std::to_string(cfg.k) + " FP16 entries exceed the " + std::to_string(row_buffer_bytes) +
              "-byte row buffer");
}

int Codebook::window_of(std::uint32_t pos) const {
  for (std::size_t w = 0; w < windows.size(); ++w)
    if (pos >= windows[w].begin && pos < windows[w].end) return static_cast<int>(w);
  return -1;
}

Vector compute_importance_weights(const Matrix& s_matrix, std::uint32_t t) {
  require(s_matrix.rows() == s_matrix.cols(), "dimension-mismatch", "score matrix must be square");
  require(t <= s_matrix.rows(), "invalid-t",
          "t = " + std::to_string(t) + " exceeds sequence length " + std::to_string(s_matrix.rows()));
  Vector w = Vector::Zero(s_matrix.cols());
  if (t > 0) w = s_matrix.bottomRows(t).colwise().sum().transpose();
  return w;
}

Vector aggregate_gqa_weights(std::span<const Vector> per_query_head) {
  require(!per_query_head.empty(), "invalid-input", "no weight vectors to aggregate");
  Vector w = Vector::Zero(per_query_head.front().size());
  for (const auto& v : per_query_head) {
    require(v.size() == w.size(), "dimension-mismatch", "weight vectors differ in length");
    w += v;
  }
  return w;
}

namespace {

enum : std::uint64_t { kKeyStream = 0x4B, kValueStream = 0x56 };

struct StreamResult {
  Codebook codebook;
  PqIndices indices;
};

StreamResult cluster_stream(const Matrix& x, const Vector& weights, const PqConfig& cfg, std::uint32_t sink,
                            std::uint32_t n_quant, std::uint64_t stream) {
  const auto n = static_cast<std::uint32_t>(x.rows());
  const auto sd = static_cast<std::uint32_t>(x.cols()) / cfg.m;
  StreamResult r;
  r.codebook.m = cfg.m;
  r.codebook.sub_dim = sd;
  r.indices.m = cfg.m;
  r.indices.codes.assign(static_cast<std::size_t>(n) * cfg.m, kFullPrecision);
  r.indices.window.assign(n, -1);
  if (n_quant == 0) return r;

  const std::uint32_t wlen = cfg.window_len == 0 ? n_quant : cfg.window_len;
  for (std::uint32_t begin = sink, w = 0; begin < sink + n_quant; begin += wlen, ++w) {
    const std::uint32_t end = std::min(begin + wlen, sink + n_quant);
    const std::uint32_t len = end - begin;
    CodebookWindow win;
    win.begin = begin;
    win.end = end;
    win.objective_per_iter.assign(cfg.iters, 0.0);
    const Vector wts = weights.segment(begin, len);
    for (std::uint32_t s = 0; s < cfg.m; ++s) {
      const Matrix pts = x.block(begin, static_cast<Eigen::Index>(s) * sd, len, sd);
      KMeansResult<float> km;
      if (w == 0) {
        km = weighted_kmeans(pts, wts, std::min(cfg.k, len), cfg.iters, mix_keys(cfg.rng_seed, {stream, w, s}));
      } else {
        // Warm start: the previous window's centroids seed this window.
        km = weighted_kmeans_from(pts, wts, r.codebook.windows.back().tables[s], cfg.iters);
      }
      for (std::uint32_t it = 0; it < cfg.iters; ++it) win.objective_per_iter[it] += km.objective_per_iter[it];
      for (std::uint32_t i = 0; i < len; ++i) {
        const auto code = nearest_centroid(km.centroids, pts.row(i));
        r.indices.codes[static_cast<std::size_t>(begin + i) * cfg.m + s] = static_cast<std::uint16_t>(code);
      }
      win.tables.push_back(std::move(km.centroids));
    }
    for (std::uint32_t i = begin; i < end; ++i) r.indices.window[i] = static_cast<std::int32_t>(w);
    r.codebook.windows.push_back(std::move(win));
  }
  return r;
}

Matrix reconstruct(const Codebook& cb, const PqIndices& idx, const Matrix& sink, const Matrix& recent,
                   std::uint32_t head_dim) {
  const auto n = idx.n_tokens();
  Matrix out(n, head_dim);
  const auto n_sink = static_cast<std::uint32_t>(sink.rows());
  const auto n_recent = static_cast<std::uint32_t>(recent.rows());
  if (n_sink > 0) out.topRows(n_sink) = sink;
  if (n_recent > 0) out.bottomRows(n_recent) = recent;
  for (std::uint32_t p = n_sink; p < n - n_recent; ++p) {
    const auto& tables = cb.windows.at(static_cast<std::size_t>(idx.window[p])).tables;
    for (std::uint32_t s = 0; s < idx.m; ++s)
      out.block(p, static_cast<Eigen::Index>(s) * cb.sub_dim, 1, cb.sub_dim) = tables[s].row(idx.code(p, s));
  }
  return out;
}

}  // namespace

CompressedKv build_compressed_kv(const Matrix& keys, const Matrix& values, const Vector& weights, const PqConfig& cfg,
                                 const ChannelPermutation& perm_k, const ChannelPermutation& perm_v,
                                 std::size_t row_buffer_bytes) {
  cfg.validate();
  check_page_residency(cfg, row_buffer_bytes);
  const auto n = static_cast<std::uint32_t>(keys.rows());
  const auto d = static_cast<std::uint32_t>(keys.cols());
  require(values.rows() == keys.rows() && values.cols() == keys.cols(), "dimension-mismatch",
          "keys and values differ in shape");
  require(weights.size() == keys.rows(), "dimension-mismatch", "one weight per token required");
  require(d > 0 && d % cfg.m == 0, "dimension-mismatch",
          "head_dim " + std::to_string(d) + " not divisible by m = " + std::to_string(cfg.m));
  perm_k.validate();
  perm_v.validate();
  require(perm_k.head_dim() == d && perm_v.head_dim() == d, "dimension-mismatch", "permutation size != head_dim");

  CompressedKv ckv;
  ckv.cfg = cfg;
  ckv.head_dim = d;
  ckv.perm_k = perm_k;
  ckv.perm_v = perm_v;

  const std::uint32_t sink = std::min(cfg.sink_tokens, n);
  const std::uint32_t recent = std::min(cfg.recent_tokens, n - sink);
  const std::uint32_t n_quant = n - sink - recent;

  const Matrix pk = permute_columns(keys, perm_k);
  const Matrix pv = permute_columns(values, perm_v);
  auto ks = cluster_stream(pk, weights, cfg, sink, n_quant, kKeyStream);
  auto vs = cluster_stream(pv, weights, cfg, sink, n_quant, kValueStream);
  ckv.key_codebook = std::move(ks.codebook);
  ckv.key_indices = std::move(ks.indices);
  ckv.value_codebook = std::move(vs.codebook);
  ckv.value_indices = std::move(vs.indices);
  ckv.fp_sink_k = pk.topRows(sink);
  ckv.fp_sink_v = pv.topRows(sink);
  ckv.fp_recent_k = pk.bottomRows(recent);
  ckv.fp_recent_v = pv.bottomRows(recent);
  return ckv;
}

CompressedKv build_compressed_kv(const KvDump& dump, std::uint32_t layer, std::uint32_t kv_head, const PqConfig& cfg,
                                 const ChannelPermutation& perm_k, const ChannelPermutation& perm_v,
                                 std::size_t row_buffer_bytes) {
  require(layer < dump.n_layers && kv_head < dump.n_kv_heads, "invalid-head", "layer/head out of range");
  const bool uniform = !dump.has_weights();
  const Vector w = uniform ? Vector::Ones(dump.n_tokens) : dump.weights[dump.head_index(layer, kv_head)];
  auto ckv = build_compressed_kv(dump.key(layer, kv_head), dump.value(layer, kv_head), w, cfg, perm_k, perm_v,
                                 row_buffer_bytes);
  ckv.uniform_weights_assumed = uniform;
  return ckv;
}

std::vector<std::uint16_t> encode_vector(const Codebook& cb, std::uint32_t window, const Vector& x) {
  require(window < cb.windows.size(), "no-codebook", "no codebook window to encode against");
  require(x.size() == static_cast<Eigen::Index>(cb.m) * cb.sub_dim, "dimension-mismatch", "vector length != head_dim");
  std::vector<std::uint16_t> codes(cb.m);
  const auto& tables = cb.windows[window].tables;
  for (std::uint32_t s = 0; s < cb.m; ++s)
    codes[s] = static_cast<std::uint16_t>(
        nearest_centroid(tables[s], x.segment(static_cast<Eigen::Index>(s) * cb.sub_dim, cb.sub_dim).transpose()));
  return codes;
}

namespace {

void append_row(Matrix& m, const Vector& row) {
  m.conservativeResize(m.rows() + 1, row.size());
  m.row(m.rows() - 1) = row.transpose();
}

void push_sentinel(PqIndices& idx) {
  idx.codes.insert(idx.codes.end(), idx.m, kFullPrecision);
  idx.window.push_back(-1);
}

}  // namespace

CompressedKv append_decode_token(CompressedKv ckv, const Vector& new_k, const Vector& new_v) {
  require(new_k.size() == ckv.head_dim && new_v.size() == ckv.head_dim, "dimension-mismatch",
          "decode token length != head_dim");
  push_sentinel(ckv.key_indices);
  push_sentinel(ckv.value_indices);

  if (ckv.sink_count() < ckv.cfg.sink_tokens) {
    // Sequence still shorter than the sink range.
    append_row(ckv.fp_sink_k, new_k);
    append_row(ckv.fp_sink_v, new_v);
    return ckv;
  }
  append_row(ckv.fp_recent_k, new_k);
  append_row(ckv.fp_recent_v, new_v);
  if (ckv.recent_count() <= ckv.cfg.recent_tokens) return ckv;

  // Evict the oldest recent token into the compressed body.
  require(!ckv.key_codebook.windows.empty(), "no-codebook",
          "cannot encode an evicted token: no codebook was built during prefill");
  const std::uint32_t pos = ckv.sink_count() + ckv.quantized_count();
  const auto last = static_cast<std::uint32_t>(ckv.key_codebook.windows.size() - 1);
  const Vector ek = ckv.fp_recent_k.row(0).transpose();
  const Vector ev = ckv.fp_recent_v.row(0).transpose();
  const auto kc = encode_vector(ckv.key_codebook, last, ek);
  const auto vc = encode_vector(ckv.value_codebook, last, ev);
  std::copy(kc.begin(), kc.end(), ckv.key_indices.codes.begin() + static_cast<std::ptrdiff_t>(pos) * ckv.cfg.m);
  std::copy(vc.begin(), vc.end(), ckv.value_indices.codes.begin() + static_cast<std::ptrdiff_t>(pos) * ckv.cfg.m);
  ckv.key_indices.window[pos] = static_cast<std::int32_t>(last);
  ckv.value_indices.window[pos] = static_cast<std::int32_t>(last);
  ckv.key_codebook.windows.back().end = pos + 1;
  ckv.value_codebook.windows.back().end = pos + 1;

  const auto keep = ckv.fp_recent_k.rows() - 1;
  ckv.fp_recent_k = ckv.fp_recent_k.bottomRows(keep).eval();
  ckv.fp_recent_v = ckv.fp_recent_v.bottomRows(keep).eval();
  return ckv;
}

Matrix reconstruct_keys(const CompressedKv& ckv) {
  return reconstruct(ckv.key_codebook, ckv.key_indices, ckv.fp_sink_k, ckv.fp_recent_k, ckv.head_dim);
}

Matrix reconstruct_values(const CompressedKv& ckv) {
  return reconstruct(ckv.value_codebook, ckv.value_indices, ckv.fp_sink_v, ckv.fp_recent_v, ckv.head_dim);
}

QuantizationError quantization_error(const Matrix& keys, const Matrix& values, const Vector& weights,
                                     const CompressedKv& ckv, std::span<const std::uint32_t> tokens) {
  require(keys.rows() == ckv.n_tokens() && values.rows() == ckv.n_tokens() && weights.size() == keys.rows(),
          "dimension-mismatch", "original tensors do not match the compressed token count");
  const Matrix pk = permute_columns(keys, ckv.perm_k);
  const Matrix pv = permute_columns(values, ckv.perm_v);
  const Matrix rk = reconstruct_keys(ckv);
  const Matrix rv = reconstruct_values(ckv);

  std::vector<std::uint32_t> all;
  if (tokens.empty()) {
    all.resize(ckv.n_tokens());
    for (std::uint32_t i = 0; i < ckv.n_tokens(); ++i) all[i] = i;
    tokens = all;
  }
  QuantizationError e;
  double wsum = 0.0, wacc = 0.0;
  const double d = ckv.head_dim;
  for (auto p : tokens) {
    require(p < ckv.n_tokens(), "invalid-token", "token position out of range");
    if (!ckv.key_indices.quantized(p)) continue;
    const double ek = (pk.row(p) - rk.row(p)).cast<double>().squaredNorm() / d;
    const double ev = (pv.row(p) - rv.row(p)).cast<double>().squaredNorm() / d;
    const double both = 0.5 * (ek + ev);
    e.key_mse += ek;
    e.value_mse += ev;
    e.mse += both;
    wacc += static_cast<double>(weights(p)) * both;
    wsum += weights(p);
    ++e.tokens;
  }
  require(e.tokens > 0, "no-quantized-tokens", "no quantized tokens in the selection");
  e.mse /= e.tokens;
  e.key_mse /= e.tokens;
  e.value_mse /= e.tokens;
  e.weighted_mse = wsum > 0.0 ? wacc / wsum : e.mse;
  return e;
}

QuantizationError quantization_error(const KvDump& dump, std::uint32_t layer, std::uint32_t kv_head,
                                     const CompressedKv& ckv, std::span<const std::uint32_t> tokens) {
  const Vector w = dump.has_weights() ? dump.weights[dump.head_index(layer, kv_head)] : Vector::Ones(dump.n_tokens);
  return quantization_error(dump.key(layer, kv_head), dump.value(layer, kv_head), w, ckv, tokens);
}

// ---------------------------------------------------------------------------
// AQPQ sidecar
// ---------------------------------------------------------------------------

namespace {

constexpr char kPqMagic[4] = {'A', 'Q', 'P', 'Q'};
constexpr std::uint32_t kPqVersion = 1;

void put_matrix(io::Writer& w, const Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) w.put(m(i, j));
}

Matrix get_matrix(io::Reader& r, std::uint32_t rows, std::uint32_t cols) {
  r.need(static_cast<std::size_t>(rows) * cols * 4);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = r.get<float>();
  return m;
}

void put_perm(io::Writer& w, const ChannelPermutation& p) {
  for (auto c : p.order) w.put(c);
  w.put(p.m);
}

ChannelPermutation get_perm(io::Reader& r, std::uint32_t d) {
  ChannelPermutation p;
  r.need(static_cast<std::size_t>(d) * 4);
  p.order.resize(d);
  for (auto& c : p.order) c = r.get<std::uint32_t>();
  p.m = r.get<std::uint32_t>();
  const auto at = r.offset();
  try {
    p.validate();
  } catch (const Error& e) {
    throw FormatError("invalid-permutation", at, e.what());
  }
  return p;
}

}  // namespace

std::vector<std::uint8_t> serialize_compressed_kv(const CompressedKv& ckv) {
  io::Writer w;
  w.put_bytes({kPqMagic, 4});
  w.put(kPqVersion);
  const auto& c = ckv.cfg;
  for (auto v : {c.m, c.k, c.iters, c.window_len, c.sink_tokens, c.recent_tokens, c.t}) w.put(v);
  w.put(c.rng_seed);
  w.put(ckv.head_dim);
  w.put(ckv.n_tokens());
  w.put(ckv.sink_count());
  w.put(ckv.recent_count());
  w.put<std::uint32_t>(ckv.uniform_weights_assumed ? 1u : 0u);
  put_perm(w, ckv.perm_k);
  put_perm(w, ckv.perm_v);
  const auto& windows = ckv.key_codebook.windows;
  w.put(static_cast<std::uint32_t>(windows.size()));
  for (std::size_t i = 0; i < windows.size(); ++i) {
    w.put(windows[i].begin);
    w.put(windows[i].end);
    for (const auto* cb : {&ckv.key_codebook, &ckv.value_codebook}) {
      const auto& win = cb->windows[i];
      w.put(static_cast<std::uint32_t>(win.objective_per_iter.size()));
      for (double o : win.objective_per_iter) w.put(o);
    }
  }
  for (const auto* cb : {&ckv.key_codebook, &ckv.value_codebook})
    for (const auto& win : cb->windows)
      for (const auto& t : win.tables) {
        w.put(static_cast<std::uint32_t>(t.rows()));
        put_matrix(w, t);
      }
  for (const auto* idx : {&ckv.key_indices, &ckv.value_indices})
    for (auto code : idx->codes) w.put(code);
  put_matrix(w, ckv.fp_sink_k);
  put_matrix(w, ckv.fp_sink_v);
  put_matrix(w, ckv.fp_recent_k);
  put_matrix(w, ckv.fp_recent_v);
  return std::move(w.bytes());
}

CompressedKv parse_compressed_kv(const std::vector<std::uint8_t>& bytes) {
  io::Reader r(bytes);
  const auto magic = r.get_bytes(4);
  if (!std::equal(magic.begin(), magic.end(), kPqMagic)) throw FormatError("bad-magic", 0, "not an AQPQ file");
  if (r.get<std::uint32_t>() != kPqVersion) throw FormatError("bad-version", 4, "unsupported AQPQ version");
  CompressedKv ckv;
  auto& c = ckv.cfg;
  for (auto* v : {&c.m, &c.k, &c.iters, &c.window_len, &c.sink_tokens, &c.recent_tokens, &c.t}) *v = r.get<std::uint32_t>();
  c.rng_seed = r.get<std::uint64_t>();
  if (c.m == 0 || c.k == 0 || c.k > 65536) throw FormatError("invalid-config", 8, "bad PqConfig echo");
  ckv.head_dim = r.get<std::uint32_t>();
  const auto n = r.get<std::uint32_t>();
  const auto n_sink = r.get<std::uint32_t>();
  const auto n_recent = r.get<std::uint32_t>();
  ckv.uniform_weights_assumed = (r.get<std::uint32_t>() & 1u) != 0;
  if (ckv.head_dim == 0 || ckv.head_dim % c.m != 0 || n_sink + n_recent > n)
    throw FormatError("dimension-mismatch", r.offset(), "inconsistent shape header");
  const auto sd = ckv.head_dim / c.m;
  ckv.perm_k = get_perm(r, ckv.head_dim);
  ckv.perm_v = get_perm(r, ckv.head_dim);

  const auto n_windows = r.get<std::uint32_t>();
  if (n_windows > n) throw FormatError("dimension-mismatch", r.offset(), "more windows than tokens");
  for (auto* cb : {&ckv.key_codebook, &ckv.value_codebook}) {
    cb->m = c.m;
    cb->sub_dim = sd;
    cb->windows.resize(n_windows);
  }
  for (std::uint32_t i = 0; i < n_windows; ++i) {
    const auto begin = r.get<std::uint32_t>();
    const auto end = r.get<std::uint32_t>();
    if (begin > end || end > n) throw FormatError("dimension-mismatch", r.offset(), "bad window range");
    for (auto* cb : {&ckv.key_codebook, &ckv.value_codebook}) {
      auto& win = cb->windows[i];
      win.begin = begin;
      win.end = end;
      const auto iters = r.get<std::uint32_t>();
      r.need(static_cast<std::size_t>(iters) * 8);
      win.objective_per_iter.resize(iters);
      for (auto& o : win.objective_per_iter) o = r.get<double>();
    }
  }
  for (auto* cb : {&ckv.key_codebook, &ckv.value_codebook})
    for (auto& win : cb->windows)
      for (std::uint32_t s = 0; s < c.m; ++s) {
        const auto rows = r.get<std::uint32_t>();
        if (rows == 0 || rows > c.k) throw FormatError("dimension-mismatch", r.offset(), "bad centroid table size");
        win.tables.push_back(get_matrix(r, rows, sd));
      }
  for (auto* idx : {&ckv.key_indices, &ckv.value_indices}) {
    idx->m = c.m;
    r.need(static_cast<std::size_t>(n) * c.m * 2);
    idx->codes.resize(static_cast<std::size_t>(n) * c.m);
    for (auto& code : idx->codes) code = r.get<std::uint16_t>();
    idx->window.assign(n, -1);
  }
  // Window ids follow from the boundaries; validate codes against table sizes.
  for (std::uint32_t p = n_sink; p < n - n_recent; ++p) {
    const int w = ckv.key_codebook.window_of(p);
    if (w < 0) throw FormatError("dimension-mismatch", r.offset(), "quantized token outside every window");
    for (const auto& [idx, cb] : {std::pair{&ckv.key_indices, &ckv.key_codebook},
                                  std::pair{&ckv.value_indices, &ckv.value_codebook}}) {
      idx->window[p] = w;
      for (std::uint32_t s = 0; s < c.m; ++s)
        if (idx->code(p, s) >= cb->windows[static_cast<std::size_t>(w)].tables[s].rows())
          throw FormatError("dimension-mismatch", r.offset(), "index exceeds centroid count");
    }
  }
  ckv.fp_sink_k = get_matrix(r, n_sink, ckv.head_dim);
  ckv.fp_sink_v = get_matrix(r, n_sink, ckv.head_dim);
  ckv.fp_recent_k = get_matrix(r, n_recent, ckv.head_dim);
  ckv.fp_recent_v = get_matrix(r, n_recent, ckv.head_dim);
  if (r.remaining() != 0) throw FormatError("dimension-mismatch", r.offset(), "trailing bytes");
  return ckv;
}

void write_compressed_kv(const CompressedKv& ckv, const std::filesystem::path& path) {
  io::write_file_atomic(path, serialize_compressed_kv(ckv));
}

CompressedKv load_compressed_kv(const std::filesystem::path& path) { return parse_compressed_kv(io::read_file(path)); }

bool operator==(const CompressedKv& a, const CompressedKv& b) {
  auto same_cb = [](const Codebook& x, const Codebook& y) {
    if (x.m != y.m || x.sub_dim != y.sub_dim || x.windows.size() != y.windows.size()) return false;
    for (std::size_t i = 0; i < x.windows.size(); ++i) {
      const auto &p = x.windows[i], &q = y.windows[i];
      if (p.begin != q.begin || p.end != q.end || p.objective_per_iter != q.objective_per_iter ||
          p.tables.size() != q.tables.size())
        return false;
      for (std::size_t s = 0; s < p.tables.size(); ++s)
        if (p.tables[s].rows() != q.tables[s].rows() || p.tables[s] != q.tables[s]) return false;
    }
    return true;
  };
  auto same_m = [](const Matrix& x, const Matrix& y) { return x.rows() == y.rows() && x.cols() == y.cols() && x == y; };
  return a.cfg == b.cfg && a.head_dim == b.head_dim && a.perm_k == b.perm_k && a.perm_v == b.perm_v &&
         same_cb(a.key_codebook, b.key_codebook) && same_cb(a.value_codebook, b.value_codebook) &&
         a.key_indices.codes == b.key_indices.codes && a.key_indices.window == b.key_indices.window &&
         a.value_indices.codes == b.value_indices.codes && a.value_indices.window == b.value_indices.window &&
         same_m(a.fp_sink_k, b.fp_sink_k) && same_m(a.fp_sink_v, b.fp_sink_v) && same_m(a.fp_recent_k, b.fp_recent_k) &&
         same_m(a.fp_recent_v, b.fp_recent_v) && a.uniform_weights_assumed == b.uniform_weights_assumed;
}

}  // namespace aqpim
