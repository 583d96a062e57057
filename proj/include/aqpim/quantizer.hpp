// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "aqpim/channel_sort.hpp"
#include "aqpim/kv_model.hpp"
#include "aqpim/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace aqpim {

inline constexpr std::uint16_t kFullPrecision = 0xFFFF;
inline constexpr std::size_t kDefaultRowBufferBytes = 1024;

struct PqConfig {
  std::uint32_t m = 32;            // subvectors per head
  std::uint32_t k = 512;           // centroids per subvector per window
  std::uint32_t iters = 4;         // k-means rounds
  std::uint32_t window_len = 0;    // tokens per clustering window, 0 = one window
  std::uint32_t sink_tokens = 8;   // leading tokens kept in full precision
  std::uint32_t recent_tokens = 32;  // trailing tokens kept in full precision
  std::uint32_t t = 32;            // query rows summed into importance weights
  std::uint64_t rng_seed = 0;

  void validate() const;
  std::string to_json() const;
  static PqConfig from_json(const std::string& text);
  friend bool operator==(const PqConfig&, const PqConfig&) = default;
};

// k x 2 bytes of FP16 lookup entries must fit one DRAM row.
void check_page_residency(const PqConfig& cfg, std::size_t row_buffer_bytes);

struct CodebookWindow {
  std::uint32_t begin = 0;  // absolute token positions, [begin, end)
  std::uint32_t end = 0;
  std::vector<Matrix> tables;              // one per subvector: k_eff x sub_dim
  std::vector<double> objective_per_iter;  // summed over subvectors
  double objective() const { return objective_per_iter.empty() ? 0.0 : objective_per_iter.back(); }
};

struct Codebook {
  std::uint32_t m = 0;
  std::uint32_t sub_dim = 0;
  std::vector<CodebookWindow> windows;

  // Window holding absolute token `pos`, or -1.
  int window_of(std::uint32_t pos) const;
};

struct PqIndices {
  std::uint32_t m = 0;
  std::vector<std::uint16_t> codes;  // token-major, subvector-minor
  std::vector<std::int32_t> window;  // per token; -1 for full-precision tokens

  std::uint32_t n_tokens() const { return static_cast<std::uint32_t>(window.size()); }
  std::uint16_t code(std::uint32_t token, std::uint32_t sub) const {
    return codes[static_cast<std::size_t>(token) * m + sub];
  }
  bool quantized(std::uint32_t token) const { return window[token] >= 0; }
};

// Compressed cache for one (layer, kv_head). Token positions are laid out as
// [sink | quantized | recent]; PqIndices covers every position.
struct CompressedKv {
  PqConfig cfg;
  std::uint32_t head_dim = 0;
  ChannelPermutation perm_k;
  ChannelPermutation perm_v;
  Codebook key_codebook;
  Codebook value_codebook;
  PqIndices key_indices;
  PqIndices value_indices;
  Matrix fp_sink_k, fp_sink_v;      // rows = sink count
  Matrix fp_recent_k, fp_recent_v;  // rows = recent count, oldest first
  bool uniform_weights_assumed = false;

  std::uint32_t n_tokens() const { return key_indices.n_tokens(); }
  std::uint32_t sink_count() const { return static_cast<std::uint32_t>(fp_sink_k.rows()); }
  std::uint32_t recent_count() const { return static_cast<std::uint32_t>(fp_recent_k.rows()); }
  std::uint32_t quantized_count() const { return n_tokens() - sink_count() - recent_count(); }
};

// w[j] = sum over the last t rows of s_matrix of s_matrix(i, j).
Vector compute_importance_weights(const Matrix& s_matrix, std::uint32_t t);

// Sum of per-query-head weight vectors sharing one KV head.
Vector aggregate_gqa_weights(std::span<const Vector> per_query_head);

CompressedKv build_compressed_kv(const Matrix& keys, const Matrix& values, const Vector& weights, const PqConfig& cfg,
                                 const ChannelPermutation& perm_k, const ChannelPermutation& perm_v,
                                 std::size_t row_buffer_bytes = kDefaultRowBufferBytes);

// Uses the dump's weights, or uniform weights (flagged on the result) when
// the dump carries none.
CompressedKv build_compressed_kv(const KvDump& dump, std::uint32_t layer, std::uint32_t kv_head, const PqConfig& cfg,
                                 const ChannelPermutation& perm_k, const ChannelPermutation& perm_v,
                                 std::size_t row_buffer_bytes = kDefaultRowBufferBytes);

// Decode step: new_k/new_v are already in the permuted channel order (the
// permutation lives in the projection weights). The token evicted from the
// recent ring is encoded against the last window's codebook, which is never
// modified.
CompressedKv append_decode_token(CompressedKv ckv, const Vector& new_k, const Vector& new_v);

// Per-token nearest-centroid codes of `x` (permuted order) against one
// codebook window.
std::vector<std::uint16_t> encode_vector(const Codebook& cb, std::uint32_t window, const Vector& x);

// Reconstruction in the permuted channel space; full-precision rows verbatim.
Matrix reconstruct_keys(const CompressedKv& ckv);
Matrix reconstruct_values(const CompressedKv& ckv);

struct QuantizationError {
  double mse = 0.0;           // mean over (token, stream) of ||x - x_hat||^2 / d
  double weighted_mse = 0.0;  // same, weighted by the token's importance weight
  double key_mse = 0.0;
  double value_mse = 0.0;
  std::uint32_t tokens = 0;
};

// Compares quantized tokens of `ckv` against the original keys/values (in
// original channel order). `tokens`, when non-empty, restricts the average to
// those positions.
QuantizationError quantization_error(const Matrix& keys, const Matrix& values, const Vector& weights,
                                     const CompressedKv& ckv, std::span<const std::uint32_t> tokens = {});
QuantizationError quantization_error(const KvDump& dump, std::uint32_t layer, std::uint32_t kv_head,
                                     const CompressedKv& ckv, std::span<const std::uint32_t> tokens = {});

// Sidecar persistence ("AQPQ" format).
std::vector<std::uint8_t> serialize_compressed_kv(const CompressedKv& ckv);
CompressedKv parse_compressed_kv(const std::vector<std::uint8_t>& bytes);
void write_compressed_kv(const CompressedKv& ckv, const std::filesystem::path& path);
CompressedKv load_compressed_kv(const std::filesystem::path& path);

bool operator==(const CompressedKv& a, const CompressedKv& b);

}  // namespace aqpim
