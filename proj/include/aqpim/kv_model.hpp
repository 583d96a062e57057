// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "aqpim/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace aqpim {

enum class DType : std::uint32_t { F32 = 0, F16 = 1, BF16 = 2 };

// Key/value activations for every (layer, kv_head) plus optional per-token
// importance weights. Tensors are held in f32; `dtype` only selects the
// payload encoding used when the dump is written.
struct KvDump {
  std::uint32_t n_layers = 0;
  std::uint32_t n_kv_heads = 0;
  std::uint32_t n_tokens = 0;
  std::uint32_t head_dim = 0;
  DType dtype = DType::F32;
  std::vector<Matrix> keys;     // n_layers * n_kv_heads, each n_tokens x head_dim
  std::vector<Matrix> values;   // same
  std::vector<Vector> weights;  // empty, or one length-n_tokens vector per head

  std::size_t head_index(std::uint32_t layer, std::uint32_t kv_head) const {
    return static_cast<std::size_t>(layer) * n_kv_heads + kv_head;
  }
  const Matrix& key(std::uint32_t layer, std::uint32_t kv_head) const { return keys.at(head_index(layer, kv_head)); }
  const Matrix& value(std::uint32_t layer, std::uint32_t kv_head) const {
    return values.at(head_index(layer, kv_head));
  }
  bool has_weights() const { return !weights.empty(); }

  // Throws Error on any invariant violation.
  void validate() const;

  friend bool operator==(const KvDump& a, const KvDump& b);
};

KvDump load_kv_dump(const std::filesystem::path& path);
KvDump parse_kv_dump(const std::vector<std::uint8_t>& bytes);
void write_kv_dump(const KvDump& dump, const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_kv_dump(const KvDump& dump);

struct SyntheticSpec {
  std::uint32_t n_tokens = 256;
  std::uint32_t head_dim = 64;
  std::uint32_t n_latent_clusters = 16;
  float cluster_spread = 0.1f;
  std::uint64_t rng_seed = 0;
  std::uint32_t n_layers = 1;
  std::uint32_t n_kv_heads = 1;
  // 0: isotropic noise around latent centers. >0: channels are split into this
  // many scattered groups whose members are scaled copies of one latent factor.
  std::uint32_t channel_groups = 0;
  bool with_weights = true;
  // Fraction of tokens whose weight is multiplied by heavy_scale.
  float heavy_fraction = 0.0f;
  float heavy_scale = 100.0f;

  void validate() const;
};

KvDump generate_synthetic_kv(const SyntheticSpec& spec);

// Tokens flagged heavy by generate_synthetic_kv for a given head.
std::vector<std::uint32_t> synthetic_heavy_tokens(const SyntheticSpec& spec, std::uint32_t layer,
                                                  std::uint32_t kv_head);

}  // namespace aqpim
