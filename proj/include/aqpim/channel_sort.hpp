// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "aqpim/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace aqpim {

// Channel reordering applied before vector splitting. A permuted vector is
// x'[j] = x[order[j]]; consecutive runs of head_dim/m entries of `order` form
// the subvector groups.
struct ChannelPermutation {
  std::vector<std::uint32_t> order;
  std::uint32_t m = 1;

  static ChannelPermutation identity(std::uint32_t head_dim, std::uint32_t m = 1);

  std::uint32_t head_dim() const { return static_cast<std::uint32_t>(order.size()); }
  bool is_identity() const;
  ChannelPermutation inverse() const;
  void validate() const;

  std::string to_json() const;
  static ChannelPermutation from_json(const std::string& text);

  friend bool operator==(const ChannelPermutation&, const ChannelPermutation&) = default;
};

// Column j of the result is column order[j] of `x`.
Matrix permute_columns(const Matrix& x, const ChannelPermutation& p);
// Row j of the result is row order[j] of `x`.
Matrix permute_rows(const Matrix& x, const ChannelPermutation& p);
Vector permute(const Vector& x, const ChannelPermutation& p);

// Greedy cosine-similarity grouping of the columns of `samples`
// (tokens x channels). Repeats m times: draw a random unassigned reference
// channel, then take the head_dim/m - 1 unassigned channels most similar to
// it (ties: lowest index). All-zero columns have similarity 0 to everything;
// their indices are appended to `zero_channels` when provided.
ChannelPermutation sort_channels(const Matrix& samples, std::uint32_t m, std::uint64_t rng_seed,
                                 std::vector<std::uint32_t>* zero_channels = nullptr);

// Projection weights in row-vector convention: q = x * wq, k = x * wk,
// v = x * wv (each d_model x head_dim) and the head's contribution to the
// block output is attn_v * wo (wo is head_dim x d_model).
struct Projections {
  Matrix wq, wk, wv, wo;
};

// Folds the key permutation into wq/wk and the value permutation into wv,
// with wo receiving the matching inverse so the block output is unchanged.
Projections absorb_permutation(const Projections& w, const ChannelPermutation& pk, const ChannelPermutation& pv);

}  // namespace aqpim
