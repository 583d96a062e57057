// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "aqpim/error.hpp"
#include "aqpim/kv_model.hpp"
#include "aqpim/quantizer.hpp"
#include "aqpim/tensor.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace aqpim {

enum class Rounding { Exact32, Round16 };

std::string to_string(Rounding r);
Rounding rounding_from_string(const std::string& s);

template <typename Scalar>
struct AttentionOutput {
  ColVector<Scalar> out;
  std::optional<ColVector<Scalar>> scores;
};

// softmax(q K^T * scale) V. Scores are always materialized.
template <typename Scalar>
AttentionOutput<Scalar> exact_attention(const ColVector<Scalar>& q, const RowMatrix<Scalar>& keys,
                                        const RowMatrix<Scalar>& vals, Scalar scale) {
  require(q.size() == keys.cols() && keys.rows() == vals.rows() && keys.rows() > 0, "dimension-mismatch",
          "attention shapes inconsistent");
  ColVector<Scalar> logits = (keys * q) * scale;
  const Scalar mx = logits.maxCoeff();
  ColVector<Scalar> p = (logits.array() - mx).exp().matrix();
  p /= p.sum();
  AttentionOutput<Scalar> r;
  r.out = vals.transpose() * p;
  r.scores = std::move(p);
  return r;
}

template <typename Scalar>
Scalar default_scale(Eigen::Index head_dim) {
  return Scalar(1) / std::sqrt(static_cast<Scalar>(head_dim));
}

// Per-window, per-subvector <q_s, c_{s,j}> for every centroid j.
struct InnerProductTable {
  std::vector<std::vector<Vector>> entries;  // [window][subvector] -> k_eff values

  float lookup(std::uint32_t window, std::uint32_t sub, std::uint16_t code) const {
    return entries[window][sub](code);
  }
};

// `q` is in the permuted key order of `cb`.
InnerProductTable build_inner_product_table(const Codebook& cb, const Vector& q, Rounding rounding = Rounding::Exact32);

// Steps 1-4: approximate q . k for every token (quantized tokens by table
// lookup and summation over subvectors, full-precision tokens exactly).
// Unscaled.
Vector lookup_sum_scores(const Vector& q, const CompressedKv& ckv, Rounding rounding = Rounding::Exact32);

// q must be in ckv.perm_k order; the output is in ckv.perm_v order.
AttentionOutput<float> pq_attention(const Vector& q, const CompressedKv& ckv, float scale,
                                    Rounding rounding = Rounding::Exact32);

struct Fidelity {
  double score_l1 = 0.0;
  double output_cos = 0.0;
  std::uint32_t n_queries = 0;
};

// Queries are key rows of the slice (original channel order) picked at random
// positions; both paths run at the default 1/sqrt(d) scale.
Fidelity attention_fidelity(const Matrix& keys, const Matrix& values, const CompressedKv& ckv, std::uint32_t n_queries,
                            std::uint64_t rng_seed, Rounding rounding = Rounding::Exact32);
Fidelity attention_fidelity(const KvDump& dump, std::uint32_t layer, std::uint32_t kv_head, const CompressedKv& ckv,
                            std::uint32_t n_queries, std::uint64_t rng_seed, Rounding rounding = Rounding::Exact32);

std::string fidelity_csv_header();
std::string fidelity_csv_row(const PqConfig& cfg, const Fidelity& f);

}  // namespace aqpim
