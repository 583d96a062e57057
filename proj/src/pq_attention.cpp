// SPDX-License-Identifier: Apache-2.0
#include "aqpim/pq_attention.hpp"

#include "aqpim/error.hpp"
#include "aqpim/rng.hpp"

#include <sstream>

namespace aqpim {

std::string to_string(Rounding r) { return r == Rounding::Exact32 ? "exact32" : "round16"; }

Rounding rounding_from_string(const std::string& s) {
  if (s == "exact32") return Rounding::Exact32;
  if (s == "round16") return Rounding::Round16;
  throw Error("invalid-config", "unknown rounding mode '" + s + "' (expected exact32 or round16)");
}

namespace {

float rnd(float x, Rounding r) { return r == Rounding::Round16 ? round_to_half(x) : x; }

float dot(const Vector& a, const Eigen::Ref<const Vector>& b, Rounding r) {
  if (r == Rounding::Exact32) return a.dot(b);
  float acc = 0.0f;
  for (Eigen::Index j = 0; j < a.size(); ++j) acc = round_to_half(acc + round_to_half(a(j) * b(j)));
  return acc;
}

}  // namespace

InnerProductTable build_inner_product_table(const Codebook& cb, const Vector& q, Rounding rounding) {
  require(q.size() == static_cast<Eigen::Index>(cb.m) * cb.sub_dim, "dimension-mismatch", "query length != head_dim");
  InnerProductTable t;
  t.entries.resize(cb.windows.size());
  for (std::size_t w = 0; w < cb.windows.size(); ++w) {
    for (std::uint32_t s = 0; s < cb.m; ++s) {
      const Vector qs = q.segment(static_cast<Eigen::Index>(s) * cb.sub_dim, cb.sub_dim);
      const auto& table = cb.windows[w].tables[s];
      Vector e(table.rows());
      for (Eigen::Index j = 0; j < table.rows(); ++j) e(j) = dot(qs, table.row(j).transpose(), rounding);
      t.entries[w].push_back(std::move(e));
    }
  }
  return t;
}

Vector lookup_sum_scores(const Vector& q, const CompressedKv& ckv, Rounding rounding) {
  require(q.size() == ckv.head_dim, "dimension-mismatch",
          "query length " + std::to_string(q.size()) + " != head_dim " + std::to_string(ckv.head_dim));
  const auto table = build_inner_product_table(ckv.key_codebook, q, rounding);
  const auto n = ckv.n_tokens();
  const auto n_sink = ckv.sink_count();
  const auto n_recent = ckv.recent_count();
  Vector scores(n);
  for (std::uint32_t p = 0; p < n_sink; ++p) scores(p) = dot(q, ckv.fp_sink_k.row(p).transpose(), rounding);
  for (std::uint32_t p = n_sink; p < n - n_recent; ++p) {
    const auto w = static_cast<std::uint32_t>(ckv.key_indices.window[p]);
    float acc = 0.0f;
    for (std::uint32_t s = 0; s < ckv.cfg.m; ++s)
      acc = rnd(acc + table.lookup(w, s, ckv.key_indices.code(p, s)), rounding);
    scores(p) = acc;
  }
  for (std::uint32_t i = 0; i < n_recent; ++i)
    scores(n - n_recent + i) = dot(q, ckv.fp_recent_k.row(i).transpose(), rounding);
  return scores;
}

AttentionOutput<float> pq_attention(const Vector& q, const CompressedKv& ckv, float scale, Rounding rounding) {
  require(ckv.n_tokens() > 0, "dimension-mismatch", "empty cache");
  Vector logits = lookup_sum_scores(q, ckv, rounding) * scale;
  const float mx = logits.maxCoeff();
  Vector p = (logits.array() - mx).exp().matrix();
  p /= p.sum();
  const Matrix v_hat = reconstruct_values(ckv);
  AttentionOutput<float> r;
  if (rounding == Rounding::Exact32) {
    r.out = v_hat.transpose() * p;
  } else {
    for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = round_to_half(p(i));
    r.out = Vector::Zero(ckv.head_dim);
    for (Eigen::Index i = 0; i < p.size(); ++i)
      for (Eigen::Index j = 0; j < r.out.size(); ++j)
        r.out(j) = round_to_half(r.out(j) + round_to_half(p(i) * v_hat(i, j)));
  }
  r.scores = std::move(p);
  return r;
}

Fidelity attention_fidelity(const Matrix& keys, const Matrix& values, const CompressedKv& ckv, std::uint32_t n_queries,
                            std::uint64_t rng_seed, Rounding rounding) {
  require(keys.rows() == ckv.n_tokens() && values.rows() == ckv.n_tokens() && keys.cols() == ckv.head_dim,
          "dimension-mismatch", "slice does not match the compressed cache");
  require(n_queries > 0, "invalid-input", "n_queries must be positive");
  const float scale = default_scale<float>(ckv.head_dim);
  const auto inv_v = ckv.perm_v.inverse();
  SeqRng rng(mix_keys(rng_seed, {0x46494445ULL}));
  Fidelity f;
  for (std::uint32_t i = 0; i < n_queries; ++i) {
    const auto row = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(keys.rows())));
    const Vector q = keys.row(row).transpose();
    const auto ex = exact_attention<float>(q, keys, values, scale);
    const auto pq = pq_attention(permute(q, ckv.perm_k), ckv, scale, rounding);
    const Vector out = permute(pq.out, inv_v);
    f.score_l1 += (ex.scores->cast<double>() - pq.scores->cast<double>()).lpNorm<1>();
    const double den = ex.out.cast<double>().norm() * out.cast<double>().norm();
    f.output_cos += den > 0.0 ? ex.out.cast<double>().dot(out.cast<double>()) / den : 1.0;
  }
  f.n_queries = n_queries;
  f.score_l1 /= n_queries;
  f.output_cos /= n_queries;
  return f;
}

Fidelity attention_fidelity(const KvDump& dump, std::uint32_t layer, std::uint32_t kv_head, const CompressedKv& ckv,
                            std::uint32_t n_queries, std::uint64_t rng_seed, Rounding rounding) {
  return attention_fidelity(dump.key(layer, kv_head), dump.value(layer, kv_head), ckv, n_queries, rng_seed, rounding);
}

std::string fidelity_csv_header() { return "m,k,iters,window_len,sink_tokens,recent_tokens,t,rng_seed,n_queries,score_l1,output_cos"; }

std::string fidelity_csv_row(const PqConfig& c, const Fidelity& f) {
  std::ostringstream os;
  os.precision(9);
  os << c.m << ',' << c.k << ',' << c.iters << ',' << c.window_len << ',' << c.sink_tokens << ',' << c.recent_tokens
     << ',' << c.t << ',' << c.rng_seed << ',' << f.n_queries << ',' << f.score_l1 << ',' << f.output_cos;
  return os.str();
}

}  // namespace aqpim
