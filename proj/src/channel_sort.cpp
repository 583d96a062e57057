// SPDX-License-Identifier: Apache-2.0
#include "aqpim/channel_sort.hpp"

#include "aqpim/error.hpp"
#include "aqpim/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <numeric>

namespace aqpim {

ChannelPermutation ChannelPermutation::identity(std::uint32_t head_dim, std::uint32_t m) {
  ChannelPermutation p;
  p.order.resize(head_dim);
  std::iota(p.order.begin(), p.order.end(), 0u);
  p.m = m;
  return p;
}

bool ChannelPermutation::is_identity() const {
  for (std::uint32_t i = 0; i < order.size(); ++i)
    if (order[i] != i) return false;
  return true;
}

ChannelPermutation ChannelPermutation::inverse() const {
  ChannelPermutation p;
  p.m = m;
  p.order.resize(order.size());
  for (std::uint32_t i = 0; i < order.size(); ++i) p.order[order[i]] = i;
  return p;
}

void ChannelPermutation::validate() const {
  require(m >= 1 && !order.empty() && order.size() % m == 0, "invalid-permutation",
          "head_dim must be a positive multiple of m");
  std::vector<bool> seen(order.size(), false);
  for (auto c : order) {
    require(c < order.size() && !seen[c], "invalid-permutation", "order is not a permutation");
    seen[c] = true;
  }
}

std::string ChannelPermutation::to_json() const {
  nlohmann::json j;
  j["order"] = order;
  j["m"] = m;
  return j.dump();
}

ChannelPermutation ChannelPermutation::from_json(const std::string& text) {
  ChannelPermutation p;
  try {
    const auto j = nlohmann::json::parse(text);
    p.order = j.at("order").get<std::vector<std::uint32_t>>();
    p.m = j.at("m").get<std::uint32_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error("invalid-permutation", e.what());
  }
  p.validate();
  return p;
}

Matrix permute_columns(const Matrix& x, const ChannelPermutation& p) {
  require(static_cast<std::size_t>(x.cols()) == p.order.size(), "dimension-mismatch", "permutation size != cols");
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) out.col(j) = x.col(p.order[j]);
  return out;
}

Matrix permute_rows(const Matrix& x, const ChannelPermutation& p) {
  require(static_cast<std::size_t>(x.rows()) == p.order.size(), "dimension-mismatch", "permutation size != rows");
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) out.row(i) = x.row(p.order[i]);
  return out;
}

Vector permute(const Vector& x, const ChannelPermutation& p) {
  require(static_cast<std::size_t>(x.size()) == p.order.size(), "dimension-mismatch", "permutation size != length");
  Vector out(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) out(i) = x(p.order[i]);
  return out;
}

ChannelPermutation sort_channels(const Matrix& samples, std::uint32_t m, std::uint64_t rng_seed,
                                 std::vector<std::uint32_t>* zero_channels) {
  const auto d = static_cast<std::uint32_t>(samples.cols());
  require(m >= 1 && d > 0 && d % m == 0, "dimension-mismatch", "head_dim must be divisible by m");
  require(samples.allFinite(), "non-finite", "calibration samples contain non-finite values");
  const std::uint32_t group = d / m;

  // Cosine similarity between channel columns, accumulated in double.
  const Eigen::MatrixXd cols = samples.cast<double>();
  const Eigen::VectorXd norms = cols.colwise().norm().transpose();
  for (std::uint32_t c = 0; c < d; ++c)
    if (norms(c) == 0.0 && zero_channels) zero_channels->push_back(c);
  Eigen::MatrixXd sim = cols.transpose() * cols;
  for (std::uint32_t a = 0; a < d; ++a)
    for (std::uint32_t b = 0; b < d; ++b)
      sim(a, b) = (norms(a) == 0.0 || norms(b) == 0.0) ? 0.0 : sim(a, b) / (norms(a) * norms(b));

  SeqRng rng(mix_keys(rng_seed, {0x50525453ULL}));
  std::vector<std::uint32_t> unassigned(d);
  std::iota(unassigned.begin(), unassigned.end(), 0u);

  ChannelPermutation p;
  p.m = m;
  p.order.reserve(d);
  for (std::uint32_t g = 0; g < m; ++g) {
    const auto pick = rng.below(unassigned.size());
    const std::uint32_t ref = unassigned[pick];
    unassigned.erase(unassigned.begin() + static_cast<std::ptrdiff_t>(pick));
    std::stable_sort(unassigned.begin(), unassigned.end(), [&](std::uint32_t a, std::uint32_t b) {
      if (sim(ref, a) != sim(ref, b)) return sim(ref, a) > sim(ref, b);
      return a < b;
    });
    p.order.push_back(ref);
    p.order.insert(p.order.end(), unassigned.begin(), unassigned.begin() + (group - 1));
    unassigned.erase(unassigned.begin(), unassigned.begin() + (group - 1));
    std::sort(unassigned.begin(), unassigned.end());
  }
  return p;
}

Projections absorb_permutation(const Projections& w, const ChannelPermutation& pk, const ChannelPermutation& pv) {
  pk.validate();
  pv.validate();
  require(w.wq.cols() == w.wk.cols() && static_cast<std::size_t>(w.wk.cols()) == pk.order.size(), "dimension-mismatch",
          "wq/wk columns must equal the key permutation size");
  require(static_cast<std::size_t>(w.wv.cols()) == pv.order.size() && w.wo.rows() == w.wv.cols(), "dimension-mismatch",
          "wv columns and wo rows must equal the value permutation size");
  return {permute_columns(w.wq, pk), permute_columns(w.wk, pk), permute_columns(w.wv, pv), permute_rows(w.wo, pv)};
}

}  // namespace aqpim
