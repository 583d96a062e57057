// SPDX-License-Identifier: Apache-2.0
// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
#include "aqpim/channel_sort.hpp"
#include "aqpim/kmeans.hpp"
#include "aqpim/kv_model.hpp"
#include "aqpim/pim_sim.hpp"
#include "aqpim/pq_attention.hpp"
#include "aqpim/quantizer.hpp"
#include "aqpim/scenario.hpp"

#include "helpers.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>

using namespace aqpim;
using aqpim::test::random_matrix;
using aqpim::test::random_vector;
using aqpim::test::random_weights;

namespace {

struct Outcome {
  bool ok = false;
  std::string detail;
};

int failures = 0;

void criterion(const char* id, const char* name, double budget_s, const std::function<Outcome()>& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = fn();
  } catch (const std::exception& e) {
    o = {false, std::string("threw: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool ok = o.ok && secs < budget_s;
  if (!ok) ++failures;
  std::printf("%s %-4s %-34s %s [%.2fs / %.0fs]\n", ok ? "PASS" : "FAIL", id, name, o.detail.c_str(), secs, budget_s);
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

PqConfig pq_cfg(std::uint32_t m, std::uint32_t k, std::uint32_t sink, std::uint32_t recent, std::uint64_t seed) {
  PqConfig c;
  c.m = m;
  c.k = k;
  c.sink_tokens = sink;
  c.recent_tokens = recent;
  c.rng_seed = seed;
  return c;
}

ChannelPermutation shuffled(std::uint32_t d, std::uint32_t m, std::uint64_t seed) {
  auto p = ChannelPermutation::identity(d, m);
  SeqRng rng(seed);
  for (std::uint32_t i = d - 1; i > 0; --i) std::swap(p.order[i], p.order[rng.below(i + 1)]);
  return p;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

Outcome lookup_sum_identity() {
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const Matrix k = random_matrix(256, 64, 7 * s), v = random_matrix(256, 64, 7 * s + 1);
    const auto pk = shuffled(64, 8, s), pv = shuffled(64, 8, s + 500);
    const auto ckv = build_compressed_kv(k, v, random_weights(256, s), pq_cfg(8, 16, 4, 8, s), pk, pv);
    const Vector q = permute(random_vector(64, 7 * s + 2), pk);
    worst = std::max(worst, relative_error(lookup_sum_scores(q, ckv), Vector(reconstruct_keys(ckv) * q)));
  }
  return {worst <= 1e-5, fmt("max rel err %.3g (<= 1e-5)", worst)};
}

Outcome identity_codebook() {
  double worst = 0.0;
  const auto id = ChannelPermutation::identity(64, 8);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Matrix k = random_matrix(128, 64, 3 * s), v = random_matrix(128, 64, 3 * s + 1);
    // 4 + 4 full-precision tokens leave 120 quantized tokens for 120 centroids.
    const auto ckv = build_compressed_kv(k, v, Vector(Vector::Ones(128)), pq_cfg(8, 120, 4, 4, s), id, id);
    const Vector q = random_vector(64, 3 * s + 2);
    const float scale = default_scale<float>(64);
    const auto ex = exact_attention<float>(q, k, v, scale);
    const auto pq = pq_attention(q, ckv, scale);
    worst = std::max({worst, relative_error(pq.out, ex.out), relative_error(*pq.scores, *ex.scores)});
  }
  return {worst <= 1e-4, fmt("max rel err %.3g (<= 1e-4)", worst)};
}

Outcome kmeans_properties() {
  int rises = 0, mismatches = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const Matrix x = random_matrix(96, 4, s);
    const auto r = weighted_kmeans(x, random_weights(96, s + 7000), 8, 4, s);
    for (std::size_t i = 1; i < r.objective_per_iter.size(); ++i)
      if (r.objective_per_iter[i] > r.objective_per_iter[i - 1]) ++rises;
  }
  for (std::uint64_t s = 0; s < 100; ++s) {
    const Matrix x = random_matrix(60, 4, s + 100);
    const Vector w = Vector::Ones(60);
    const Matrix init = kmeans_pp_init(x, w, 6, s);
    const auto a = weighted_kmeans_from(x, w, init, 4);
    const auto b = aqpim::test::unweighted_lloyd(x, init, 4);
    if (!(a.centroids == b.centroids && a.assignments == b.assign && a.objective_per_iter == b.objective))
      ++mismatches;
  }
  return {rises == 0 && mismatches == 0, fmt("objective rises %d, uniform bit mismatches %d", rises, mismatches)};
}

Outcome importance_weighting() {
  std::vector<double> weighted, uniform;
  for (std::uint64_t s = 0; s < 20; ++s) {
    SyntheticSpec spec;
    spec.n_tokens = 1024;
    spec.head_dim = 64;
    spec.n_latent_clusters = 64;
    spec.cluster_spread = 0.3f;
    spec.heavy_fraction = 0.05f;
    spec.heavy_scale = 100.0f;
    spec.rng_seed = s;
    const auto dump = generate_synthetic_kv(spec);
    const auto heavy = synthetic_heavy_tokens(spec, 0, 0);
    const Matrix& k = dump.key(0, 0);
    const Matrix& v = dump.value(0, 0);
    const Vector& w = dump.weights[0];
    const auto id = ChannelPermutation::identity(64, 8);
    const auto cfg = pq_cfg(8, 16, 4, 16, s);
    const auto a = build_compressed_kv(k, v, w, cfg, id, id);
    const auto b = build_compressed_kv(k, v, Vector(Vector::Ones(k.rows())), cfg, id, id);
    weighted.push_back(quantization_error(k, v, w, a, heavy).weighted_mse);
    uniform.push_back(quantization_error(k, v, w, b, heavy).weighted_mse);
  }
  const double r = mean(weighted) / mean(uniform);
  return {r <= 0.9, fmt("heavy wMSE weighted/uniform %.3f (<= 0.9)", r)};
}

Outcome presort() {
  std::vector<double> sorted, contiguous;
  for (std::uint64_t s = 0; s < 20; ++s) {
    SyntheticSpec spec;
    spec.n_tokens = 512;
    spec.head_dim = 64;
    spec.n_latent_clusters = 32;
    spec.channel_groups = 8;
    spec.rng_seed = 1000 + s;
    const auto dump = generate_synthetic_kv(spec);
    const Matrix& k = dump.key(0, 0);
    const Matrix& v = dump.value(0, 0);
    const Vector& w = dump.weights[0];
    const auto cfg = pq_cfg(8, 16, 4, 16, s);
    const auto pk = sort_channels(k, 8, mix_keys(s, {2})), pv = sort_channels(v, 8, mix_keys(s, {3}));
    const auto id = ChannelPermutation::identity(64, 8);
    sorted.push_back(quantization_error(k, v, w, build_compressed_kv(k, v, w, cfg, pk, pv)).mse);
    contiguous.push_back(quantization_error(k, v, w, build_compressed_kv(k, v, w, cfg, id, id)).mse);
  }
  return {mean(sorted) <= mean(contiguous), fmt("mean MSE sorted %.4g vs contiguous %.4g", mean(sorted), mean(contiguous))};
}

Outcome saturation() {
  const std::vector<std::uint32_t> ks = {64, 128, 256, 512}, ms = {2, 8, 32};
  std::vector<double> by_k(ks.size()), by_m(ms.size());
  const int seeds = 10;
  for (std::uint64_t s = 0; s < seeds; ++s) {
    SyntheticSpec spec;
    spec.n_tokens = 1200;
    spec.head_dim = 128;
    spec.n_latent_clusters = 1024;
    spec.cluster_spread = 0.5f;
    spec.rng_seed = 2000 + s;
    const auto dump = generate_synthetic_kv(spec);
    const Matrix& k = dump.key(0, 0);
    const Matrix& v = dump.value(0, 0);
    const Vector& w = dump.weights[0];
    auto run = [&](std::uint32_t m, std::uint32_t kk) {
      PqConfig c;
      c.m = m;
      c.k = kk;
      c.rng_seed = s;
      const auto id = ChannelPermutation::identity(128, m);
      return attention_fidelity(k, v, build_compressed_kv(k, v, w, c, id, id), 32, mix_keys(s, {4})).output_cos;
    };
    for (std::size_t i = 0; i < ks.size(); ++i) by_k[i] += run(32, ks[i]) / seeds;
    for (std::size_t i = 0; i < ms.size(); ++i) by_m[i] += run(ms[i], 512) / seeds;
  }
  const bool ok = std::is_sorted(by_k.begin(), by_k.end()) && std::is_sorted(by_m.begin(), by_m.end());
  return {ok, fmt("cos k:%.4f/%.4f/%.4f/%.4f m:%.4f/%.4f/%.4f", by_k[0], by_k[1], by_k[2], by_k[3], by_m[0], by_m[1],
                  by_m[2])};
}

Outcome act_bound() {
  SeqRng rng(31);
  int violations = 0, checked = 0;
  for (int trial = 0; trial < 60; ++trial) {
    PimConfig hw;
    hw.n_hbms = 1 + static_cast<std::uint32_t>(rng.below(2));
    hw.channels_per_hbm = 1u << (1 + rng.below(3));
    const std::uint32_t m = 1u << (1 + rng.below(4));
    const std::uint32_t heads = 1 + static_cast<std::uint32_t>(rng.below(4));
    Workload wl;
    wl.model = ModelShape{1, heads, heads, 8 * m, heads * 8 * m, 4 * heads * 8 * m, 1000};
    wl.batch = 1 + static_cast<std::uint32_t>(rng.below(4));
    wl.seq_in = 64 + static_cast<std::uint32_t>(rng.below(3000));
    wl.seq_out = 1 + static_cast<std::uint32_t>(rng.below(64));
    PqConfig pq;
    pq.m = m;
    pq.k = 16u << rng.below(6);
    pq.window_len = rng.below(2) ? 0 : 128u << rng.below(3);
    const auto ctx = make_trace_context(wl, pq, hw);
    const auto n = wl.seq_in + static_cast<std::uint32_t>(rng.below(wl.seq_out));
    for (auto site : {GatherSite::BankPe, GatherSite::BufferPe}) {
      const auto acts = key_lookup_acts_per_bank(trace_decode_attention(ctx, site, n), hw);
      for (std::uint32_t bank = 0; bank < acts.size(); ++bank) {
        const auto on_bank = ctx.placement.bank_slots(hw, ctx.hbm, bank).size();
        ++checked;
        if (acts[bank] > std::max(ctx.layout.n_windows, 1u) * on_bank) ++violations;
      }
    }
  }
  return {violations == 0 && checked > 0, fmt("%d violations over %d bank-steps", violations, checked)};
}

Outcome constant_atnk() {
  const PqConfig pq;  // one window
  const PimConfig hw;
  std::vector<double> xs, atnk, ret;
  for (std::uint32_t n : {1024u, 4096u, 16384u}) {
    Workload wl;
    wl.seq_in = n;
    const auto r = run_scenario({ScenarioKind::aqpim, wl}, pq, hw);
    xs.push_back(n);
    atnk.push_back(r.stage(Stage::atnk));
    ret.push_back(r.stage(Stage::retrieval));
  }
  const double mx = mean(xs), my = mean(ret);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ret[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ret[i] - my) * (ret[i] - my);
  }
  const double r2 = syy > 0 ? sxy * sxy / (sxx * syy) : 0.0;
  const bool same = atnk[0] == atnk[1] && atnk[1] == atnk[2] && atnk[0] > 0;
  return {same && r2 >= 0.99, fmt("atnk %.0f/%.0f/%.0f, retrieval R^2 %.5f", atnk[0], atnk[1], atnk[2], r2)};
}

Outcome indirection_site() {
  const PqConfig pq;
  const PimConfig hw;
  Workload wl;
  wl.seq_in = 4096;
  const auto ctx = make_trace_context(wl, pq, hw);
  const auto bank = simulate(trace_decode_attention(ctx, GatherSite::BankPe, 4096), hw);
  const auto buf = simulate(trace_decode_attention(ctx, GatherSite::BufferPe, 4096), hw);
  const double val = buf.stage(Stage::atnv) / bank.stage(Stage::atnv);
  const double key = buf.stage(Stage::retrieval) / bank.stage(Stage::retrieval);
  return {val >= 5.0 && key >= 1.0 && key <= 2.0, fmt("value %.2f (>= 5), key %.3f (in [1, 2])", val, key)};
}

Outcome compression() {
  const double cf = compression_factor(PqConfig{}, 128, 32768);
  return {cf >= 6.53 * 0.95 && cf <= 6.53 * 1.05, fmt("%.3fx (6.53 +- 5%%)", cf)};
}

Outcome scenario_orders() {
  const PqConfig pq;
  const PimConfig hw;
  const Workload wl;
  auto step = [&](ScenarioKind k) { return run_scenario({k, wl}, pq, hw).decode_step_cycles; };
  const double cpu = step(ScenarioKind::gpu_cpu_offload), inf = step(ScenarioKind::gpu_infinite),
               gpq = step(ScenarioKind::gpu_pq), aq = step(ScenarioKind::aqpim);
  const double a = cpu / inf, b = inf / gpq, c = gpq / aq;
  const bool ok = a >= 7 && a <= 18 && b >= 3.5 && b <= 7 && c >= 2 && c <= 6;
  return {ok, fmt("inf/cpu %.2f [7,18], pq/inf %.2f [3.5,7], aqpim/pq %.2f [2,6]", a, b, c)};
}

Outcome hideability() {
  const PqConfig pq;
  const PimConfig hw;
  double worst = 0.0;
  std::string detail;
  for (std::uint32_t n : {2048u, 8192u, 32768u}) {
    Workload wl;
    wl.seq_in = n;
    const double cluster = cluster_cycles_per_layer(wl, pq, hw);
    const double prefill = gpu_prefill_layer(wl, hw.gpu_model).seconds / (hw.timings.tCK_ns * 1e-9);
    worst = std::max(worst, cluster / prefill);
    detail += fmt("%uK %.3f ", n / 1024, cluster / prefill);
  }
  return {worst < 1.0, "cluster/prefill " + detail + "(< 1)"};
}

std::string fingerprint(const CommandTrace& t, const PimConfig& hw) {
  const auto tl = simulate_timeline(t, hw);
  std::ostringstream os;
  write_trace_dump(os, t, tl);
  return os.str() + tl.report.to_json();
}

Outcome trace_legality() {
  SeqRng rng(97);
  int illegal = 0, nondet = 0;
  for (int trial = 0; trial < 100; ++trial) {
    PimConfig hw;
    hw.n_hbms = 1 + static_cast<std::uint32_t>(rng.below(2));
    hw.channels_per_hbm = 1u << (1 + rng.below(2));
    const std::uint32_t m = 1u << (1 + rng.below(3));
    const std::uint32_t kv = 1 + static_cast<std::uint32_t>(rng.below(3));
    const std::uint32_t heads = kv * (1 + static_cast<std::uint32_t>(rng.below(2)));
    Workload wl;
    wl.model = ModelShape{2, heads, kv, 8 * m, heads * 8 * m, 4 * heads * 8 * m, 1000};
    wl.batch = 1 + static_cast<std::uint32_t>(rng.below(3));
    wl.seq_in = 48 + static_cast<std::uint32_t>(rng.below(1500));
    wl.seq_out = 1 + static_cast<std::uint32_t>(rng.below(32));
    PqConfig pq;
    pq.m = m;
    pq.k = 16u << rng.below(4);
    pq.iters = 1 + static_cast<std::uint32_t>(rng.below(4));
    pq.sink_tokens = static_cast<std::uint32_t>(rng.below(8));
    pq.recent_tokens = static_cast<std::uint32_t>(rng.below(32));
    pq.window_len = rng.below(2) ? 0 : 128;
    const auto n = wl.seq_in + static_cast<std::uint32_t>(rng.below(wl.seq_out));
    const auto ctx = make_trace_context(wl, pq, hw);
    const auto traces = [&] {
      return std::vector<CommandTrace>{trace_codebook_generation(ctx),
                                       trace_decode_attention(ctx, GatherSite::BankPe, n),
                                       trace_decode_attention(ctx, GatherSite::BufferPe, n),
                                       trace_raw_attention(ctx, n)};
    };
    const auto first = traces(), second = traces();
    for (std::size_t i = 0; i < first.size(); ++i) {
      try {
        check_protocol(first[i], hw);
      } catch (const Error&) {
        ++illegal;
        continue;
      }
      if (fingerprint(first[i], hw) != fingerprint(second[i], hw)) ++nondet;
    }
  }
  return {illegal == 0 && nondet == 0, fmt("%d illegal, %d nondeterministic of 400 traces", illegal, nondet)};
}

}  // namespace

int main() {
  criterion("1", "lookup-sum identity", 5, lookup_sum_identity);
  criterion("2", "identity-codebook exactness", 5, identity_codebook);
  criterion("3", "weighted k-means", 30, kmeans_properties);
  criterion("4", "importance weighting direction", 60, importance_weighting);
  criterion("5", "pre-sorting direction", 60, presort);
  criterion("6", "hyperparameter saturation shape", 120, saturation);
  criterion("7", "key-lookup ACT bound", 10, act_bound);
  criterion("8", "constant ATNK", 60, constant_atnk);
  criterion("9", "indirection site at 4K", 60, indirection_site);
  criterion("10", "compression factor at 32K", 1, compression);
  criterion("11", "scenario decomposition orders", 120, scenario_orders);
  criterion("12", "clustering hideability", 60, hideability);
  criterion("13", "trace legality and determinism", 120, trace_legality);
  std::printf("%d of 13 failed\n", failures);
  return failures == 0 ? 0 : 1;
}
