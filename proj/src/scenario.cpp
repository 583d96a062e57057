// SPDX-License-Identifier: Apache-2.0
#include "aqpim/scenario.hpp"

#include "aqpim/error.hpp"

#include <algorithm>

namespace aqpim {

namespace {

constexpr std::array<const char*, 6> kScenarioNames = {"gpu_cpu_offload", "gpu_infinite", "gpu_pq",
                                                       "attacc_pim",      "aqpim",        "aqpim_bufferpe_gather"};

struct LayerWeights {
  double qkv, proj, ffn, lm_head;  // parameter counts
};

LayerWeights layer_weights(const ModelShape& m) {
  const double hd = m.head_dim;
  return {static_cast<double>(m.d_model) * (m.n_heads + 2.0 * m.n_kv_heads) * hd,
          static_cast<double>(m.n_heads) * hd * m.d_model, 3.0 * m.d_model * m.d_ff,
          static_cast<double>(m.vocab) * m.d_model};
}

double kv_layer_bytes(const Workload& wl, double ctx) {
  return static_cast<double>(wl.batch) * ctx * wl.model.n_kv_heads * wl.model.head_dim * 2.0 * 2.0;
}

double attention_flops(const Workload& wl, double ctx) {
  return static_cast<double>(wl.batch) * wl.model.n_heads * ctx * wl.model.head_dim * 4.0;
}

double gpu_energy(const GpuTime& t, const GpuModel& g) { return t.bytes * g.e_hbm_pJ_per_byte + t.flops * g.e_flop_pJ; }

}  // namespace

std::string to_string(ScenarioKind k) { return kScenarioNames[static_cast<std::size_t>(k)]; }

ScenarioKind scenario_from_string(const std::string& s) {
  for (std::size_t i = 0; i < kScenarioNames.size(); ++i)
    if (s == kScenarioNames[i]) return static_cast<ScenarioKind>(i);
  throw Error("unknown-scenario", "unknown scenario '" + s + "'");
}

std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::seq_in: return "seq_in";
    case SweepAxis::seq_out: return "seq_out";
    case SweepAxis::batch: return "batch";
  }
  return "?";
}

SweepAxis sweep_axis_from_string(const std::string& s) {
  if (s == "seq_in") return SweepAxis::seq_in;
  if (s == "seq_out") return SweepAxis::seq_out;
  if (s == "batch") return SweepAxis::batch;
  throw Error("invalid-config", "unknown sweep axis '" + s + "' (expected seq_in, seq_out or batch)");
}

KvFootprint kv_footprint(const PqConfig& pq, std::uint32_t head_dim, std::uint32_t n_tokens) {
  pq.validate();
  require(head_dim % pq.m == 0, "invalid-config", "head_dim must be a multiple of m");
  const auto nq = quantized_tokens(pq, n_tokens);
  const auto windows = window_count(pq, nq);
  KvFootprint f;
  f.raw_bytes = static_cast<double>(n_tokens) * head_dim * 2.0 * 2.0;
  f.index_bytes = static_cast<double>(nq) * pq.m * 2.0 * index_bits(pq.k) / 8.0;
  double centroids = 0.0;
  for (std::uint32_t w = 0; w < windows; ++w) {
    const auto len = pq.window_len == 0 ? nq : std::min(pq.window_len, nq - w * pq.window_len);
    centroids += std::min(pq.k, len);
  }
  f.codebook_bytes = centroids * head_dim * 2.0 * 2.0;
  f.fp_bytes = static_cast<double>(n_tokens - nq) * head_dim * 2.0 * 2.0;
  return f;
}

double compression_factor(const PqConfig& pq, std::uint32_t head_dim, std::uint32_t n_tokens) {
  return kv_footprint(pq, head_dim, n_tokens).factor();
}

GpuTime roofline(double bytes, double flops, const GpuModel& gpu) {
  GpuTime t;
  t.bytes = bytes;
  t.flops = flops;
  t.seconds = std::max(bytes / (gpu.hbm_bw_GBps * 1e9), flops / (gpu.flops_T * 1e12));
  return t;
}

GpuTime gpu_prefill_layer(const Workload& wl, const GpuModel& gpu) {
  const auto w = layer_weights(wl.model);
  const double tokens = static_cast<double>(wl.batch) * wl.seq_in;
  const double params = w.qkv + w.proj + w.ffn;
  // Causal attention: QK^T and PV over half the square.
  const double attn = 2.0 * wl.batch * wl.model.n_heads * static_cast<double>(wl.seq_in) * wl.seq_in *
                      wl.model.head_dim;
  return roofline(params * 2.0 + kv_layer_bytes(wl, wl.seq_in), 2.0 * params * tokens + attn, gpu);
}

double cluster_cycles_per_layer(const Workload& wl, const PqConfig& pq, const PimConfig& hw) {
  const auto ctx = make_trace_context(wl, pq, hw);
  return simulate(trace_codebook_generation(ctx), hw).cycles_total;
}

SimReport run_scenario(const Scenario& sc, const PqConfig& pq, const PimConfig& hw) {
  pq.validate();
  hw.validate();
  const auto& wl = sc.workload;
  wl.model.validate();
  require(wl.batch > 0, "invalid-config", "batch must be positive");
  const auto& gpu = hw.gpu_model;
  const double cyc = 1.0 / (hw.timings.tCK_ns * 1e-9);
  const double L = wl.model.n_layers;
  const auto ctx_mid = wl.seq_in + wl.seq_out / 2;
  const auto w = layer_weights(wl.model);
  const double b = wl.batch;

  SimReport R;
  R.label = to_string(sc.kind);
  R.seq_in = wl.seq_in;
  R.seq_out = wl.seq_out;
  R.batch = wl.batch;
  R.tCK_ns = hw.timings.tCK_ns;
  R.compression_factor = compression_factor(pq, wl.model.head_dim, std::max(ctx_mid, 1u));

  const auto qkv = roofline(w.qkv * 2.0, 2.0 * w.qkv * b, gpu);
  const auto proj = roofline(w.proj * 2.0, 2.0 * w.proj * b, gpu);
  const auto ffn = roofline(w.ffn * 2.0, 2.0 * w.ffn * b, gpu);
  const auto lm = roofline(w.lm_head * 2.0, 2.0 * w.lm_head * b, gpu);
  const double fc_layer = qkv.seconds + proj.seconds + ffn.seconds;

  const auto pre = gpu_prefill_layer(wl, gpu);
  double prefill_layer = pre.seconds * cyc;

  auto add_gpu = [&](Stage s, const GpuTime& t, double times) {
    R.stage(s) += t.seconds * cyc * times;
    R.energy(s) += gpu_energy(t, gpu) * times;
  };
  add_gpu(Stage::qkv_gen, qkv, L);
  add_gpu(Stage::proj_gpu, proj, L);
  add_gpu(Stage::proj_gpu, lm, 1.0);
  add_gpu(Stage::ffn_gpu, ffn, L);

  double step_layer = 0.0;  // cycles per layer of one decode step
  switch (sc.kind) {
    case ScenarioKind::gpu_infinite:
    case ScenarioKind::gpu_cpu_offload:
    case ScenarioKind::gpu_pq: {
      double bytes = kv_layer_bytes(wl, ctx_mid);
      double flops = attention_flops(wl, ctx_mid);
      if (sc.kind == ScenarioKind::gpu_pq) {
        bytes /= R.compression_factor;
        const double hd = wl.model.head_dim;
        flops = b * wl.model.n_heads * (2.0 * pq.k * hd + static_cast<double>(ctx_mid) * (pq.m + 2.0 * hd));
      }
      const auto attn = roofline(bytes, flops, gpu);
      add_gpu(Stage::attn_gpu, attn, L);
      step_layer = (fc_layer + attn.seconds) * cyc;
      if (sc.kind == ScenarioKind::gpu_cpu_offload) {
        const double weights = (L * (w.qkv + w.proj + w.ffn) + w.lm_head) * 2.0;
        const double kv_end = L * kv_layer_bytes(wl, wl.seq_in + wl.seq_out);
        if (weights + kv_end > gpu.memory_GB * 1e9) {
          const double pcie_bytes = kv_layer_bytes(wl, ctx_mid);
          const double t = pcie_bytes / (gpu.pcie_bw_GBps * 1e9);
          R.stage(Stage::pcie) += t * cyc * L;
          R.energy(Stage::pcie) += pcie_bytes * gpu.e_pcie_pJ_per_byte * L;
          step_layer += t * cyc;
        }
      }
      break;
    }
    case ScenarioKind::attacc_pim:
    case ScenarioKind::aqpim:
    case ScenarioKind::aqpim_bufferpe_gather: {
      SimReport pim;
      if (sc.kind == ScenarioKind::attacc_pim) {
        PimConfig unbounded = hw;
        unbounded.rows_per_bank = 1u << 31;
        const auto ctx = make_trace_context(wl, pq, unbounded);
        pim = simulate(trace_raw_attention(ctx, ctx_mid), unbounded);
      } else {
        const auto ctx = make_trace_context(wl, pq, hw);
        const auto site = sc.kind == ScenarioKind::aqpim ? GatherSite::BankPe : GatherSite::BufferPe;
        pim = simulate(trace_decode_attention(ctx, site, ctx_mid), hw);
        if (wl.seq_in > 0) {
          const auto cl = simulate(trace_codebook_generation(ctx), hw);
          for (auto s : {Stage::cluster_dc, Stage::cluster_ca, Stage::cluster_cc}) {
            R.stage(s) += cl.stage(s) * L;
            R.energy(s) += cl.energy(s) * L;
          }
          prefill_layer = std::max(prefill_layer, cl.cycles_total);
        }
      }
      for (auto s : {Stage::transfer, Stage::atnk, Stage::sfm, Stage::atnv, Stage::retrieval}) {
        R.stage(s) += pim.stage(s) * L;
        R.energy(s) += pim.energy(s) * L;
      }
      const auto& k = pim.counters;
      const auto n = static_cast<std::uint64_t>(L);
      R.counters = {k.acts * n, k.col_reads * n, k.col_writes * n, k.macs * n, k.tsv_bytes * n,
                    k.inter_hbm_bytes * n, k.bufferpe_ops * n};
      const double fc = fc_layer * cyc;
      const double p = pim.cycles_total;
      // Sequence-by-sequence pipelining of GPU FC layers with PIM attention.
      step_layer = std::max(fc, p) + std::min(fc, p) / b;
      break;
    }
  }
  R.prefill_cycles = prefill_layer * L;
  R.decode_step_cycles = step_layer * L + lm.seconds * cyc;
  R.cycles_total = R.prefill_cycles + static_cast<double>(wl.seq_out) * R.decode_step_cycles;
  return R;
}

std::vector<SimReport> sweep(const std::vector<ScenarioKind>& scenarios, const Workload& base, SweepAxis axis,
                             const std::vector<std::uint32_t>& points, const PqConfig& pq, const PimConfig& hw) {
  require(!points.empty(), "invalid-config", "sweep needs at least one point");
  std::vector<SimReport> out;
  for (auto p : points) {
    Workload wl = base;
    switch (axis) {
      case SweepAxis::seq_in: wl.seq_in = p; break;
      case SweepAxis::seq_out: wl.seq_out = p; break;
      case SweepAxis::batch: wl.batch = p; break;
    }
    for (auto k : scenarios) out.push_back(run_scenario({k, wl}, pq, hw));
  }
  return out;
}

std::string sweep_csv(const std::vector<SimReport>& rows) {
  std::string s = sim_report_csv_header() + "\n";
  for (const auto& r : rows) s += sim_report_csv_row(r) + "\n";
  return s;
}

}  // namespace aqpim
