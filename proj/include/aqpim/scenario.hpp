// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "aqpim/pim_sim.hpp"

#include <string>
#include <vector>

namespace aqpim {

enum class ScenarioKind : std::uint8_t { gpu_cpu_offload, gpu_infinite, gpu_pq, attacc_pim, aqpim, aqpim_bufferpe_gather };

std::string to_string(ScenarioKind k);
// Throws Error("unknown-scenario").
ScenarioKind scenario_from_string(const std::string& s);

struct Scenario {
  ScenarioKind kind = ScenarioKind::aqpim;
  Workload workload;
};

struct KvFootprint {
  double raw_bytes = 0.0;
  double index_bytes = 0.0;     // packed ceil(log2 k)-bit codes
  double codebook_bytes = 0.0;  // FP16 centroids
  double fp_bytes = 0.0;        // sink + recent tokens, FP16
  double compressed_bytes() const { return index_bytes + codebook_bytes + fp_bytes; }
  double factor() const { return raw_bytes / compressed_bytes(); }
};

// One (layer, kv_head) of n_tokens, keys and values, FP16 raw.
KvFootprint kv_footprint(const PqConfig& pq, std::uint32_t head_dim, std::uint32_t n_tokens);
double compression_factor(const PqConfig& pq, std::uint32_t head_dim, std::uint32_t n_tokens);

struct GpuTime {
  double seconds = 0.0;
  double bytes = 0.0;
  double flops = 0.0;
};

GpuTime roofline(double bytes, double flops, const GpuModel& gpu);

// Whole-batch prefill of one layer on the GPU.
GpuTime gpu_prefill_layer(const Workload& wl, const GpuModel& gpu);

// Codebook generation for one layer on the busiest stack, in PIM cycles.
double cluster_cycles_per_layer(const Workload& wl, const PqConfig& pq, const PimConfig& hw);

SimReport run_scenario(const Scenario& sc, const PqConfig& pq, const PimConfig& hw);

enum class SweepAxis : std::uint8_t { seq_in, seq_out, batch };
std::string to_string(SweepAxis a);
SweepAxis sweep_axis_from_string(const std::string& s);

// One report per (point, scenario), point-major.
std::vector<SimReport> sweep(const std::vector<ScenarioKind>& scenarios, const Workload& base, SweepAxis axis,
                             const std::vector<std::uint32_t>& points, const PqConfig& pq, const PimConfig& hw);

std::string sweep_csv(const std::vector<SimReport>& rows);

}  // namespace aqpim
