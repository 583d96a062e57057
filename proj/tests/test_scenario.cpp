// SPDX-License-Identifier: Apache-2.0
#include "aqpim/error.hpp"
#include "aqpim/scenario.hpp"

#include <doctest.h>

#include <algorithm>

using namespace aqpim;

namespace {

Workload small_wl() {
  Workload w;
  w.model = ModelShape{2, 8, 8, 64, 512, 1792, 4000};
  w.batch = 2;
  w.seq_in = 1024;
  w.seq_out = 8;
  return w;
}

PqConfig small_pq() {
  PqConfig p;
  p.m = 16;
  p.k = 128;
  return p;
}

}  // namespace

TEST_CASE("compression accounting by hand") {
  PqConfig pq;
  pq.m = 2;
  pq.k = 4;
  pq.sink_tokens = 2;
  pq.recent_tokens = 2;
  // 16 quantized tokens, 2-bit codes, 4 centroids x 8 dims, 4 FP tokens.
  const auto f = kv_footprint(pq, 8, 20);
  CHECK(f.raw_bytes == 640);
  CHECK(f.index_bytes == 16);
  CHECK(f.codebook_bytes == 128);
  CHECK(f.fp_bytes == 128);
  CHECK(f.factor() == doctest::Approx(640.0 / 272.0));
  pq.window_len = 10;
  CHECK(kv_footprint(pq, 8, 20).codebook_bytes == 256);
  pq.window_len = 0;
  pq.k = 64;  // clamped to the 16 quantized tokens
  CHECK(kv_footprint(pq, 8, 20).codebook_bytes == 16 * 8 * 4);
}

TEST_CASE("default compression factor at 32K") {
  CHECK(compression_factor(PqConfig{}, 128, 32768) == doctest::Approx(6.53).epsilon(0.05));
}

TEST_CASE("roofline") {
  GpuModel g;
  const auto mem = roofline(g.hbm_bw_GBps * 1e9, 1.0, g);
  CHECK(mem.seconds == doctest::Approx(1.0));
  const auto comp = roofline(1.0, g.flops_T * 1e12 * 2, g);
  CHECK(comp.seconds == doctest::Approx(2.0));
}

TEST_CASE("scenario names") {
  for (auto k : {ScenarioKind::gpu_cpu_offload, ScenarioKind::gpu_infinite, ScenarioKind::gpu_pq,
                 ScenarioKind::attacc_pim, ScenarioKind::aqpim, ScenarioKind::aqpim_bufferpe_gather})
    CHECK(scenario_from_string(to_string(k)) == k);
  try {
    scenario_from_string("gpu");
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.kind() == "unknown-scenario");
  }
}

TEST_CASE("zero output length costs prefill only") {
  auto wl = small_wl();
  wl.seq_out = 0;
  const auto r = run_scenario({ScenarioKind::gpu_infinite, wl}, small_pq(), PimConfig{});
  CHECK(r.cycles_total == r.prefill_cycles);
  CHECK(r.prefill_cycles > 0);
}

TEST_CASE("offload only pays PCIe when the cache overflows GPU memory") {
  auto wl = small_wl();
  auto r = run_scenario({ScenarioKind::gpu_cpu_offload, wl}, small_pq(), PimConfig{});
  CHECK(r.stage(Stage::pcie) == 0.0);
  PimConfig hw;
  hw.gpu_model.memory_GB = 1e-3;
  r = run_scenario({ScenarioKind::gpu_cpu_offload, wl}, small_pq(), hw);
  CHECK(r.stage(Stage::pcie) > 0.0);
  const auto inf = run_scenario({ScenarioKind::gpu_infinite, wl}, small_pq(), hw);
  CHECK(r.decode_step_cycles > inf.decode_step_cycles);
}

TEST_CASE("scenarios are deterministic and carry their PIM stages") {
  const auto wl = small_wl();
  for (auto k : {ScenarioKind::attacc_pim, ScenarioKind::aqpim, ScenarioKind::aqpim_bufferpe_gather}) {
    const auto a = run_scenario({k, wl}, small_pq(), PimConfig{});
    CHECK(a == run_scenario({k, wl}, small_pq(), PimConfig{}));
    CHECK(a.stage(Stage::sfm) > 0);
    CHECK(a.counters.inter_hbm_bytes == 0);
  }
  const auto aq = run_scenario({ScenarioKind::aqpim, wl}, small_pq(), PimConfig{});
  CHECK(aq.stage(Stage::cluster_dc) > 0);
  CHECK(aq.stage(Stage::retrieval) > 0);
  CHECK(aq.compression_factor > 1.0);
}

TEST_CASE("sweep shape and order") {
  const auto wl = small_wl();
  const std::vector<ScenarioKind> kinds = {ScenarioKind::gpu_infinite, ScenarioKind::aqpim};
  const auto one = sweep(kinds, wl, SweepAxis::batch, {4}, small_pq(), PimConfig{});
  CHECK(one.size() == 2);
  CHECK(one[0].batch == 4);
  const auto rows = sweep({ScenarioKind::aqpim}, wl, SweepAxis::seq_in, {512, 1024, 2048}, small_pq(), PimConfig{});
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].seq_in == 512);
  CHECK(rows[2].seq_in == 2048);
  CHECK(rows[0].stage(Stage::atnk) == rows[2].stage(Stage::atnk));
  const auto csv = sweep_csv(rows);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  CHECK(sweep_axis_from_string("seq_out") == SweepAxis::seq_out);
  CHECK_THROWS_AS(sweep_axis_from_string("heads"), Error);
  CHECK_THROWS_AS(sweep({ScenarioKind::aqpim}, wl, SweepAxis::seq_in, {}, small_pq(), PimConfig{}), Error);
}
