// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "aqpim/pim_arch.hpp"
#include "aqpim/quantizer.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace aqpim {

enum class Opcode : std::uint8_t { SET_CONFIG, ACT_AB, MAC_AB, SFM, RET, MV_BA, MV_BF, RD, WR, PRE };

enum class Stage : std::uint8_t {
  qkv_gen,
  transfer,
  atnk,
  sfm,
  atnv,
  retrieval,
  cluster_dc,
  cluster_ca,
  cluster_cc,
  ffn_gpu,
  proj_gpu,
  pcie,
  attn_gpu,
};
inline constexpr std::size_t kStageCount = 13;

// Which row buffer of the bank a command uses. Aux is the second row buffer
// that holds index pages while the table row stays open in Primary. None
// targets the PE register file only.
enum class RowSpace : std::uint8_t { None, Primary, Aux };

enum class Role : std::uint8_t {
  Config,
  Data,
  Query,
  Codebook,
  Table,
  KeyLookup,
  ValueLookup,
  Index,
  Score,
  Output,
  Distance,
  Assign,
  Centroid,
  Gather,
};

enum class Phase : std::uint8_t { PrefillCluster, DecodeStep };

enum class GatherSite : std::uint8_t { BankPe, BufferPe };

std::string to_string(Opcode op);
std::string to_string(Stage s);
std::string to_string(Role r);
std::string to_string(Phase p);
std::string to_string(GatherSite g);
Stage stage_from_string(const std::string& s);
GatherSite gather_site_from_string(const std::string& s);

struct PimCommand {
  Opcode op = Opcode::SET_CONFIG;
  Stage stage = Stage::transfer;
  Role role = Role::Config;
  std::uint32_t hbm = 0;
  std::uint32_t dst_hbm = 0;  // receiving stack of a MV transfer
  std::uint32_t channel = 0;
  std::uint64_t bank_mask = 0;  // banks within the channel
  RowSpace space = RowSpace::None;
  std::uint32_t row = 0;
  std::uint32_t col = 0;
  std::uint32_t stream_rows = 0;  // >0: self-managed ACT/PRE over rows [row, row + stream_rows)
  std::uint64_t repeat = 1;       // column bursts per bank (per row for streams), or op count
  std::uint64_t bytes = 0;        // summed over banks
  std::uint64_t macs = 0;         // summed over banks
  std::uint64_t ops = 0;          // BufferPE elementary ops
  std::uint32_t window = 0;
  std::uint32_t subvector = 0;
  std::uint8_t stream = 2;    // 0 key, 1 value, 2 neither
  std::uint32_t barrier = 0;  // SFM commands sharing a nonzero id run as one stack-wide operation
  bool sync = false;          // wait for every earlier command of the channel to complete
  std::uint32_t layer = 0;

  friend bool operator==(const PimCommand&, const PimCommand&) = default;
};

struct CommandTrace {
  Phase phase = Phase::DecodeStep;
  std::string workload;  // JSON echo
  std::vector<PimCommand> commands;  // channel queues interleaved, each in issue order

  std::uint32_t n_banks_in(const PimCommand& c) const;
};

struct SimCounters {
  std::uint64_t acts = 0;
  std::uint64_t col_reads = 0;
  std::uint64_t col_writes = 0;
  std::uint64_t macs = 0;
  std::uint64_t tsv_bytes = 0;
  std::uint64_t inter_hbm_bytes = 0;
  std::uint64_t bufferpe_ops = 0;
  friend bool operator==(const SimCounters&, const SimCounters&) = default;
};

struct SimReport {
  std::string label;
  double cycles_total = 0.0;
  std::array<double, kStageCount> cycles_by_stage{};
  std::array<double, kStageCount> energy_by_stage{};  // pJ
  SimCounters counters;
  // Scenario-level fields (zero for a bare trace run).
  double prefill_cycles = 0.0;
  double decode_step_cycles = 0.0;
  double compression_factor = 0.0;
  std::uint32_t seq_in = 0, seq_out = 0, batch = 0;
  double tCK_ns = 0.0;

  double stage(Stage s) const { return cycles_by_stage[static_cast<std::size_t>(s)]; }
  double& stage(Stage s) { return cycles_by_stage[static_cast<std::size_t>(s)]; }
  double energy(Stage s) const { return energy_by_stage[static_cast<std::size_t>(s)]; }
  double& energy(Stage s) { return energy_by_stage[static_cast<std::size_t>(s)]; }
  double energy_total() const;

  std::string to_json() const;
  friend bool operator==(const SimReport&, const SimReport&) = default;
};

std::string sim_report_csv_header();
std::string sim_report_csv_row(const SimReport& r);

struct SimResult {
  SimReport report;
  std::vector<std::uint64_t> issue;  // per command
  std::vector<std::uint64_t> done;   // per command
  std::vector<std::uint64_t> channel_busy;
};

// Throws Error("protocol-violation") naming the offending command index.
void check_protocol(const CommandTrace& trace, const PimConfig& hw);

SimResult simulate_timeline(const CommandTrace& trace, const PimConfig& hw);
SimReport simulate(const CommandTrace& trace, const PimConfig& hw);

// cycle, channel, bank mask, opcode, row, col, bytes, tag; tab-separated.
void write_trace_dump(std::ostream& os, const CommandTrace& trace, const SimResult& timeline);

// ------------------------------------------------------------ generators

struct Workload {
  ModelShape model;
  std::uint32_t batch = 16;
  std::uint32_t seq_in = 16384;
  std::uint32_t seq_out = 256;

  std::string to_json() const;
  friend bool operator==(const Workload&, const Workload&) = default;
};

// Placement and layout for one workload; traces cover one layer of the
// busiest stack.
struct TraceContext {
  Workload wl;
  PqConfig pq;
  PimConfig hw;
  Placement placement;
  MemoryLayout layout;
  std::uint32_t hbm = 0;
};

TraceContext make_trace_context(const Workload& wl, const PqConfig& pq, const PimConfig& hw);

CommandTrace trace_codebook_generation(const TraceContext& ctx, std::uint32_t layer = 0);

// One decode step over `context_tokens` cached tokens.
CommandTrace trace_decode_attention(const TraceContext& ctx, GatherSite site, std::uint32_t context_tokens,
                                    std::uint32_t layer = 0);

// Raw-KV GEMV attention with the same head/bank mapping (the attacc arm).
CommandTrace trace_raw_attention(const TraceContext& ctx, std::uint32_t context_tokens);

// Key-lookup activations per bank id (channel * banks_per_channel + bank).
std::vector<std::uint64_t> key_lookup_acts_per_bank(const CommandTrace& trace, const PimConfig& hw);

}  // namespace aqpim
