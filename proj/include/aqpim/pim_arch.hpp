// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "aqpim/quantizer.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace aqpim {

struct PimTimings {
  double tCK_ns = 0.769;  // 1.3 GHz command clock
  std::uint32_t tRCD = 19;
  std::uint32_t tRP = 19;
  std::uint32_t tRAS = 43;
  std::uint32_t tCCDL = 2;
  std::uint32_t tRRD = 3;
  std::uint32_t tCL = 19;
  friend bool operator==(const PimTimings&, const PimTimings&) = default;
};

// Picojoules.
struct PimEnergies {
  double e_act = 909.0;         // per bank activation
  double e_rd_col = 120.0;      // per 32B column read (incl. RET bursts)
  double e_wr_col = 130.0;      // per 32B column write
  double e_mac16 = 0.5;         // per FP16 MAC
  double e_tsv_per_bit = 0.8;   // bank <-> buffer die
  double e_bufferpe_op = 1.0;
  friend bool operator==(const PimEnergies&, const PimEnergies&) = default;
};

struct GpuModel {
  double hbm_bw_GBps = 3350.0;
  double pcie_bw_GBps = 256.0;
  double flops_T = 400.0;      // effective dense FP16 throughput
  double memory_GB = 80.0;
  double e_hbm_pJ_per_byte = 31.2;
  double e_flop_pJ = 0.5;
  double e_pcie_pJ_per_byte = 80.0;
  friend bool operator==(const GpuModel&, const GpuModel&) = default;
};

struct PimConfig {
  std::uint32_t n_hbms = 4;
  std::uint32_t channels_per_hbm = 16;
  std::uint32_t banks_per_channel = 16;
  std::uint32_t banks_per_group = 4;
  std::uint32_t row_buffer_bytes = 1024;
  std::uint32_t rows_per_bank = 65536;
  std::uint32_t column_bytes = 32;
  std::uint32_t bankpe_lanes = 16;
  std::uint32_t bufferpe_throughput = 2048;  // ops per cycle per stack
  std::uint32_t tsv_bytes_per_cycle = 128;   // per channel, bank <-> buffer die
  PimTimings timings;
  PimEnergies energies;
  GpuModel gpu_model;

  std::uint32_t banks_per_hbm() const { return channels_per_hbm * banks_per_channel; }
  std::uint32_t total_banks() const { return n_hbms * banks_per_hbm(); }
  double hbm_capacity_bytes() const {
    return static_cast<double>(banks_per_hbm()) * rows_per_bank * row_buffer_bytes;
  }

  void validate() const;
  std::string to_json() const;
  static PimConfig from_json(const std::string& text);
  friend bool operator==(const PimConfig&, const PimConfig&) = default;
};

// ---------------------------------------------------------------- addressing

enum class AddrField { Column, Bank, Channel, Row, Hbm };

struct DecodedAddress {
  std::uint64_t hbm = 0, channel = 0, bank = 0, row = 0, column = 0;
  friend bool operator==(const DecodedAddress&, const DecodedAddress&) = default;
};

// Bit fields listed from the least significant bit upward.
struct AddressMap {
  struct Slice {
    AddrField field;
    std::uint32_t bits;
  };
  std::vector<Slice> slices;

  // column | bank | channel | row | hbm, LSB first.
  static AddressMap standard(const PimConfig& hw);

  std::uint32_t total_bits() const;
  std::uint32_t low_bit(AddrField f) const;
  std::uint64_t encode(const DecodedAddress& a) const;
  DecodedAddress decode(std::uint64_t addr) const;
  void validate() const;
};

// --------------------------------------------------------------- placement

struct ModelShape {
  std::uint32_t n_layers = 32;
  std::uint32_t n_heads = 32;
  std::uint32_t n_kv_heads = 32;
  std::uint32_t head_dim = 128;
  std::uint32_t d_model = 4096;
  std::uint32_t d_ff = 14336;
  std::uint32_t vocab = 32000;

  std::uint32_t group_size() const { return n_heads / n_kv_heads; }
  void validate() const;
  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

struct BankSlot {
  std::uint32_t unit = 0;  // batch * n_kv_heads + kv_head
  std::uint32_t subvector = 0;
};

struct Placement {
  std::uint32_t n_units = 0;
  std::uint32_t m = 0;
  std::vector<std::uint32_t> unit_hbm;                 // per unit
  std::vector<std::vector<std::uint32_t>> unit_banks;  // per unit, per subvector: bank id within its HBM
  std::vector<std::uint32_t> units_per_hbm;
  double utilization = 0.0;  // fraction of BankPEs with work

  // Slots held by one bank, in slot order.
  std::vector<BankSlot> bank_slots(const PimConfig& hw, std::uint32_t hbm, std::uint32_t bank_id) const;
  std::uint32_t max_slots_per_bank(const PimConfig& hw) const;
  std::uint32_t busiest_hbm() const;
};

// Units are (batch, kv_head) pairs dealt round-robin over stacks; the
// subvectors of the j-th unit on a stack take consecutive bank ids starting
// at j*m (mod banks per stack), bank bits below channel bits.
Placement plan_placement(const ModelShape& model, const PqConfig& pq, std::uint32_t batch, const PimConfig& hw);

// ------------------------------------------------------------------ layout

struct RowRange {
  std::uint32_t begin = 0;
  std::uint32_t end = 0;
  std::uint32_t rows() const { return end - begin; }
  friend bool operator==(const RowRange&, const RowRange&) = default;
};

struct LayoutRequest {
  PqConfig pq;
  std::uint32_t head_dim = 128;
  std::uint32_t seq_len = 0;  // prefill tokens
  std::uint32_t seq_out = 0;  // decode tokens
  std::uint32_t n_layers = 1;
  std::uint32_t slots_per_bank = 1;
  std::uint32_t query_heads_per_kv = 1;
};

// One bank's row map; every bank uses the same map.
struct MemoryLayout {
  RowRange codebook_region;
  RowRange index_region;
  RowRange buffer_region;
  std::uint32_t n_windows = 0;
  std::uint32_t sub_dim = 0;
  std::uint32_t index_bits = 0;
  std::uint32_t index_pages_per_stream = 0;  // per slot per layer, prefill tokens
  std::uint32_t decode_pages_per_stream = 0;
  std::uint32_t staging_rows = 0;            // raw KV of one slot, one layer
  std::uint32_t slots = 0;
  std::uint32_t n_layers = 0;
  std::uint32_t query_heads = 0;
  std::uint32_t codes_per_row = 0;

  // stream 0 = key, 1 = value; `ch` is the channel within the subvector.
  std::uint32_t codebook_row(std::uint32_t slot, std::uint32_t layer, std::uint32_t window, std::uint32_t stream,
                             std::uint32_t ch) const;
  std::uint32_t index_row(std::uint32_t slot, std::uint32_t layer, std::uint32_t stream, std::uint32_t page) const;
  std::uint32_t table_row(std::uint32_t slot, std::uint32_t head, std::uint32_t window) const;
  std::uint32_t staging_row(std::uint32_t slot, std::uint32_t r) const;
  // Decode-time index pages reuse the staging rows.
  std::uint32_t decode_index_row(std::uint32_t slot, std::uint32_t layer, std::uint32_t stream,
                                 std::uint32_t page) const;
  std::uint32_t total_rows() const { return buffer_region.end; }
};

// ceil(log2 k), at least 1.
std::uint32_t index_bits(std::uint32_t k);

// Windows covering `quantized` tokens.
std::uint32_t window_count(const PqConfig& pq, std::uint32_t quantized);

// Tokens of a sequence that fall in the quantized range.
std::uint32_t quantized_tokens(const PqConfig& pq, std::uint32_t n_tokens);

MemoryLayout allocate(const LayoutRequest& req, const PimConfig& hw);

}  // namespace aqpim
