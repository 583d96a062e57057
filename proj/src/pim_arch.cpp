// SPDX-License-Identifier: Apache-2.0
#include "aqpim/pim_arch.hpp"

#include "aqpim/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <functional>
#include <map>

namespace aqpim {

namespace {

using nlohmann::json;

// Strict object reader: every key must be known.
void read_object(const json& j, const std::string& what, const std::map<std::string, std::function<void(const json&)>>& fields) {
  if (!j.is_object()) throw Error("invalid-config", what + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    auto f = fields.find(it.key());
    if (f == fields.end()) throw Error("invalid-config", "unknown " + what + " key '" + it.key() + "'");
    try {
      f->second(it.value());
    } catch (const json::exception& e) {
      throw Error("invalid-config", what + "." + it.key() + ": " + e.what());
    }
  }
}

template <typename T>
std::function<void(const json&)> into(T& field) {
  return [&field](const json& v) { field = v.get<T>(); };
}

bool is_pow2(std::uint64_t x) { return x != 0 && std::has_single_bit(x); }
std::uint32_t log2u(std::uint64_t x) { return static_cast<std::uint32_t>(std::bit_width(x) - 1); }

std::uint32_t ceil_div(std::uint64_t a, std::uint64_t b) { return static_cast<std::uint32_t>((a + b - 1) / b); }

}  // namespace

void PimConfig::validate() const {
  auto pos = [](bool ok, const std::string& name) {
    require(ok, "invalid-config", "PimConfig." + name + " must be strictly positive");
  };
  pos(n_hbms > 0, "n_hbms");
  pos(channels_per_hbm > 0, "channels_per_hbm");
  pos(banks_per_channel > 0, "banks_per_channel");
  pos(banks_per_group > 0, "banks_per_group");
  pos(row_buffer_bytes > 0, "row_buffer_bytes");
  pos(rows_per_bank > 0, "rows_per_bank");
  pos(column_bytes > 0, "column_bytes");
  pos(bankpe_lanes > 0, "bankpe_lanes");
  pos(bufferpe_throughput > 0, "bufferpe_throughput");
  pos(tsv_bytes_per_cycle > 0, "tsv_bytes_per_cycle");
  require(banks_per_channel % banks_per_group == 0, "invalid-config",
          "banks_per_channel must be a multiple of banks_per_group");
  require(row_buffer_bytes % column_bytes == 0, "invalid-config", "row_buffer_bytes must be a multiple of column_bytes");
  const auto& t = timings;
  pos(t.tCK_ns > 0, "timings.tCK_ns");
  pos(t.tRCD > 0, "timings.tRCD");
  pos(t.tRP > 0, "timings.tRP");
  pos(t.tRAS > 0, "timings.tRAS");
  pos(t.tCCDL > 0, "timings.tCCDL");
  pos(t.tRRD > 0, "timings.tRRD");
  pos(t.tCL > 0, "timings.tCL");
  const auto& e = energies;
  pos(e.e_act > 0, "energies.e_act");
  pos(e.e_rd_col > 0, "energies.e_rd_col");
  pos(e.e_wr_col > 0, "energies.e_wr_col");
  pos(e.e_mac16 > 0, "energies.e_mac16");
  pos(e.e_tsv_per_bit > 0, "energies.e_tsv_per_bit");
  pos(e.e_bufferpe_op > 0, "energies.e_bufferpe_op");
  const auto& g = gpu_model;
  pos(g.hbm_bw_GBps > 0, "gpu_model.hbm_bw_GBps");
  pos(g.pcie_bw_GBps > 0, "gpu_model.pcie_bw_GBps");
  pos(g.flops_T > 0, "gpu_model.flops_T");
  pos(g.memory_GB > 0, "gpu_model.memory_GB");
  pos(g.e_hbm_pJ_per_byte > 0, "gpu_model.e_hbm_pJ_per_byte");
  pos(g.e_flop_pJ > 0, "gpu_model.e_flop_pJ");
  pos(g.e_pcie_pJ_per_byte > 0, "gpu_model.e_pcie_pJ_per_byte");
}

std::string PimConfig::to_json() const {
  const auto& t = timings;
  const auto& e = energies;
  const auto& g = gpu_model;
  json j{{"n_hbms", n_hbms},
         {"channels_per_hbm", channels_per_hbm},
         {"banks_per_channel", banks_per_channel},
         {"banks_per_group", banks_per_group},
         {"row_buffer_bytes", row_buffer_bytes},
         {"rows_per_bank", rows_per_bank},
         {"column_bytes", column_bytes},
         {"bankpe_lanes", bankpe_lanes},
         {"bufferpe_throughput", bufferpe_throughput},
         {"tsv_bytes_per_cycle", tsv_bytes_per_cycle},
         {"timings",
          {{"tCK_ns", t.tCK_ns},
           {"tRCD", t.tRCD},
           {"tRP", t.tRP},
           {"tRAS", t.tRAS},
           {"tCCDL", t.tCCDL},
           {"tRRD", t.tRRD},
           {"tCL", t.tCL}}},
         {"energies",
          {{"e_act", e.e_act},
           {"e_rd_col", e.e_rd_col},
           {"e_wr_col", e.e_wr_col},
           {"e_mac16", e.e_mac16},
           {"e_tsv_per_bit", e.e_tsv_per_bit},
           {"e_bufferpe_op", e.e_bufferpe_op}}},
         {"gpu_model",
          {{"hbm_bw_GBps", g.hbm_bw_GBps},
           {"pcie_bw_GBps", g.pcie_bw_GBps},
           {"flops_T", g.flops_T},
           {"memory_GB", g.memory_GB},
           {"e_hbm_pJ_per_byte", g.e_hbm_pJ_per_byte},
           {"e_flop_pJ", g.e_flop_pJ},
           {"e_pcie_pJ_per_byte", g.e_pcie_pJ_per_byte}}}};
  return j.dump(2);
}

PimConfig PimConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error("invalid-config", e.what());
  }
  PimConfig c;
  auto& t = c.timings;
  auto& e = c.energies;
  auto& g = c.gpu_model;
  read_object(j, "PimConfig",
              {{"n_hbms", into(c.n_hbms)},
               {"channels_per_hbm", into(c.channels_per_hbm)},
               {"banks_per_channel", into(c.banks_per_channel)},
               {"banks_per_group", into(c.banks_per_group)},
               {"row_buffer_bytes", into(c.row_buffer_bytes)},
               {"rows_per_bank", into(c.rows_per_bank)},
               {"column_bytes", into(c.column_bytes)},
               {"bankpe_lanes", into(c.bankpe_lanes)},
               {"bufferpe_throughput", into(c.bufferpe_throughput)},
               {"tsv_bytes_per_cycle", into(c.tsv_bytes_per_cycle)},
               {"timings",
                [&](const json& v) {
                  read_object(v, "timings",
                              {{"tCK_ns", into(t.tCK_ns)},
                               {"tRCD", into(t.tRCD)},
                               {"tRP", into(t.tRP)},
                               {"tRAS", into(t.tRAS)},
                               {"tCCDL", into(t.tCCDL)},
                               {"tRRD", into(t.tRRD)},
                               {"tCL", into(t.tCL)}});
                }},
               {"energies",
                [&](const json& v) {
                  read_object(v, "energies",
                              {{"e_act", into(e.e_act)},
                               {"e_rd_col", into(e.e_rd_col)},
                               {"e_wr_col", into(e.e_wr_col)},
                               {"e_mac16", into(e.e_mac16)},
                               {"e_tsv_per_bit", into(e.e_tsv_per_bit)},
                               {"e_bufferpe_op", into(e.e_bufferpe_op)}});
                }},
               {"gpu_model", [&](const json& v) {
                  read_object(v, "gpu_model",
                              {{"hbm_bw_GBps", into(g.hbm_bw_GBps)},
                               {"pcie_bw_GBps", into(g.pcie_bw_GBps)},
                               {"flops_T", into(g.flops_T)},
                               {"memory_GB", into(g.memory_GB)},
                               {"e_hbm_pJ_per_byte", into(g.e_hbm_pJ_per_byte)},
                               {"e_flop_pJ", into(g.e_flop_pJ)},
                               {"e_pcie_pJ_per_byte", into(g.e_pcie_pJ_per_byte)}});
                }}});
  c.validate();
  return c;
}

// ---------------------------------------------------------------- addressing

AddressMap AddressMap::standard(const PimConfig& hw) {
  require(is_pow2(hw.row_buffer_bytes) && is_pow2(hw.banks_per_channel) && is_pow2(hw.channels_per_hbm) &&
              is_pow2(hw.rows_per_bank) && is_pow2(hw.n_hbms),
          "invalid-config", "address map needs power-of-two topology sizes");
  return AddressMap{{{AddrField::Column, log2u(hw.row_buffer_bytes)},
                     {AddrField::Bank, log2u(hw.banks_per_channel)},
                     {AddrField::Channel, log2u(hw.channels_per_hbm)},
                     {AddrField::Row, log2u(hw.rows_per_bank)},
                     {AddrField::Hbm, log2u(hw.n_hbms)}}};
}

std::uint32_t AddressMap::total_bits() const {
  std::uint32_t b = 0;
  for (const auto& s : slices) b += s.bits;
  return b;
}

std::uint32_t AddressMap::low_bit(AddrField f) const {
  std::uint32_t b = 0;
  for (const auto& s : slices) {
    if (s.field == f) return b;
    b += s.bits;
  }
  throw Error("invalid-config", "address map lacks a field");
}

void AddressMap::validate() const {
  require(total_bits() <= 64, "invalid-config", "address map wider than 64 bits");
  for (auto f : {AddrField::Column, AddrField::Bank, AddrField::Channel, AddrField::Row, AddrField::Hbm}) {
    const auto n = std::count_if(slices.begin(), slices.end(), [f](const Slice& s) { return s.field == f; });
    require(n == 1, "invalid-config", "address map must hold each field exactly once");
  }
}

namespace {

std::uint64_t& field_ref(DecodedAddress& a, AddrField f) {
  switch (f) {
    case AddrField::Column: return a.column;
    case AddrField::Bank: return a.bank;
    case AddrField::Channel: return a.channel;
    case AddrField::Row: return a.row;
    case AddrField::Hbm: return a.hbm;
  }
  return a.column;
}

std::uint64_t mask_of(std::uint32_t bits) { return bits >= 64 ? ~0ULL : ((1ULL << bits) - 1); }

}  // namespace

std::uint64_t AddressMap::encode(const DecodedAddress& a) const {
  DecodedAddress tmp = a;
  std::uint64_t addr = 0;
  std::uint32_t shift = 0;
  for (const auto& s : slices) {
    const auto v = field_ref(tmp, s.field);
    require((v & ~mask_of(s.bits)) == 0, "invalid-input", "address field out of range");
    addr |= v << shift;
    shift += s.bits;
  }
  return addr;
}

DecodedAddress AddressMap::decode(std::uint64_t addr) const {
  DecodedAddress a;
  std::uint32_t shift = 0;
  for (const auto& s : slices) {
    field_ref(a, s.field) = (addr >> shift) & mask_of(s.bits);
    shift += s.bits;
  }
  return a;
}

// --------------------------------------------------------------- placement

void ModelShape::validate() const {
  require(n_layers > 0 && n_heads > 0 && n_kv_heads > 0 && head_dim > 0 && d_model > 0 && d_ff > 0, "invalid-config",
          "model dimensions must be positive");
  require(n_heads % n_kv_heads == 0, "invalid-config", "n_heads must be a multiple of n_kv_heads");
}

std::vector<BankSlot> Placement::bank_slots(const PimConfig& hw, std::uint32_t hbm, std::uint32_t bank_id) const {
  std::vector<BankSlot> out;
  const auto per_hbm = hw.banks_per_hbm();
  for (std::uint32_t u = 0; u < n_units; ++u) {
    if (unit_hbm[u] != hbm) continue;
    for (std::uint32_t s = 0; s < m; ++s)
      if (unit_banks[u][s] % per_hbm == bank_id) out.push_back({u, s});
  }
  return out;
}

std::uint32_t Placement::max_slots_per_bank(const PimConfig& hw) const {
  std::uint32_t best = 0;
  for (auto units : units_per_hbm)
    best = std::max(best, ceil_div(static_cast<std::uint64_t>(units) * m, hw.banks_per_hbm()));
  return best;
}

std::uint32_t Placement::busiest_hbm() const {
  return static_cast<std::uint32_t>(std::max_element(units_per_hbm.begin(), units_per_hbm.end()) -
                                    units_per_hbm.begin());
}

Placement plan_placement(const ModelShape& model, const PqConfig& pq, std::uint32_t batch, const PimConfig& hw) {
  model.validate();
  pq.validate();
  hw.validate();
  require(model.head_dim % pq.m == 0, "invalid-config", "head_dim must be a multiple of m");
  require(batch > 0, "invalid-config", "batch must be positive");
  Placement p;
  p.m = pq.m;
  p.n_units = batch * model.n_kv_heads;
  p.unit_hbm.resize(p.n_units);
  p.unit_banks.resize(p.n_units);
  p.units_per_hbm.assign(hw.n_hbms, 0);
  const auto per_hbm = hw.banks_per_hbm();
  for (std::uint32_t u = 0; u < p.n_units; ++u) {
    const auto h = u % hw.n_hbms;
    const auto j = p.units_per_hbm[h]++;
    p.unit_hbm[u] = h;
    p.unit_banks[u].resize(pq.m);
    for (std::uint32_t s = 0; s < pq.m; ++s)
      p.unit_banks[u][s] = static_cast<std::uint32_t>((static_cast<std::uint64_t>(j) * pq.m + s) % per_hbm);
  }
  std::uint64_t busy = 0;
  for (auto units : p.units_per_hbm) busy += std::min<std::uint64_t>(static_cast<std::uint64_t>(units) * pq.m, per_hbm);
  p.utilization = static_cast<double>(busy) / hw.total_banks();

  // Each bank slot needs at least its key and value codebook rows per layer.
  const auto sub_dim = model.head_dim / pq.m;
  const auto slots = p.max_slots_per_bank(hw);
  const std::uint64_t min_rows = static_cast<std::uint64_t>(slots) * model.n_layers * 2 * sub_dim;
  require(min_rows <= hw.rows_per_bank, "capacity-exceeded",
          "bank rows: " + std::to_string(slots) + " slots per bank need " + std::to_string(min_rows) +
              " codebook rows, bank has " + std::to_string(hw.rows_per_bank));
  return p;
}

// ------------------------------------------------------------------ layout

std::uint32_t index_bits(std::uint32_t k) { return std::max<std::uint32_t>(1, std::bit_width(k - 1)); }

std::uint32_t quantized_tokens(const PqConfig& pq, std::uint32_t n_tokens) {
  const auto sink = std::min(pq.sink_tokens, n_tokens);
  const auto recent = std::min(pq.recent_tokens, n_tokens - sink);
  return n_tokens - sink - recent;
}

std::uint32_t window_count(const PqConfig& pq, std::uint32_t quantized) {
  if (quantized == 0) return 0;
  if (pq.window_len == 0) return 1;
  return ceil_div(quantized, pq.window_len);
}

std::uint32_t MemoryLayout::codebook_row(std::uint32_t slot, std::uint32_t layer, std::uint32_t window,
                                         std::uint32_t stream, std::uint32_t ch) const {
  const std::uint64_t per_window = 2ULL * sub_dim;
  const std::uint64_t r = ((static_cast<std::uint64_t>(slot) * n_layers + layer) * n_windows + window) * per_window +
                          stream * sub_dim + ch;
  return codebook_region.begin + static_cast<std::uint32_t>(r);
}

std::uint32_t MemoryLayout::index_row(std::uint32_t slot, std::uint32_t layer, std::uint32_t stream,
                                      std::uint32_t page) const {
  const std::uint64_t r =
      ((static_cast<std::uint64_t>(slot) * n_layers + layer) * 2 + stream) * index_pages_per_stream + page;
  return index_region.begin + static_cast<std::uint32_t>(r);
}

std::uint32_t MemoryLayout::table_row(std::uint32_t slot, std::uint32_t head, std::uint32_t window) const {
  return buffer_region.begin + (slot * query_heads + head) * std::max(n_windows, 1u) + window;
}

std::uint32_t MemoryLayout::staging_row(std::uint32_t slot, std::uint32_t r) const {
  const auto tables = slots * query_heads * std::max(n_windows, 1u);
  const auto per_slot = (buffer_region.rows() - tables) / std::max(slots, 1u);
  return buffer_region.begin + tables + slot * per_slot + r;
}

std::uint32_t MemoryLayout::decode_index_row(std::uint32_t slot, std::uint32_t layer, std::uint32_t stream,
                                             std::uint32_t page) const {
  return staging_row(slot, (layer * 2 + stream) * decode_pages_per_stream + page);
}

MemoryLayout allocate(const LayoutRequest& req, const PimConfig& hw) {
  req.pq.validate();
  hw.validate();
  check_page_residency(req.pq, hw.row_buffer_bytes);
  require(req.head_dim % req.pq.m == 0, "invalid-config", "head_dim must be a multiple of m");
  require(req.n_layers > 0 && req.query_heads_per_kv > 0, "invalid-config", "layers and query heads must be positive");
  MemoryLayout L;
  L.sub_dim = req.head_dim / req.pq.m;
  L.index_bits = index_bits(req.pq.k);
  L.codes_per_row = hw.row_buffer_bytes * 8 / L.index_bits;
  L.slots = req.slots_per_bank;
  L.n_layers = req.n_layers;
  L.query_heads = req.query_heads_per_kv;
  const auto nq = quantized_tokens(req.pq, req.seq_len);
  L.n_windows = window_count(req.pq, nq);
  L.index_pages_per_stream = ceil_div(nq, L.codes_per_row);
  L.decode_pages_per_stream = ceil_div(req.seq_out, L.codes_per_row);
  L.staging_rows = ceil_div(static_cast<std::uint64_t>(req.seq_len) * L.sub_dim * 2 * 2, hw.row_buffer_bytes);

  const std::uint64_t slots = L.slots;
  const std::uint64_t cb = slots * L.n_layers * L.n_windows * 2 * L.sub_dim;
  const std::uint64_t idx = slots * L.n_layers * 2 * L.index_pages_per_stream;
  const std::uint64_t tables = slots * L.query_heads * std::max(L.n_windows, 1u);
  const std::uint64_t per_slot_scratch =
      std::max<std::uint64_t>(L.staging_rows, static_cast<std::uint64_t>(L.n_layers) * 2 * L.decode_pages_per_stream);
  const std::uint64_t buf = tables + slots * per_slot_scratch;
  const std::uint64_t total = cb + idx + buf;
  if (total > hw.rows_per_bank)
    throw Error("capacity-exceeded", "bank rows exhausted: codebook " + std::to_string(cb) + " + index " +
                                         std::to_string(idx) + " + buffer " + std::to_string(buf) + " = " +
                                         std::to_string(total) + " > " + std::to_string(hw.rows_per_bank));
  L.codebook_region = {0, static_cast<std::uint32_t>(cb)};
  L.index_region = {L.codebook_region.end, static_cast<std::uint32_t>(cb + idx)};
  L.buffer_region = {L.index_region.end, static_cast<std::uint32_t>(total)};
  return L;
}

}  // namespace aqpim
