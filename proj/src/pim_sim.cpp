// SPDX-License-Identifier: Apache-2.0
#include "aqpim/pim_sim.hpp"

#include "aqpim/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <limits>
#include <map>
#include <sstream>

namespace aqpim {

namespace {

constexpr std::array<const char*, kStageCount> kStageNames = {
    "qkv_gen", "transfer", "atnk",     "sfm",      "atnv", "retrieval", "cluster_dc",
    "cluster_ca", "cluster_cc", "ffn_gpu", "proj_gpu", "pcie", "attn_gpu"};

std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

bool is_column(Opcode op) {
  return op == Opcode::RD || op == Opcode::WR || op == Opcode::MAC_AB || op == Opcode::RET;
}

std::string where(std::size_t i, const PimCommand& c) {
  return "command #" + std::to_string(i) + " (" + to_string(c.op) + ", hbm " + std::to_string(c.hbm) + " channel " +
         std::to_string(c.channel) + ")";
}

}  // namespace

std::string to_string(Opcode op) {
  switch (op) {
    case Opcode::SET_CONFIG: return "SET_CONFIG";
    case Opcode::ACT_AB: return "ACT_AB";
    case Opcode::MAC_AB: return "MAC_AB";
    case Opcode::SFM: return "SFM";
    case Opcode::RET: return "RET";
    case Opcode::MV_BA: return "MV_BA";
    case Opcode::MV_BF: return "MV_BF";
    case Opcode::RD: return "RD";
    case Opcode::WR: return "WR";
    case Opcode::PRE: return "PRE";
  }
  return "?";
}

std::string to_string(Stage s) { return kStageNames[static_cast<std::size_t>(s)]; }

Stage stage_from_string(const std::string& s) {
  for (std::size_t i = 0; i < kStageCount; ++i)
    if (s == kStageNames[i]) return static_cast<Stage>(i);
  throw Error("invalid-config", "unknown stage '" + s + "'");
}

std::string to_string(Role r) {
  switch (r) {
    case Role::Config: return "config";
    case Role::Data: return "data";
    case Role::Query: return "query";
    case Role::Codebook: return "codebook";
    case Role::Table: return "table";
    case Role::KeyLookup: return "key-lookup";
    case Role::ValueLookup: return "value-lookup";
    case Role::Index: return "index";
    case Role::Score: return "score";
    case Role::Output: return "output";
    case Role::Distance: return "distance";
    case Role::Assign: return "assign";
    case Role::Centroid: return "centroid";
    case Role::Gather: return "gather";
  }
  return "?";
}

std::string to_string(Phase p) { return p == Phase::PrefillCluster ? "prefill-cluster" : "decode-step"; }

std::string to_string(GatherSite g) { return g == GatherSite::BankPe ? "bankpe" : "bufferpe"; }

GatherSite gather_site_from_string(const std::string& s) {
  if (s == "bankpe") return GatherSite::BankPe;
  if (s == "bufferpe") return GatherSite::BufferPe;
  throw Error("invalid-config", "unknown value gather site '" + s + "'");
}

std::uint32_t CommandTrace::n_banks_in(const PimCommand& c) const {
  return static_cast<std::uint32_t>(std::popcount(c.bank_mask));
}

// ----------------------------------------------------------------- protocol

namespace {

struct OpenRow {
  bool open = false;
  std::uint32_t row = 0;
};

std::size_t space_slot(RowSpace s) { return s == RowSpace::Aux ? 1 : 0; }

}  // namespace

void check_protocol(const CommandTrace& trace, const PimConfig& hw) {
  const std::size_t n_channels = static_cast<std::size_t>(hw.n_hbms) * hw.channels_per_hbm;
  std::vector<std::array<OpenRow, 2>> rows(n_channels * hw.banks_per_channel);
  const std::uint64_t legal_mask =
      hw.banks_per_channel >= 64 ? ~0ULL : ((1ULL << hw.banks_per_channel) - 1);
  auto fail = [](std::size_t i, const PimCommand& c, const std::string& what) {
    throw Error("protocol-violation", where(i, c) + ": " + what);
  };
  for (std::size_t i = 0; i < trace.commands.size(); ++i) {
    const auto& c = trace.commands[i];
    if (c.hbm >= hw.n_hbms || c.channel >= hw.channels_per_hbm) fail(i, c, "channel out of range");
    if (c.bank_mask & ~legal_mask) fail(i, c, "bank mask out of range");
    const bool banked = c.op != Opcode::SFM && c.op != Opcode::SET_CONFIG && c.op != Opcode::MV_BF;
    if (banked && c.bank_mask == 0) fail(i, c, "empty bank mask");
    if ((c.op == Opcode::ACT_AB || c.op == Opcode::PRE || c.op == Opcode::RET) && c.space == RowSpace::None)
      fail(i, c, "row command without a row space");
    if (c.space == RowSpace::None) continue;
    const std::size_t base = (static_cast<std::size_t>(c.hbm) * hw.channels_per_hbm + c.channel) * hw.banks_per_channel;
    for (std::uint32_t b = 0; b < hw.banks_per_channel; ++b) {
      if (!(c.bank_mask >> b & 1ULL)) continue;
      auto& st = rows[base + b][space_slot(c.space)];
      if (c.row >= hw.rows_per_bank || static_cast<std::uint64_t>(c.row) + c.stream_rows > hw.rows_per_bank)
        fail(i, c, "row out of range");
      if (c.op == Opcode::ACT_AB) {
        if (st.open) fail(i, c, "ACT to bank " + std::to_string(b) + " with row " + std::to_string(st.row) + " open");
        st = {true, c.row};
      } else if (c.op == Opcode::PRE) {
        if (!st.open) fail(i, c, "PRE to bank " + std::to_string(b) + " with no open row");
        st.open = false;
      } else if (c.stream_rows > 0) {
        if (st.open) fail(i, c, "row stream into bank " + std::to_string(b) + " with a row open");
      } else if (is_column(c.op) || c.op == Opcode::MV_BA) {
        if (c.op == Opcode::RET && !rows[base + b][1].open)
          fail(i, c, "RET in bank " + std::to_string(b) + " without an open index page");
        if (!st.open) fail(i, c, "column access to bank " + std::to_string(b) + " without an open row");
        if (st.row != c.row)
          fail(i, c, "row " + std::to_string(c.row) + " accessed while row " + std::to_string(st.row) + " is open");
      }
    }
  }
}

// ---------------------------------------------------------------- simulate

namespace {

struct SpaceState {
  bool open = false;
  std::uint64_t act_time = 0;
  std::uint64_t ready_act = 0;
};

struct BankState {
  std::array<SpaceState, 2> sp;
  std::uint64_t col_ready = 0;
};

struct ChannelState {
  std::vector<std::size_t> queue;
  std::size_t pos = 0;
  std::uint64_t prev_start = 0;
  std::uint64_t done = 0;
  std::optional<std::uint64_t> last_act;
  std::uint64_t tsv_free = 0;
  std::vector<std::uint64_t> group_ready;
  bool blocked = false;
};

struct Barrier {
  std::uint32_t participants = 0;
  std::vector<std::size_t> arrived;  // command indices
  std::uint64_t latest = 0;
  std::uint64_t ops = 0;
};

double union_length(std::vector<std::pair<std::uint64_t, std::uint64_t>>& iv) {
  std::sort(iv.begin(), iv.end());
  double total = 0.0;
  std::uint64_t cur_b = 0, cur_e = 0;
  bool have = false;
  for (const auto& [b, e] : iv) {
    if (e <= b) continue;
    if (!have || b > cur_e) {
      if (have) total += static_cast<double>(cur_e - cur_b);
      cur_b = b;
      cur_e = e;
      have = true;
    } else {
      cur_e = std::max(cur_e, e);
    }
  }
  if (have) total += static_cast<double>(cur_e - cur_b);
  return total;
}

}  // namespace

SimResult simulate_timeline(const CommandTrace& trace, const PimConfig& hw) {
  hw.validate();
  check_protocol(trace, hw);
  const auto& T = hw.timings;
  const auto& E = hw.energies;
  const std::size_t n_channels = static_cast<std::size_t>(hw.n_hbms) * hw.channels_per_hbm;
  const std::uint32_t groups = hw.banks_per_channel / hw.banks_per_group;

  std::vector<ChannelState> ch(n_channels);
  for (auto& c : ch) c.group_ready.assign(groups, 0);
  std::vector<BankState> banks(n_channels * hw.banks_per_channel);
  std::vector<std::uint64_t> bufferpe_free(hw.n_hbms, 0);
  std::map<std::uint32_t, Barrier> barriers;

  const auto& cmds = trace.commands;
  for (std::size_t i = 0; i < cmds.size(); ++i) {
    const auto& c = cmds[i];
    ch[static_cast<std::size_t>(c.hbm) * hw.channels_per_hbm + c.channel].queue.push_back(i);
    if (c.op == Opcode::SFM && c.barrier != 0) ++barriers[c.barrier].participants;
  }

  SimResult res;
  res.issue.assign(cmds.size(), 0);
  res.done.assign(cmds.size(), 0);
  SimCounters& K = res.report.counters;
  std::array<std::vector<std::pair<std::uint64_t, std::uint64_t>>, kStageCount> stage_iv;
  std::vector<std::vector<std::pair<std::uint64_t, std::uint64_t>>> chan_iv(n_channels);

  auto finish = [&](std::size_t i, std::size_t chan, std::uint64_t start, std::uint64_t end, double energy) {
    const auto& c = cmds[i];
    res.issue[i] = start;
    res.done[i] = end;
    auto& cs = ch[chan];
    cs.prev_start = start;
    cs.done = std::max(cs.done, end);
    ++cs.pos;
    stage_iv[static_cast<std::size_t>(c.stage)].emplace_back(start, end);
    chan_iv[chan].emplace_back(start, end);
    res.report.energy(c.stage) += energy;
  };

  auto lower_bound = [&](const ChannelState& cs) {
    const auto& c = cmds[cs.queue[cs.pos]];
    return c.sync ? std::max(cs.prev_start, cs.done) : cs.prev_start;
  };

  for (;;) {
    std::size_t pick = n_channels;
    std::uint64_t best = std::numeric_limits<std::uint64_t>::max();
    bool pending = false;
    for (std::size_t k = 0; k < n_channels; ++k) {
      auto& cs = ch[k];
      if (cs.pos >= cs.queue.size()) continue;
      pending = true;
      if (cs.blocked) continue;
      const auto lb = lower_bound(cs);
      if (lb < best) {
        best = lb;
        pick = k;
      }
    }
    if (!pending) break;
    if (pick == n_channels) throw Error("protocol-violation", "SFM barrier can never complete");

    auto& cs = ch[pick];
    const std::size_t i = cs.queue[cs.pos];
    const auto& c = cmds[i];
    const std::uint64_t lb = best;
    const std::uint32_t nb = static_cast<std::uint32_t>(std::popcount(c.bank_mask));
    const std::size_t bank_base = pick * hw.banks_per_channel;
    auto for_banks = [&](auto&& f) {
      for (std::uint32_t b = 0; b < hw.banks_per_channel; ++b)
        if (c.bank_mask >> b & 1ULL) f(b, banks[bank_base + b]);
    };
    const std::size_t sp = space_slot(c.space);

    switch (c.op) {
      case Opcode::SET_CONFIG: {
        finish(i, pick, lb, lb + 1, 0.0);
        break;
      }
      case Opcode::ACT_AB: {
        std::uint64_t start = lb;
        if (cs.last_act) start = std::max(start, *cs.last_act + T.tRRD);
        for_banks([&](std::uint32_t, BankState& b) { start = std::max(start, b.sp[sp].ready_act); });
        for_banks([&](std::uint32_t, BankState& b) {
          b.sp[sp].open = true;
          b.sp[sp].act_time = start;
          b.col_ready = std::max(b.col_ready, start + T.tRCD);
        });
        cs.last_act = start;
        K.acts += nb;
        finish(i, pick, start, start + T.tRCD, nb * E.e_act);
        break;
      }
      case Opcode::PRE: {
        std::uint64_t start = lb;
        for_banks([&](std::uint32_t, BankState& b) {
          start = std::max({start, b.sp[sp].act_time + T.tRAS, b.col_ready});
        });
        for_banks([&](std::uint32_t, BankState& b) {
          b.sp[sp].open = false;
          b.sp[sp].ready_act = start + T.tRP;
        });
        finish(i, pick, start, start + T.tRP, 0.0);
        break;
      }
      case Opcode::RD:
      case Opcode::WR:
      case Opcode::MAC_AB:
      case Opcode::RET: {
        const std::uint64_t rows = std::max<std::uint64_t>(c.stream_rows, 1);
        const std::uint64_t bursts = c.repeat * rows * std::max<std::uint32_t>(nb, 1);
        std::uint64_t compute = 0;
        if (c.op == Opcode::MAC_AB && bursts > 0) compute = ceil_div(ceil_div(c.macs, bursts), hw.bankpe_lanes);
        const bool on_row = c.space != RowSpace::None;
        const std::uint64_t interval = on_row ? std::max<std::uint64_t>(T.tCCDL, compute) : std::max<std::uint64_t>(1, compute);
        const bool write = c.op == Opcode::WR;
        double energy = static_cast<double>(c.macs) * E.e_mac16;
        K.macs += c.macs;
        std::uint64_t start = lb, end = lb;
        if (c.stream_rows > 0) {
          if (cs.last_act) start = std::max(start, *cs.last_act + T.tRRD);
          for_banks([&](std::uint32_t, BankState& b) { start = std::max({start, b.sp[sp].ready_act, b.col_ready}); });
          const std::uint64_t per_row = std::max<std::uint64_t>(T.tRAS, T.tRCD + c.repeat * interval) + T.tRP;
          end = start + rows * per_row;
          for_banks([&](std::uint32_t, BankState& b) {
            b.col_ready = end;
            b.sp[sp].ready_act = end;
          });
          cs.last_act = end - per_row;
          K.acts += rows * nb;
          energy += static_cast<double>(rows * nb) * E.e_act;
        } else {
          for_banks([&](std::uint32_t bk, BankState& b) {
            start = std::max(start, b.col_ready);
            if (on_row) start = std::max(start, cs.group_ready[bk / hw.banks_per_group]);
          });
          const std::uint64_t last = start + (c.repeat > 0 ? (c.repeat - 1) * interval : 0);
          const bool read = !write && on_row;
          end = c.repeat == 0 ? start : (read ? last + T.tCL : last + interval);
          for_banks([&](std::uint32_t bk, BankState& b) {
            b.col_ready = c.repeat == 0 ? start : last + interval;
            if (on_row) cs.group_ready[bk / hw.banks_per_group] = last + T.tCCDL;
          });
        }
        if (on_row) {
          const std::uint64_t cols = c.repeat * rows * nb;
          if (write) {
            K.col_writes += cols;
            energy += static_cast<double>(cols) * E.e_wr_col;
          } else {
            K.col_reads += cols;
            energy += static_cast<double>(cols) * E.e_rd_col;
          }
        }
        finish(i, pick, start, end, energy);
        break;
      }
      case Opcode::MV_BA:
      case Opcode::MV_BF: {
        std::uint64_t start = std::max(lb, cs.tsv_free);
        const std::uint64_t tsv = ceil_div(c.bytes, hw.tsv_bytes_per_cycle);
        std::uint64_t bank_cycles = 0;
        double energy = static_cast<double>(c.bytes) * 8.0 * E.e_tsv_per_bit;
        if (c.space != RowSpace::None && nb > 0) {
          const std::uint64_t bursts = ceil_div(ceil_div(c.bytes, nb), hw.column_bytes);
          for_banks([&](std::uint32_t bk, BankState& b) {
            start = std::max({start, b.col_ready, cs.group_ready[bk / hw.banks_per_group]});
          });
          bank_cycles = bursts * T.tCCDL;
          for_banks([&](std::uint32_t bk, BankState& b) {
            b.col_ready = start + bank_cycles;
            cs.group_ready[bk / hw.banks_per_group] = start + bank_cycles;
          });
          K.col_reads += bursts * nb;
          energy += static_cast<double>(bursts * nb) * E.e_rd_col;
        }
        const std::uint64_t end = start + std::max<std::uint64_t>({tsv, bank_cycles, 1});
        cs.tsv_free = end;
        K.tsv_bytes += c.bytes;
        if (c.dst_hbm != c.hbm) K.inter_hbm_bytes += c.bytes;
        finish(i, pick, start, end, energy);
        break;
      }
      case Opcode::SFM: {
        if (c.barrier == 0) {
          const std::uint64_t start = std::max(lb, bufferpe_free[c.hbm]);
          const std::uint64_t end = start + std::max<std::uint64_t>(1, ceil_div(c.ops, hw.bufferpe_throughput));
          bufferpe_free[c.hbm] = end;
          K.bufferpe_ops += c.ops;
          finish(i, pick, start, end, static_cast<double>(c.ops) * E.e_bufferpe_op);
          break;
        }
        auto& bar = barriers[c.barrier];
        bar.arrived.push_back(i);
        bar.latest = std::max(bar.latest, lb);
        bar.ops += c.ops;
        cs.blocked = true;
        if (bar.arrived.size() < bar.participants) break;
        const std::uint64_t start = std::max(bar.latest, bufferpe_free[c.hbm]);
        const std::uint64_t end = start + std::max<std::uint64_t>(1, ceil_div(bar.ops, hw.bufferpe_throughput));
        bufferpe_free[c.hbm] = end;
        K.bufferpe_ops += bar.ops;
        for (auto j : bar.arrived) {
          const auto& cj = cmds[j];
          const std::size_t cj_chan = static_cast<std::size_t>(cj.hbm) * hw.channels_per_hbm + cj.channel;
          ch[cj_chan].blocked = false;
          finish(j, cj_chan, start, end, static_cast<double>(cj.ops) * E.e_bufferpe_op);
        }
        break;
      }
    }
  }

  auto& R = res.report;
  for (std::size_t s = 0; s < kStageCount; ++s) R.cycles_by_stage[s] = union_length(stage_iv[s]);
  std::uint64_t total = 0;
  for (auto d : res.done) total = std::max(total, d);
  R.cycles_total = static_cast<double>(total);
  R.tCK_ns = hw.timings.tCK_ns;
  res.channel_busy.resize(n_channels);
  for (std::size_t k = 0; k < n_channels; ++k)
    res.channel_busy[k] = static_cast<std::uint64_t>(union_length(chan_iv[k]));
  return res;
}

SimReport simulate(const CommandTrace& trace, const PimConfig& hw) { return simulate_timeline(trace, hw).report; }

void write_trace_dump(std::ostream& os, const CommandTrace& trace, const SimResult& tl) {
  for (std::size_t i = 0; i < trace.commands.size(); ++i) {
    const auto& c = trace.commands[i];
    std::ostringstream mask;
    mask << "0x" << std::hex << c.bank_mask;
    os << tl.issue.at(i) << '\t' << c.hbm * 1000 + c.channel << '\t' << mask.str() << '\t' << to_string(c.op) << '\t'
       << c.row << '\t' << c.col << '\t' << c.bytes << '\t' << to_string(c.stage) << '/' << to_string(c.role) << '\n';
  }
}

// ------------------------------------------------------------------ report

double SimReport::energy_total() const {
  double e = 0.0;
  for (auto v : energy_by_stage) e += v;
  return e;
}

std::string SimReport::to_json() const {
  nlohmann::ordered_json j;
  j["label"] = label;
  j["seq_in"] = seq_in;
  j["seq_out"] = seq_out;
  j["batch"] = batch;
  j["tCK_ns"] = tCK_ns;
  j["cycles_total"] = cycles_total;
  j["prefill_cycles"] = prefill_cycles;
  j["decode_step_cycles"] = decode_step_cycles;
  j["compression_factor"] = compression_factor;
  for (std::size_t s = 0; s < kStageCount; ++s) j["cycles_by_stage"][kStageNames[s]] = cycles_by_stage[s];
  for (std::size_t s = 0; s < kStageCount; ++s) j["energy_by_stage_pJ"][kStageNames[s]] = energy_by_stage[s];
  j["energy_total_pJ"] = energy_total();
  j["counters"] = {{"acts", counters.acts},
                   {"col_reads", counters.col_reads},
                   {"col_writes", counters.col_writes},
                   {"macs", counters.macs},
                   {"tsv_bytes", counters.tsv_bytes},
                   {"inter_hbm_bytes", counters.inter_hbm_bytes},
                   {"bufferpe_ops", counters.bufferpe_ops}};
  return j.dump(2);
}

std::string sim_report_csv_header() {
  std::string h = "label,seq_in,seq_out,batch,cycles_total,prefill_cycles,decode_step_cycles,compression_factor";
  for (auto n : kStageNames) h += std::string(",") + n;
  h += ",energy_total_pJ,acts,col_reads,col_writes,macs,tsv_bytes,inter_hbm_bytes,bufferpe_ops";
  return h;
}

std::string sim_report_csv_row(const SimReport& r) {
  std::ostringstream os;
  os.precision(12);
  os << r.label << ',' << r.seq_in << ',' << r.seq_out << ',' << r.batch << ',' << r.cycles_total << ','
     << r.prefill_cycles << ',' << r.decode_step_cycles << ',' << r.compression_factor;
  for (auto v : r.cycles_by_stage) os << ',' << v;
  const auto& k = r.counters;
  os << ',' << r.energy_total() << ',' << k.acts << ',' << k.col_reads << ',' << k.col_writes << ',' << k.macs << ','
     << k.tsv_bytes << ',' << k.inter_hbm_bytes << ',' << k.bufferpe_ops;
  return os.str();
}

}  // namespace aqpim
