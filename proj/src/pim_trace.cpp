// SPDX-License-Identifier: Apache-2.0
#include "aqpim/error.hpp"
#include "aqpim/pim_sim.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <set>

namespace aqpim {

namespace {

std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

struct SlotEntry {
  std::uint32_t bank = 0;  // within the channel
  BankSlot slot;
};

// [channel][slot] -> banks busy at that slot.
using ChannelSlots = std::vector<std::vector<std::vector<SlotEntry>>>;

ChannelSlots channel_slots(const TraceContext& ctx) {
  const auto& hw = ctx.hw;
  const auto& p = ctx.placement;
  const auto per_hbm = hw.banks_per_hbm();
  std::vector<std::uint32_t> fill(per_hbm, 0);
  ChannelSlots out(hw.channels_per_hbm);
  for (std::uint32_t u = 0; u < p.n_units; ++u) {
    if (p.unit_hbm[u] != ctx.hbm) continue;
    for (std::uint32_t s = 0; s < p.m; ++s) {
      const auto id = p.unit_banks[u][s];
      const auto c = id / hw.banks_per_channel;
      const auto slot = fill[id]++;
      auto& per_slot = out[c];
      if (per_slot.size() <= slot) per_slot.resize(slot + 1);
      per_slot[slot].push_back({id % hw.banks_per_channel, {u, s}});
    }
  }
  return out;
}

std::uint64_t mask_of(const std::vector<SlotEntry>& e) {
  std::uint64_t m = 0;
  for (const auto& x : e) m |= 1ULL << x.bank;
  return m;
}

std::uint32_t distinct_units(const std::vector<SlotEntry>& e) {
  std::set<std::uint32_t> u;
  for (const auto& x : e) u.insert(x.slot.unit);
  return static_cast<std::uint32_t>(u.size());
}

// Units whose last subvector sits here; the stack-wide softmax is charged to them.
std::uint32_t home_units(const std::vector<SlotEntry>& e, std::uint32_t m) {
  return static_cast<std::uint32_t>(
      std::count_if(e.begin(), e.end(), [m](const SlotEntry& x) { return x.slot.subvector == m - 1; }));
}

class Emitter {
 public:
  Emitter(CommandTrace& t, std::uint32_t hbm, std::uint32_t channel, std::uint32_t layer)
      : t_(t), hbm_(hbm), channel_(channel), layer_(layer) {}

  std::uint64_t mask = 0;
  Stage stage = Stage::transfer;
  std::uint32_t window = 0;
  std::uint8_t stream = 2;

  PimCommand& emit(Opcode op, Role role) {
    PimCommand c;
    c.op = op;
    c.role = role;
    c.stage = stage;
    c.hbm = c.dst_hbm = hbm_;
    c.channel = channel_;
    c.bank_mask = mask;
    c.window = window;
    c.stream = stream;
    c.layer = layer_;
    t_.commands.push_back(c);
    return t_.commands.back();
  }
  PimCommand& act(RowSpace sp, std::uint32_t row, Role role) {
    auto& c = emit(Opcode::ACT_AB, role);
    c.space = sp;
    c.row = row;
    return c;
  }
  PimCommand& pre(RowSpace sp, std::uint32_t row, Role role) {
    auto& c = emit(Opcode::PRE, role);
    c.space = sp;
    c.row = row;
    return c;
  }
  PimCommand& col(Opcode op, RowSpace sp, std::uint32_t row, std::uint64_t repeat, std::uint64_t bytes,
                  std::uint64_t macs, Role role) {
    auto& c = emit(op, role);
    c.space = sp;
    c.row = row;
    c.repeat = repeat;
    c.bytes = bytes;
    c.macs = macs;
    return c;
  }
  PimCommand& mv(Opcode op, std::uint64_t bytes, Role role, bool sync = false) {
    auto& c = emit(op, role);
    c.bytes = bytes;
    c.sync = sync;
    return c;
  }
  PimCommand& sfm(std::uint64_t ops, std::uint64_t repeat, Role role, std::uint32_t barrier, bool sync = true) {
    auto& c = emit(Opcode::SFM, role);
    c.ops = ops;
    c.repeat = repeat;
    c.barrier = barrier;
    c.sync = sync;
    return c;
  }

 private:
  CommandTrace& t_;
  std::uint32_t hbm_, channel_, layer_;
};

// Quantized-token window bounds, in quantized-token coordinates.
std::vector<std::pair<std::uint32_t, std::uint32_t>> window_bounds(const PqConfig& pq, std::uint32_t n_windows,
                                                                     std::uint32_t nq_prefill, std::uint32_t nq) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> w;
  for (std::uint32_t i = 0; i < n_windows; ++i) {
    const std::uint32_t b = pq.window_len == 0 ? 0 : i * pq.window_len;
    std::uint32_t e = pq.window_len == 0 ? nq_prefill : std::min(nq_prefill, (i + 1) * pq.window_len);
    if (i + 1 == n_windows) e = nq;  // evicted decode tokens join the last window
    w.emplace_back(std::min(b, nq), std::min(e, nq));
  }
  return w;
}

// Splits quantized tokens [a, b) of one stream into per-page chunks.
template <typename F>
void for_each_page(const MemoryLayout& L, std::uint32_t slot, std::uint32_t layer, std::uint32_t stream,
                   std::uint32_t nq_prefill, std::uint32_t a, std::uint32_t b, F&& f) {
  const auto cpr = L.codes_per_row;
  std::uint32_t i = a;
  while (i < b) {
    std::uint32_t row, end;
    if (i < nq_prefill) {
      const auto page = i / cpr;
      row = L.index_row(slot, layer, stream, page);
      end = std::min({b, (page + 1) * cpr, nq_prefill});
    } else {
      const auto page = (i - nq_prefill) / cpr;
      if (page >= L.decode_pages_per_stream)
        throw Error("capacity-exceeded", "decode index pages exceed the buffer region");
      row = L.decode_index_row(slot, layer, stream, page);
      end = std::min(b, nq_prefill + (page + 1) * cpr);
    }
    f(row, end - i);
    i = end;
  }
}

CommandTrace new_trace(const TraceContext& ctx, Phase phase) {
  CommandTrace t;
  t.phase = phase;
  t.workload = ctx.wl.to_json();
  return t;
}

}  // namespace

std::string Workload::to_json() const {
  nlohmann::ordered_json j{{"n_layers", model.n_layers}, {"n_heads", model.n_heads},   {"n_kv_heads", model.n_kv_heads},
                           {"head_dim", model.head_dim}, {"d_model", model.d_model},   {"d_ff", model.d_ff},
                           {"vocab", model.vocab},       {"batch", batch},             {"seq_in", seq_in},
                           {"seq_out", seq_out}};
  return j.dump();
}

TraceContext make_trace_context(const Workload& wl, const PqConfig& pq, const PimConfig& hw) {
  TraceContext ctx;
  ctx.wl = wl;
  ctx.pq = pq;
  ctx.hw = hw;
  ctx.placement = plan_placement(wl.model, pq, wl.batch, hw);
  ctx.hbm = ctx.placement.busiest_hbm();
  LayoutRequest req;
  req.pq = pq;
  req.head_dim = wl.model.head_dim;
  req.seq_len = wl.seq_in;
  req.seq_out = wl.seq_out;
  req.n_layers = wl.model.n_layers;
  req.slots_per_bank = ctx.placement.max_slots_per_bank(hw);
  req.query_heads_per_kv = wl.model.group_size();
  ctx.layout = allocate(req, hw);
  return ctx;
}

CommandTrace trace_codebook_generation(const TraceContext& ctx, std::uint32_t layer) {
  const auto& hw = ctx.hw;
  const auto& pq = ctx.pq;
  const auto& L = ctx.layout;
  const auto sd = L.sub_dim;
  const auto N = ctx.wl.seq_in;
  const auto nq = quantized_tokens(pq, N);
  const auto bursts_per_row = hw.row_buffer_bytes / hw.column_bytes;
  const auto windows = window_bounds(pq, L.n_windows, nq, nq);
  CommandTrace t = new_trace(ctx, Phase::PrefillCluster);
  const auto slots = channel_slots(ctx);

  for (std::uint32_t c = 0; c < hw.channels_per_hbm; ++c) {
    if (slots[c].empty()) continue;
    Emitter e(t, ctx.hbm, c, layer);
    e.emit(Opcode::SET_CONFIG, Role::Config);
    for (std::uint32_t r = 0; r < slots[c].size(); ++r) {
      const auto& entries = slots[c][r];
      e.mask = mask_of(entries);
      const std::uint64_t nb = entries.size();
      e.stage = Stage::transfer;
      e.window = 0;
      e.stream = 2;
      if (L.staging_rows > 0) {
        auto& w = e.col(Opcode::WR, RowSpace::Primary, L.staging_row(r, 0), bursts_per_row,
                        nb * N * sd * 4ULL, 0, Role::Data);
        w.stream_rows = L.staging_rows;
      }
      if (pq.iters == 0 || nq == 0) continue;
      for (std::uint32_t wi = 0; wi < windows.size(); ++wi) {
        const std::uint64_t Nw = windows[wi].second - windows[wi].first;
        const std::uint64_t kw = std::min<std::uint64_t>(pq.k, Nw);
        e.window = wi;
        for (std::uint8_t s = 0; s < 2; ++s) {
          e.stream = s;
          for (std::uint32_t it = 0; it < pq.iters; ++it) {
            e.stage = Stage::cluster_dc;
            e.col(Opcode::MAC_AB, RowSpace::None, 0, ceil_div(Nw * kw * sd, hw.bankpe_lanes), 0, nb * Nw * kw * sd,
                  Role::Distance)
                .sync = true;
            e.mv(Opcode::MV_BA, nb * Nw * kw * 2, Role::Distance);
            e.stage = Stage::cluster_ca;
            e.sfm(nb * Nw * kw, Nw, Role::Assign, 0);
            e.mv(Opcode::MV_BF, nb * Nw * 2, Role::Assign, true);
            e.stage = Stage::cluster_cc;
            e.col(Opcode::MAC_AB, RowSpace::None, 0, Nw * ceil_div(sd, hw.bankpe_lanes), 0, nb * Nw * sd,
                  Role::Centroid)
                .sync = true;
            e.mv(Opcode::MV_BA, nb * kw * 2, Role::Centroid, true);
            e.sfm(nb * kw, kw, Role::Centroid, 0);
            e.mv(Opcode::MV_BF, nb * kw * 2, Role::Centroid, true);
            e.col(Opcode::MAC_AB, RowSpace::None, 0, ceil_div(kw * sd, hw.bankpe_lanes), 0, nb * kw * sd,
                  Role::Centroid)
                .sync = true;
          }
          e.stage = Stage::cluster_cc;
          for (std::uint32_t ch = 0; ch < sd; ++ch) {
            const auto row = L.codebook_row(r, layer, wi, s, ch);
            e.act(RowSpace::Primary, row, Role::Codebook);
            e.col(Opcode::WR, RowSpace::Primary, row, ceil_div(kw * 2, hw.column_bytes), nb * kw * 2, 0,
                  Role::Codebook);
            e.pre(RowSpace::Primary, row, Role::Codebook);
          }
          for_each_page(L, r, layer, s, nq, windows[wi].first, windows[wi].second,
                        [&](std::uint32_t row, std::uint32_t cnt) {
                          const auto bytes = ceil_div(static_cast<std::uint64_t>(cnt) * L.index_bits, 8);
                          e.act(RowSpace::Aux, row, Role::Index);
                          e.col(Opcode::WR, RowSpace::Aux, row, ceil_div(bytes, hw.column_bytes), nb * bytes, 0,
                                Role::Index);
                          e.pre(RowSpace::Aux, row, Role::Index);
                        });
        }
      }
    }
  }
  return t;
}

CommandTrace trace_decode_attention(const TraceContext& ctx, GatherSite site, std::uint32_t context_tokens,
                                    std::uint32_t layer) {
  const auto& hw = ctx.hw;
  const auto& pq = ctx.pq;
  const auto& L = ctx.layout;
  const auto sd = L.sub_dim;
  const std::uint64_t N = context_tokens;
  const auto m = pq.m;
  const auto g = ctx.wl.model.group_size();
  const auto lanes = hw.bankpe_lanes;
  const auto colB = hw.column_bytes;
  const auto nq_pre = quantized_tokens(pq, ctx.wl.seq_in);
  const auto nq = quantized_tokens(pq, context_tokens);
  const std::uint64_t fp = N - nq;
  if (nq > 0 && L.n_windows == 0) throw Error("no-codebook", "quantized tokens at decode but no prefill windows");
  const auto windows = window_bounds(pq, L.n_windows, std::min(nq_pre, nq), nq);
  CommandTrace t = new_trace(ctx, Phase::DecodeStep);
  const auto slots = channel_slots(ctx);

  for (std::uint32_t c = 0; c < hw.channels_per_hbm; ++c) {
    Emitter e(t, ctx.hbm, c, layer);
    for (std::uint32_t r = 0; r < slots[c].size(); ++r) {
      const auto& entries = slots[c][r];
      e.mask = mask_of(entries);
      const std::uint64_t nb = entries.size();
      const std::uint64_t units = distinct_units(entries);
      const std::uint64_t home = home_units(entries, m);
      for (std::uint32_t h = 0; h < g; ++h) {
        e.window = 0;
        e.stream = 2;
        e.stage = Stage::transfer;
        e.col(Opcode::WR, RowSpace::None, 0, ceil_div(sd * 2, colB), nb * sd * 2, 0, Role::Query);

        // Inner-product tables, one per window (constant in N).
        e.stage = Stage::atnk;
        e.stream = 0;
        for (std::uint32_t w = 0; w < windows.size() && nq > 0; ++w) {
          e.window = w;
          for (std::uint32_t ch = 0; ch < sd; ++ch) {
            const auto row = L.codebook_row(r, layer, w, 0, ch);
            e.act(RowSpace::Primary, row, Role::Codebook);
            e.col(Opcode::MAC_AB, RowSpace::Primary, row, ceil_div(pq.k * 2ULL, colB), 0, nb * pq.k, Role::Codebook);
            e.pre(RowSpace::Primary, row, Role::Codebook);
          }
          const auto trow = L.table_row(r, h, w);
          e.act(RowSpace::Primary, trow, Role::Table);
          e.col(Opcode::WR, RowSpace::Primary, trow, ceil_div(pq.k * 2ULL, colB), nb * pq.k * 2, 0, Role::Table);
          e.pre(RowSpace::Primary, trow, Role::Table);
        }
        if (fp > 0) {
          e.window = 0;
          e.col(Opcode::MAC_AB, RowSpace::None, 0, ceil_div(fp * sd, lanes), 0, nb * fp * sd, Role::Score);
          e.mv(Opcode::MV_BA, nb * fp * 2, Role::Score);
        }

        // Key lookups.
        e.stage = Stage::retrieval;
        for (std::uint32_t w = 0; w < windows.size() && nq > 0; ++w) {
          e.window = w;
          const auto trow = L.table_row(r, h, w);
          e.act(RowSpace::Primary, trow, Role::KeyLookup);
          if (site == GatherSite::BufferPe) {
            auto& mvt = e.mv(Opcode::MV_BA, nb * pq.k * 2, Role::KeyLookup);
            mvt.space = RowSpace::Primary;
            mvt.row = trow;
            e.pre(RowSpace::Primary, trow, Role::KeyLookup);
          }
          for_each_page(L, r, layer, 0, nq_pre, windows[w].first, windows[w].second,
                        [&](std::uint32_t row, std::uint32_t cnt) {
                          e.act(RowSpace::Aux, row, Role::Index);
                          if (site == GatherSite::BankPe) {
                            auto& ret = e.col(Opcode::RET, RowSpace::Primary, trow, ceil_div(cnt, lanes),
                                              nb * cnt * 2ULL, 0, Role::KeyLookup);
                            ret.col = row;
                            e.pre(RowSpace::Aux, row, Role::Index);
                            e.mv(Opcode::MV_BA, nb * cnt * 2ULL, Role::Score);
                          } else {
                            auto& mvi = e.mv(Opcode::MV_BA, nb * cnt * 2ULL, Role::Index);
                            mvi.space = RowSpace::Aux;
                            mvi.row = row;
                            e.pre(RowSpace::Aux, row, Role::Index);
                            e.sfm(nb * cnt, cnt, Role::Gather, 0, false);
                          }
                        });
          if (site == GatherSite::BankPe) e.pre(RowSpace::Primary, trow, Role::KeyLookup);
        }

        // Softmax over the whole context at the buffer die, then broadcast.
        e.stage = Stage::sfm;
        e.window = 0;
        e.stream = 2;
        e.sfm(home * (N * 5 + static_cast<std::uint64_t>(nq) * (m - 1)), N, Role::Score, 1 + r * g + h);
        e.mv(Opcode::MV_BF, units * N * 2, Role::Score, true);

        // Values. BankPE: RET scatter-accumulates each token's probability
        // into a k-entry row (reusing the window's table row), then one MAC
        // pass over the value codebook rows. BufferPE: every codebook row is
        // shipped to the buffer die, gathered per token and sent back.
        e.stage = Stage::atnv;
        e.stream = 1;
        for (std::uint32_t w = 0; w < windows.size() && nq > 0; ++w) {
          e.window = w;
          if (site == GatherSite::BankPe) {
            const auto hrow = L.table_row(r, h, w);
            e.act(RowSpace::Primary, hrow, Role::ValueLookup);
            for_each_page(L, r, layer, 1, nq_pre, windows[w].first, windows[w].second,
                          [&](std::uint32_t irow, std::uint32_t cnt) {
                            e.act(RowSpace::Aux, irow, Role::Index);
                            auto& ret = e.col(Opcode::RET, RowSpace::Primary, hrow, ceil_div(cnt, lanes), 0, 0,
                                              Role::ValueLookup);
                            ret.col = irow;
                            e.pre(RowSpace::Aux, irow, Role::Index);
                          });
            e.pre(RowSpace::Primary, hrow, Role::ValueLookup);
            for (std::uint32_t ch = 0; ch < sd; ++ch) {
              const auto row = L.codebook_row(r, layer, w, 1, ch);
              e.act(RowSpace::Primary, row, Role::Codebook);
              e.col(Opcode::MAC_AB, RowSpace::Primary, row, ceil_div(pq.k * 2ULL, colB), 0, nb * pq.k,
                    Role::Codebook);
              e.pre(RowSpace::Primary, row, Role::Codebook);
            }
            continue;
          }
          for (std::uint32_t ch = 0; ch < sd; ++ch) {
            const auto row = L.codebook_row(r, layer, w, 1, ch);
            e.act(RowSpace::Primary, row, Role::ValueLookup);
            auto& mvr = e.mv(Opcode::MV_BA, nb * pq.k * 2, Role::ValueLookup);
            mvr.space = RowSpace::Primary;
            mvr.row = row;
            e.pre(RowSpace::Primary, row, Role::ValueLookup);
            for_each_page(L, r, layer, 1, nq_pre, windows[w].first, windows[w].second,
                          [&](std::uint32_t irow, std::uint32_t cnt) {
                            e.act(RowSpace::Aux, irow, Role::Index);
                            auto& mvi = e.mv(Opcode::MV_BA, nb * cnt * 2ULL, Role::Index);
                            mvi.space = RowSpace::Aux;
                            mvi.row = irow;
                            e.pre(RowSpace::Aux, irow, Role::Index);
                            e.sfm(nb * cnt, cnt, Role::Gather, 0, false);
                            e.mv(Opcode::MV_BF, nb * cnt * 2ULL, Role::Gather, true);
                            e.col(Opcode::MAC_AB, RowSpace::None, 0, ceil_div(cnt, lanes), 0, nb * cnt,
                                  Role::ValueLookup);
                          });
          }
        }
        if (fp > 0) {
          e.window = 0;
          e.col(Opcode::MAC_AB, RowSpace::None, 0, ceil_div(fp * sd, lanes), 0, nb * fp * sd, Role::ValueLookup);
        }

        e.stage = Stage::transfer;
        e.stream = 2;
        e.col(Opcode::RD, RowSpace::None, 0, ceil_div(sd * 2, colB), nb * sd * 2, 0, Role::Output).sync = true;
      }

      // The token leaving the recent window gets its codes appended.
      if (nq > nq_pre) {
        e.stage = Stage::transfer;
        e.window = static_cast<std::uint32_t>(windows.size() - 1);
        for (std::uint8_t s = 0; s < 2; ++s) {
          e.stream = s;
          for_each_page(L, r, layer, s, nq_pre, nq - 1, nq, [&](std::uint32_t row, std::uint32_t) {
            e.act(RowSpace::Aux, row, Role::Index);
            e.col(Opcode::WR, RowSpace::Aux, row, 1, nb * 2, 0, Role::Index);
            e.pre(RowSpace::Aux, row, Role::Index);
          });
        }
      }
    }
  }
  return t;
}

CommandTrace trace_raw_attention(const TraceContext& ctx, std::uint32_t context_tokens) {
  const auto& hw = ctx.hw;
  const auto d = ctx.wl.model.head_dim;
  const auto m = ctx.pq.m;
  const auto g = ctx.wl.model.group_size();
  const auto colB = hw.column_bytes;
  const std::uint64_t N = context_tokens;
  const std::uint64_t shard = ceil_div(N, m);  // tokens per bank slot
  const auto kv_rows = static_cast<std::uint32_t>(ceil_div(shard * d * 2, hw.row_buffer_bytes));
  const auto bursts_per_row = hw.row_buffer_bytes / colB;
  CommandTrace t = new_trace(ctx, Phase::DecodeStep);
  const auto slots = channel_slots(ctx);
  for (std::uint32_t c = 0; c < hw.channels_per_hbm; ++c) {
    Emitter e(t, ctx.hbm, c, 0);
    for (std::uint32_t r = 0; r < slots[c].size(); ++r) {
      const auto& entries = slots[c][r];
      e.mask = mask_of(entries);
      const std::uint64_t nb = entries.size();
      const std::uint64_t units = distinct_units(entries);
      const std::uint64_t home = home_units(entries, m);
      const std::uint32_t key_base = r * 2 * kv_rows;
      if (static_cast<std::uint64_t>(key_base) + 2ULL * kv_rows > hw.rows_per_bank)
        throw Error("capacity-exceeded", "raw KV does not fit the bank rows");
      for (std::uint32_t h = 0; h < g; ++h) {
        e.stage = Stage::transfer;
        e.col(Opcode::WR, RowSpace::None, 0, ceil_div(d * 2ULL, colB), nb * d * 2, 0, Role::Query);
        if (kv_rows > 0) {
          e.stage = Stage::atnk;
          e.stream = 0;
          e.col(Opcode::MAC_AB, RowSpace::Primary, key_base, bursts_per_row, 0, nb * shard * d, Role::Data)
              .stream_rows = kv_rows;
          e.mv(Opcode::MV_BA, nb * shard * 2, Role::Score);
        }
        e.stage = Stage::sfm;
        e.stream = 2;
        e.sfm(home * N * 5, N, Role::Score, 1 + r * g + h);
        e.mv(Opcode::MV_BF, units * N * 2, Role::Score, true);
        if (kv_rows > 0) {
          e.stage = Stage::atnv;
          e.stream = 1;
          e.col(Opcode::MAC_AB, RowSpace::Primary, key_base + kv_rows, bursts_per_row, 0, nb * shard * d, Role::Data)
              .stream_rows = kv_rows;
          e.mv(Opcode::MV_BA, nb * d * 2, Role::Output, true);
          e.sfm(nb * d, d, Role::Output, 0);
        }
        e.stage = Stage::transfer;
        e.stream = 2;
        e.col(Opcode::RD, RowSpace::None, 0, ceil_div(d * 2ULL, colB), units * d * 2, 0, Role::Output).sync = true;
      }
    }
  }
  return t;
}

std::vector<std::uint64_t> key_lookup_acts_per_bank(const CommandTrace& trace, const PimConfig& hw) {
  std::vector<std::uint64_t> acts(static_cast<std::size_t>(hw.n_hbms) * hw.banks_per_hbm(), 0);
  for (const auto& c : trace.commands) {
    if (c.op != Opcode::ACT_AB || c.role != Role::KeyLookup) continue;
    for (std::uint32_t b = 0; b < hw.banks_per_channel; ++b)
      if (c.bank_mask >> b & 1ULL)
        ++acts[static_cast<std::size_t>(c.hbm) * hw.banks_per_hbm() + c.channel * hw.banks_per_channel + b];
  }
  return acts;
}

}  // namespace aqpim
