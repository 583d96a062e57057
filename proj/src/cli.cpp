// SPDX-License-Identifier: Apache-2.0
#include "aqpim/cli.hpp"

#include "aqpim/error.hpp"
#include "aqpim/io.hpp"
#include "aqpim/kv_model.hpp"
#include "aqpim/pq_attention.hpp"
#include "aqpim/quantizer.hpp"
#include "aqpim/rng.hpp"
#include "aqpim/scenario.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

namespace aqpim {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

// Sub-stream tags derived from --seed.
enum SeedTag : std::uint64_t { kTagQuantize = 1, kTagSortK = 2, kTagSortV = 3, kTagQueries = 4, kTagSynthetic = 5 };

struct CommonArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string format;
  std::string dump;
};

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  const auto bytes = io::read_file(path);
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw Error("invalid-config", path + ": " + e.what());
  }
  require(j.is_object(), "invalid-config", path + ": top level must be a JSON object");
  return j;
}

void allow_keys(const json& j, std::initializer_list<const char*> keys) {
  const std::set<std::string> ok(keys.begin(), keys.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!ok.count(it.key())) throw Error("invalid-config", "unknown config key '" + it.key() + "'");
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error("invalid-config", std::string(key) + ": " + e.what());
  }
}

PqConfig pq_of(const json& j) { return j.contains("pq") ? PqConfig::from_json(j["pq"].dump()) : PqConfig{}; }
PimConfig hw_of(const json& j) { return j.contains("hw") ? PimConfig::from_json(j["hw"].dump()) : PimConfig{}; }

std::uint64_t need_seed(const CommonArgs& a) {
  if (!a.seed) throw Error("missing-seed", "--seed is required");
  return *a.seed;
}

fs::path need_out(const CommonArgs& a) {
  require(!a.out.empty(), "missing-out", "--out is required");
  fs::create_directories(a.out);
  return a.out;
}

std::string format_of(const CommonArgs& a, const char* fallback) {
  const std::string f = a.format.empty() ? fallback : a.format;
  require(f == "json" || f == "csv", "invalid-config", "--format must be json or csv");
  return f;
}

KvDump dump_of(const CommonArgs& a, const json& cfg) {
  const std::string path = a.dump.empty() ? get_or<std::string>(cfg, "dump", "") : a.dump;
  require(!path.empty(), "input-not-found", "no dump given (--dump or config \"dump\")");
  if (!fs::is_regular_file(path)) throw Error("input-not-found", "dump not found: " + path);
  return load_kv_dump(path);
}

std::vector<std::uint32_t> selection(const json& cfg, const char* key, std::uint32_t n) {
  std::vector<std::uint32_t> v;
  if (cfg.contains(key)) {
    v = get_or<std::vector<std::uint32_t>>(cfg, key, {});
    for (auto x : v) require(x < n, "invalid-config", std::string(key) + " entry out of range");
  } else {
    for (std::uint32_t i = 0; i < n; ++i) v.push_back(i);
  }
  require(!v.empty(), "invalid-config", std::string(key) + " must not be empty");
  return v;
}

// Key and value permutations for one head.
std::pair<ChannelPermutation, ChannelPermutation> permutations(const KvDump& d, std::uint32_t l, std::uint32_t h,
                                                               const PqConfig& pq, bool presort, std::uint64_t seed) {
  if (!presort) return {ChannelPermutation::identity(d.head_dim, pq.m), ChannelPermutation::identity(d.head_dim, pq.m)};
  return {sort_channels(d.key(l, h), pq.m, mix_keys(seed, {kTagSortK, l, h})),
          sort_channels(d.value(l, h), pq.m, mix_keys(seed, {kTagSortV, l, h}))};
}

CompressedKv compress(const KvDump& d, std::uint32_t l, std::uint32_t h, const PqConfig& pq, bool weighted,
                      const ChannelPermutation& pk, const ChannelPermutation& pv, std::size_t row_bytes) {
  if (weighted) return build_compressed_kv(d, l, h, pq, pk, pv, row_bytes);
  return build_compressed_kv(d.key(l, h), d.value(l, h), Vector::Ones(d.n_tokens), pq, pk, pv, row_bytes);
}

void emit(const CommonArgs& a, std::ostream& out, const std::string& name, const std::string& text) {
  if (a.out.empty()) {
    out << text;
    return;
  }
  fs::create_directories(a.out);
  io::write_text_atomic(fs::path(a.out) / name, text);
}

std::string fmt(double x) {
  std::ostringstream os;
  os.precision(9);
  os << x;
  return os.str();
}

const char* dtype_name(DType t) {
  switch (t) {
    case DType::F32: return "f32";
    case DType::F16: return "f16";
    case DType::BF16: return "bf16";
  }
  return "?";
}

DType dtype_from(const std::string& s) {
  if (s == "f32") return DType::F32;
  if (s == "f16") return DType::F16;
  if (s == "bf16") return DType::BF16;
  throw Error("invalid-config", "dtype must be f32, f16 or bf16");
}

// ------------------------------------------------------------------ commands

int cmd_quantize(const CommonArgs& a, std::ostream& out) {
  const auto cfg = load_config(a.config);
  allow_keys(cfg, {"dump", "pq", "presort", "weighted", "layers", "kv_heads", "row_buffer_bytes"});
  const auto seed = need_seed(a);
  const auto dir = need_out(a);
  format_of(a, "json");
  const auto dump = dump_of(a, cfg);
  auto pq = pq_of(cfg);
  pq.rng_seed = mix_keys(seed, {kTagQuantize});
  const bool presort = get_or(cfg, "presort", true);
  const bool weighted = get_or(cfg, "weighted", true);
  const auto row_bytes = get_or<std::uint32_t>(cfg, "row_buffer_bytes", kDefaultRowBufferBytes);

  ordered_json heads = ordered_json::array();
  double mse = 0.0, wmse = 0.0;
  std::size_t n = 0;
  for (auto l : selection(cfg, "layers", dump.n_layers)) {
    for (auto h : selection(cfg, "kv_heads", dump.n_kv_heads)) {
      const auto [pk, pv] = permutations(dump, l, h, pq, presort, seed);
      const auto ckv = compress(dump, l, h, pq, weighted, pk, pv, row_bytes);
      const auto err = quantization_error(dump, l, h, ckv);
      const auto name = "kv_L" + std::to_string(l) + "_H" + std::to_string(h) + ".aqpq";
      write_compressed_kv(ckv, dir / name);
      ordered_json obj, kobj = ordered_json::array(), vobj = ordered_json::array();
      for (const auto& w : ckv.key_codebook.windows) kobj.push_back(w.objective_per_iter);
      for (const auto& w : ckv.value_codebook.windows) vobj.push_back(w.objective_per_iter);
      obj["layer"] = l;
      obj["kv_head"] = h;
      obj["sidecar"] = name;
      obj["mse"] = err.mse;
      obj["weighted_mse"] = err.weighted_mse;
      obj["key_window_objectives"] = kobj;
      obj["value_window_objectives"] = vobj;
      obj["uniform_weights_assumed"] = ckv.uniform_weights_assumed;
      heads.push_back(obj);
      mse += err.mse;
      wmse += err.weighted_mse;
      ++n;
    }
  }
  ordered_json s;
  s["compression_factor"] = compression_factor(pq, dump.head_dim, dump.n_tokens);
  s["mse"] = mse / static_cast<double>(n);
  s["weighted_mse"] = wmse / static_cast<double>(n);
  s["presort"] = presort;
  s["weighted"] = weighted;
  s["seed"] = seed;
  s["config"] = ordered_json::parse(pq.to_json());
  s["heads"] = heads;
  io::write_text_atomic(dir / "summary.json", s.dump(2) + "\n");
  (void)out;
  return kExitOk;
}

int cmd_fidelity(const CommonArgs& a, std::ostream& out) {
  const auto cfg = load_config(a.config);
  allow_keys(cfg, {"dump", "pq", "arms", "seeds", "n_queries", "rounding", "layers", "kv_heads", "row_buffer_bytes"});
  const auto seed = need_seed(a);
  const auto format = format_of(a, "csv");
  const auto dump = dump_of(a, cfg);
  const auto base = pq_of(cfg);
  std::vector<FidelityArm> arms;
  for (const auto& s : get_or<std::vector<std::string>>(cfg, "arms", {"standard", "no-weighting", "no-presort", "full"}))
    arms.push_back(fidelity_arm_from_string(s));
  require(!arms.empty(), "invalid-config", "arms must not be empty");
  const auto n_seeds = get_or<std::uint32_t>(cfg, "seeds", 5);
  require(n_seeds > 0, "invalid-config", "seeds must be positive");
  const auto n_queries = get_or<std::uint32_t>(cfg, "n_queries", 32);
  const auto rounding = rounding_from_string(get_or<std::string>(cfg, "rounding", "exact32"));
  const auto row_bytes = get_or<std::uint32_t>(cfg, "row_buffer_bytes", kDefaultRowBufferBytes);
  const auto layers = selection(cfg, "layers", dump.n_layers);
  const auto kv_heads = selection(cfg, "kv_heads", dump.n_kv_heads);

  std::string csv = "arm,seed,score_l1,output_cos,weighted_mse,mse\n";
  ordered_json rows = ordered_json::array();
  for (const auto& arm : arms) {
    for (std::uint32_t i = 0; i < n_seeds; ++i) {
      const auto s = mix_keys(seed, {i});
      PqConfig pq = base;
      pq.rng_seed = mix_keys(s, {kTagQuantize});
      double l1 = 0.0, cos = 0.0, wmse = 0.0, mse = 0.0;
      std::size_t n = 0;
      for (auto l : layers) {
        for (auto h : kv_heads) {
          const auto [pk, pv] = permutations(dump, l, h, pq, arm.presort, s);
          const auto ckv = compress(dump, l, h, pq, arm.weighted, pk, pv, row_bytes);
          const auto f = attention_fidelity(dump, l, h, ckv, n_queries, mix_keys(s, {kTagQueries, l, h}), rounding);
          const auto e = quantization_error(dump, l, h, ckv);
          l1 += f.score_l1;
          cos += f.output_cos;
          wmse += e.weighted_mse;
          mse += e.mse;
          ++n;
        }
      }
      const double dn = static_cast<double>(n);
      csv += arm.name + ',' + std::to_string(i) + ',' + fmt(l1 / dn) + ',' + fmt(cos / dn) + ',' + fmt(wmse / dn) +
             ',' + fmt(mse / dn) + '\n';
      rows.push_back({{"arm", arm.name},
                      {"seed", i},
                      {"score_l1", l1 / dn},
                      {"output_cos", cos / dn},
                      {"weighted_mse", wmse / dn},
                      {"mse", mse / dn}});
    }
  }
  if (format == "csv") emit(a, out, "fidelity.csv", csv);
  else emit(a, out, "fidelity.json", rows.dump(2) + "\n");
  return kExitOk;
}

std::vector<ScenarioKind> scenarios_of(const json& cfg) {
  std::vector<ScenarioKind> v;
  for (const auto& s : get_or<std::vector<std::string>>(cfg, "scenarios", {"aqpim"})) v.push_back(scenario_from_string(s));
  require(!v.empty(), "invalid-config", "scenarios must not be empty");
  return v;
}

Workload workload_of(const json& cfg) {
  return cfg.contains("workload") ? workload_from_json(cfg["workload"].dump()) : Workload{};
}

std::string reports_json(const std::vector<SimReport>& rs) {
  std::string s = "[";
  for (std::size_t i = 0; i < rs.size(); ++i) s += (i ? "," : "") + rs[i].to_json();
  return ordered_json::parse(s + "]").dump(2) + "\n";
}

int cmd_simulate(const CommonArgs& a, std::ostream&) {
  const auto cfg = load_config(a.config);
  allow_keys(cfg, {"workload", "pq", "hw", "scenarios"});
  const auto dir = need_out(a);
  const auto format = format_of(a, "json");
  const auto pq = pq_of(cfg);
  const auto hw = hw_of(cfg);
  const auto wl = workload_of(cfg);
  for (auto k : scenarios_of(cfg)) {
    const auto r = run_scenario({k, wl}, pq, hw);
    if (format == "json")
      io::write_text_atomic(dir / (r.label + ".json"), ordered_json::parse(r.to_json()).dump(2) + "\n");
    else
      io::write_text_atomic(dir / (r.label + ".csv"), sim_report_csv_header() + "\n" + sim_report_csv_row(r) + "\n");
  }
  return kExitOk;
}

int cmd_sweep(const CommonArgs& a, std::ostream& out) {
  const auto cfg = load_config(a.config);
  allow_keys(cfg, {"workload", "pq", "hw", "scenarios", "axis", "points"});
  const auto format = format_of(a, "csv");
  const auto axis = sweep_axis_from_string(get_or<std::string>(cfg, "axis", "seq_in"));
  const auto points = get_or<std::vector<std::uint32_t>>(cfg, "points", {1024, 2048, 4096});
  const auto rows = sweep(scenarios_of(cfg), workload_of(cfg), axis, points, pq_of(cfg), hw_of(cfg));
  if (format == "csv") emit(a, out, "sweep.csv", sweep_csv(rows));
  else emit(a, out, "sweep.json", reports_json(rows));
  return kExitOk;
}

int cmd_gen_synthetic(const CommonArgs& a, std::ostream&) {
  const auto cfg = load_config(a.config);
  allow_keys(cfg, {"n_tokens", "head_dim", "n_latent_clusters", "cluster_spread", "n_layers", "n_kv_heads",
                   "channel_groups", "with_weights", "heavy_fraction", "heavy_scale", "dtype", "name"});
  SyntheticSpec s;
  s.n_tokens = get_or(cfg, "n_tokens", s.n_tokens);
  s.head_dim = get_or(cfg, "head_dim", s.head_dim);
  s.n_latent_clusters = get_or(cfg, "n_latent_clusters", s.n_latent_clusters);
  s.cluster_spread = get_or(cfg, "cluster_spread", s.cluster_spread);
  s.n_layers = get_or(cfg, "n_layers", s.n_layers);
  s.n_kv_heads = get_or(cfg, "n_kv_heads", s.n_kv_heads);
  s.channel_groups = get_or(cfg, "channel_groups", s.channel_groups);
  s.with_weights = get_or(cfg, "with_weights", s.with_weights);
  s.heavy_fraction = get_or(cfg, "heavy_fraction", s.heavy_fraction);
  s.heavy_scale = get_or(cfg, "heavy_scale", s.heavy_scale);
  s.rng_seed = mix_keys(need_seed(a), {kTagSynthetic});
  const auto dir = need_out(a);
  auto dump = generate_synthetic_kv(s);
  dump.dtype = dtype_from(get_or<std::string>(cfg, "dtype", "f32"));
  write_kv_dump(dump, dir / get_or<std::string>(cfg, "name", "synthetic.aqkv"));
  return kExitOk;
}

int cmd_inspect(const CommonArgs& a, std::ostream& out) {
  const auto dump = dump_of(a, json::object());
  ordered_json j;
  j["n_layers"] = dump.n_layers;
  j["n_kv_heads"] = dump.n_kv_heads;
  j["n_tokens"] = dump.n_tokens;
  j["head_dim"] = dump.head_dim;
  j["dtype"] = dtype_name(dump.dtype);
  j["has_weights"] = dump.has_weights();
  ordered_json heads = ordered_json::array();
  for (std::uint32_t l = 0; l < dump.n_layers; ++l) {
    for (std::uint32_t h = 0; h < dump.n_kv_heads; ++h) {
      const double cells = static_cast<double>(dump.n_tokens) * dump.head_dim;
      ordered_json e{{"layer", l},
                     {"kv_head", h},
                     {"key_rms", std::sqrt(dump.key(l, h).squaredNorm() / cells)},
                     {"value_rms", std::sqrt(dump.value(l, h).squaredNorm() / cells)}};
      if (dump.has_weights()) e["weight_sum"] = dump.weights[dump.head_index(l, h)].sum();
      heads.push_back(e);
    }
  }
  j["heads"] = heads;
  emit(a, out, "inspect.json", j.dump(2) + "\n");
  return kExitOk;
}

void report_error(std::ostream& err, const std::string& kind, const std::string& message) {
  ordered_json j;
  j["error"] = {{"kind", kind}, {"message", message}};
  err << j.dump() << "\n";
}

}  // namespace

FidelityArm fidelity_arm_from_string(const std::string& s) {
  if (s == "standard") return {s, false, false};
  if (s == "no-weighting") return {s, false, true};
  if (s == "no-presort") return {s, true, false};
  if (s == "full") return {s, true, true};
  throw Error("invalid-config", "unknown arm '" + s + "' (standard, no-weighting, no-presort, full)");
}

Workload workload_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error("invalid-config", e.what());
  }
  require(j.is_object(), "invalid-config", "workload must be a JSON object");
  allow_keys(j, {"n_layers", "n_heads", "n_kv_heads", "head_dim", "d_model", "d_ff", "vocab", "batch", "seq_in",
                 "seq_out"});
  Workload w;
  auto& m = w.model;
  m.n_layers = get_or(j, "n_layers", m.n_layers);
  m.n_heads = get_or(j, "n_heads", m.n_heads);
  m.n_kv_heads = get_or(j, "n_kv_heads", m.n_kv_heads);
  m.head_dim = get_or(j, "head_dim", m.head_dim);
  m.d_model = get_or(j, "d_model", m.d_model);
  m.d_ff = get_or(j, "d_ff", m.d_ff);
  m.vocab = get_or(j, "vocab", m.vocab);
  w.batch = get_or(j, "batch", w.batch);
  w.seq_in = get_or(j, "seq_in", w.seq_in);
  w.seq_out = get_or(j, "seq_out", w.seq_out);
  m.validate();
  return w;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"aqpim: PQ KV-cache compression and HBM-PIM simulation"};
  app.require_subcommand(1);
  CommonArgs a;
  std::uint64_t seed = 0;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", a.config, "JSON config file");
    sub->add_option("--seed", seed, "root RNG seed");
    sub->add_option("--out", a.out, "output directory");
    sub->add_option("--format", a.format, "json or csv");
  };
  std::map<CLI::App*, int (*)(const CommonArgs&, std::ostream&)> commands;
  auto add = [&](const char* name, const char* desc, int (*fn)(const CommonArgs&, std::ostream&), bool with_dump) {
    auto* sub = app.add_subcommand(name, desc);
    common(sub);
    if (with_dump) sub->add_option("--dump", a.dump, "KV dump (.aqkv)");
    commands[sub] = fn;
  };
  add("quantize", "compress a KV dump and write sidecars + summary.json", cmd_quantize, true);
  add("fidelity", "ablation arms x seeds attention fidelity table", cmd_fidelity, true);
  add("simulate", "one report per scenario", cmd_simulate, false);
  add("sweep", "scenario sweep over seq_in, seq_out or batch", cmd_sweep, false);
  add("gen-synthetic", "write a synthetic KV dump", cmd_gen_synthetic, false);
  add("inspect-dump", "summarize a KV dump", cmd_inspect, true);

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    report_error(err, "bad-args", e.what());
    return kExitUser;
  }
  for (auto* sub : app.get_subcommands()) {
    if (sub->count("--seed") > 0) a.seed = seed;
    try {
      return commands.at(sub)(a, out);
    } catch (const Error& e) {
      report_error(err, e.kind(), e.what());
      return e.kind() == "protocol-violation" ? kExitInternal : kExitUser;
    } catch (const fs::filesystem_error& e) {
      report_error(err, "io", e.what());
      return kExitUser;
    } catch (const std::exception& e) {
      report_error(err, "internal", e.what());
      return kExitInternal;
    }
  }
  return kExitInternal;
}

}  // namespace aqpim
