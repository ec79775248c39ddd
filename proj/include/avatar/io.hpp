#pragma once

// File formats: graph input files, per-round trace exports, result records
// and sweep specifications (JSON).

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "avatar/engine.hpp"
#include "avatar/generators.hpp"

#include "json.hpp"

namespace avatar {

// Graph input: line 1 "N n", then "u v" edge lines, then optional
// "state u field=value" lines. Unknown fields are an error.
inline Configuration parse_graph_text(const std::string& text, std::uint64_t seed = 0) {
  std::istringstream is(text);
  std::string line;
  Configuration cfg;
  cfg.psi_seed = detail::splitmix64(seed ^ 0x517cc1b727220a95ull);
  cfg.rng_seed = detail::splitmix64(seed ^ 0x2545f4914f6cdd1dull);
  std::int32_t n = -1;
  bool header = false;
  std::vector<std::pair<HostId, HostId>> edges;
  std::vector<std::string> state_lines;
  std::int64_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string trimmed;
    for (char c : line)
      if (c != '\r') trimmed += c;
    if (trimmed.empty() || trimmed[0] == '#') continue;
    std::istringstream ls(trimmed);
    if (!header) {
      if (!(ls >> cfg.N >> n) || cfg.N < 1 || n < 1 || n > cfg.N)
        throw std::invalid_argument("graph file: bad header at line " + std::to_string(lineno));
      header = true;
      continue;
    }
    std::string tok;
    ls >> tok;
    if (tok == "state") {
      state_lines.push_back(trimmed);
      continue;
    }
    HostId u = std::stoi(tok), v;
    if (!(ls >> v)) throw std::invalid_argument("graph file: bad edge at line " + std::to_string(lineno));
    edges.push_back({u, v});
  }
  if (!header) throw std::invalid_argument("graph file: missing header");
  std::set<HostId> hosts;
  for (auto [u, v] : edges) {
    hosts.insert(u);
    hosts.insert(v);
  }
  for (HostId h : hosts) {
    if (h < 0 || h >= cfg.N) throw std::invalid_argument("graph file: host id outside [0,N)");
    cfg.nodes[h] = fresh_node(h);
  }
  if (static_cast<std::int32_t>(hosts.size()) != n)
    throw std::invalid_argument("graph file: host count does not match header");
  for (auto [u, v] : edges) cfg.add_edge(u, v);

  for (const std::string& sl : state_lines) {
    std::istringstream ls(sl);
    std::string kw;
    HostId u;
    std::string kv;
    ls >> kw >> u >> kv;
    auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("graph file: malformed state line: " + sl);
    std::string field = kv.substr(0, eq);
    std::string value = kv.substr(eq + 1);
    auto it = cfg.nodes.find(u);
    if (it == cfg.nodes.end())
      throw std::invalid_argument("graph file: state for unknown host " + std::to_string(u));
    NodeState& s = it->second;
    auto as_int = [&]() { return value == "none" ? kNone : std::stoi(value); };
    if (field == "cluster") s.cluster = as_int();
    else if (field == "clusterPred") s.cluster_pred = as_int();
    else if (field == "clusterSucc") s.cluster_succ = as_int();
    else if (field == "faultyBit") s.faulty_bit = static_cast<std::uint8_t>(std::stoi(value));
    else throw std::invalid_argument("graph file: unknown state field '" + field + "'");
  }
  return cfg;
}

inline Configuration load_graph_file(const std::string& path, std::uint64_t seed = 0) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("cannot open graph file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_graph_text(ss.str(), seed);
}

// ---- trace export -----------------------------------------------------------

enum class TraceFormat { Records, EdgelistPerRound };

inline bool parse_trace_format(const std::string& s, TraceFormat& out) {
  if (s == "records") { out = TraceFormat::Records; return true; }
  if (s == "edgelist-per-round") { out = TraceFormat::EdgelistPerRound; return true; }
  return false;
}

inline std::string export_trace_records(const std::vector<RoundTrace>& trace) {
  std::ostringstream os;
  for (const auto& t : trace) {
    os << "round=" << t.round << " clusterCount=" << t.cluster_count
       << " detectorCount=" << t.detector_count << " maxDegree=" << t.max_degree
       << " actionsApplied=" << t.actions_applied
       << " actionsRejected=" << t.actions_rejected << "\n";
  }
  return os.str();
}

inline std::string export_trace_edgelist(
    const std::vector<std::pair<std::int64_t, std::vector<std::pair<HostId, HostId>>>>& rounds) {
  std::ostringstream os;
  for (const auto& [round, edges] : rounds) {
    os << "# round " << round << "\n";
    for (auto [u, v] : edges) os << u << " " << v << "\n";
  }
  return os.str();
}

// ---- result records ---------------------------------------------------------

struct ResultRecord {
  std::string spec_id;
  std::uint64_t seed{0};
  std::int32_t n{0};
  std::int32_t N{0};
  ExperimentResult r;
};

inline std::string format_ratio(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

inline std::string format_result_record(const ResultRecord& rr) {
  std::ostringstream os;
  os << "spec=" << rr.spec_id << " seed=" << rr.seed << " n=" << rr.n << " N=" << rr.N
     << " convergedRound=" << rr.r.converged_round
     << " maxDegree=" << rr.r.max_degree_during_run
     << " degreeExpansion=" << format_ratio(rr.r.degree_expansion)
     << " resets=" << rr.r.reset_count << " merges=" << rr.r.merge_count
     << " connectivityOk=" << (rr.r.connectivity_ok ? 1 : 0)
     << " silenceOk=" << (rr.r.silence_ok ? 1 : 0);
  return os.str();
}

// ---- sweep specification -----------------------------------------------------

struct SweepCell {
  GenKind kind{GenKind::Line};
  std::int32_t n{0};
  std::int32_t N{0};
  CorruptionPolicy policy{CorruptionPolicy::Zeroed};
};

struct SweepSpec {
  std::vector<SweepCell> cells;
  std::vector<std::uint64_t> seeds;
  std::int64_t max_rounds{0};  // 0 = engine default
  std::string out_dir;
};

inline SweepSpec parse_sweep_spec(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  SweepSpec sp;
  if (!j.contains("cells") || !j["cells"].is_array() || j["cells"].empty())
    throw std::invalid_argument("sweep spec: nonempty 'cells' array required");
  for (const auto& c : j["cells"]) {
    SweepCell cell;
    std::string g = c.at("generator").get<std::string>();
    if (!parse_gen_kind(g, cell.kind))
      throw std::invalid_argument("sweep spec: unknown generator '" + g + "'");
    cell.n = c.at("n").get<std::int32_t>();
    cell.N = c.at("N").get<std::int32_t>();
    if (cell.n < 1 || cell.n > cell.N)
      throw std::invalid_argument("sweep spec: need 1 <= n <= N");
    if (c.contains("policy")) {
      std::string p = c["policy"].get<std::string>();
      if (!parse_policy(p, cell.policy))
        throw std::invalid_argument("sweep spec: unknown policy '" + p + "'");
    }
    sp.cells.push_back(cell);
  }
  if (j.contains("seeds")) {
    const auto& s = j["seeds"];
    if (s.is_array()) {
      for (const auto& v : s) sp.seeds.push_back(v.get<std::uint64_t>());
    } else {
      std::uint64_t begin = s.value("begin", 0ull);
      std::uint64_t count = s.at("count").get<std::uint64_t>();
      for (std::uint64_t i = 0; i < count; ++i) sp.seeds.push_back(begin + i);
    }
  }
  if (sp.seeds.empty()) throw std::invalid_argument("sweep spec: seeds required");
  std::set<std::uint64_t> uniq(sp.seeds.begin(), sp.seeds.end());
  if (uniq.size() != sp.seeds.size())
    throw std::invalid_argument("sweep spec: seeds must be distinct");
  sp.max_rounds = j.value("maxRounds", 0ll);
  sp.out_dir = j.value("out", std::string());
  return sp;
}

}  // namespace avatar
