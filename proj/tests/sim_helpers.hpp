#pragma once

// Shared scaffolding for protocol-level tests: cluster construction, round
// drivers, wave-window extraction and the PFC guard auditor.

#include <map>
#include <set>
#include <vector>

#include "avatar/engine.hpp"
#include "avatar/generators.hpp"

namespace simtest {

using namespace avatar;

inline void run_rounds(Configuration& cfg, int k) {
  GuestTree t = cbt_structure(cfg.N);
  for (int i = 0; i < k; ++i) step_round(cfg, t);
}

inline bool all_clean(const Configuration& cfg) {
  for (const auto& [id, s] : cfg.nodes)
    if (!s.pfc.empty()) return false;
  return true;
}

// Clean apart from termination-announcement traffic, which starts immediately
// when a merge leaves a cluster covering the whole configuration.
inline bool clean_or_announcing(const Configuration& cfg, const std::set<HostId>& T) {
  for (HostId u : T) {
    const NodeState& s = cfg.nodes.at(u);
    if (!s.pfc.empty() && s.wave.kind != WaveKind::Announce) return false;
  }
  return true;
}

// Builds one proper cluster over T inside cfg: canonical edges, pointers,
// cluster identifier, faulty bits set so the protocol keeps working.
inline void install_cluster(Configuration& cfg, std::vector<HostId> T) {
  std::sort(T.begin(), T.end());
  HostId root_host = host_of(cbt_root(cfg.N), T);
  for (std::size_t i = 0; i < T.size(); ++i) {
    NodeState s = fresh_node(T[i]);
    s.cluster = root_host;
    s.cluster_pred = i == 0 ? kNone : T[i - 1];
    s.cluster_succ = i + 1 == T.size() ? kNone : T[i + 1];
    s.faulty_bit = 1;
    cfg.nodes[T[i]] = s;
  }
  for (const auto& [e, tags] : avatar_edges(cfg.N, T).edges) cfg.add_edge(e.first, e.second);
}

// Arms a cluster root with a merge assignment, as if PartnerAssigned had just
// been consumed.
inline void arm_merge(Configuration& cfg, HostId root, std::int32_t partner_cluster,
                      HostId partner_root) {
  NodeState& s = cfg.nodes.at(root);
  s.merge.active = true;
  s.merge.side = s.cluster;
  s.merge.partner_cluster = partner_cluster;
  s.merge.partner_root = partner_root;
  s.merge.orig_range = s.range(cfg.N);
  s.merge.new_cluster = merge_new_cluster(cfg.N, s.merge.side, partner_cluster);
  s.merge.holdings.push_back({s.merge.orig_range, s.merge.side});
  s.role = RoleKind::Merging;
  s.root_phase = RootPhase::MergeRunning;
  s.pending_wave = WaveKind::MergePrep;
}

// Two proper clusters with their roots pre-matched and connected.
inline Configuration make_matched_pair(std::int32_t N, std::vector<HostId> T1,
                                       std::vector<HostId> T2, std::uint64_t seed = 1) {
  Configuration cfg;
  cfg.N = N;
  cfg.psi_seed = 0x1234 + seed;
  cfg.rng_seed = 0x9876 + seed * 31;
  install_cluster(cfg, T1);
  install_cluster(cfg, T2);
  std::sort(T1.begin(), T1.end());
  std::sort(T2.begin(), T2.end());
  HostId r1 = host_of(cbt_root(N), T1);
  HostId r2 = host_of(cbt_root(N), T2);
  cfg.add_edge(r1, r2);
  arm_merge(cfg, r1, cfg.nodes.at(r2).cluster, r2);
  arm_merge(cfg, r2, cfg.nodes.at(r1).cluster, r1);
  return cfg;
}

// Rounds with any non-clean guest anywhere, as maximal [start, end] windows.
// A wave that is non-clean at the ends of rounds s..e finished its cleanup
// during round e+1, so the wave itself spans e-s+2 rounds.
struct WaveWindow {
  std::int64_t start{0}, end{0};
  std::int64_t length() const { return end - start + 2; }
};

inline std::vector<WaveWindow> wave_windows(Configuration cfg, int rounds) {
  GuestTree t = cbt_structure(cfg.N);
  std::vector<WaveWindow> out;
  bool in_wave = false;
  for (int r = 1; r <= rounds; ++r) {
    step_round(cfg, t);
    bool busy = !all_clean(cfg);
    if (busy && !in_wave) {
      out.push_back({r, r});
      in_wave = true;
    } else if (busy && in_wave) {
      out.back().end = r;
    } else if (!busy) {
      in_wave = false;
    }
  }
  if (in_wave && !out.empty()) out.pop_back();  // final window may be truncated
  return out;
}

// Audits every phase change in a run against the three guarded transitions,
// evaluated on the prior round's global state.
struct GuardAudit {
  std::int64_t transitions{0};
  std::int64_t violations{0};
};

inline GuardAudit audit_guards(Configuration cfg, int rounds) {
  GuestTree tree = cbt_structure(cfg.N);
  GuardAudit audit;

  auto owner_phase = [&](const Configuration& c, HostId around, GuestId g,
                         std::int32_t side, PfcPhase& out) -> bool {
    auto lookup = [&](HostId h) -> bool {
      const NodeState& s = c.nodes.at(h);
      std::int32_t s_side = s.merge.active ? s.merge.side : s.cluster;
      Range r = s.merge.active ? s.merge.orig_range : s.range(c.N);
      if (s_side != side || !r.contains(g)) return false;
      out = s.phase_of(g);
      return true;
    };
    if (lookup(around)) return true;
    auto it = c.adj.find(around);
    if (it != c.adj.end())
      for (HostId v : it->second)
        if (lookup(v)) return true;
    return false;
  };

  for (int r = 0; r < rounds; ++r) {
    Configuration before = cfg;
    step_round(cfg, tree);
    for (const auto& [id, after_s] : cfg.nodes) {
      auto bit = before.nodes.find(id);
      if (bit == before.nodes.end()) continue;
      const NodeState& before_s = bit->second;
      if (after_s.reset_last_round) continue;  // reset wipes phases wholesale
      std::int32_t side = before_s.merge.active ? before_s.merge.side : before_s.cluster;
      Range range = before_s.merge.active ? before_s.merge.orig_range : before_s.range(cfg.N);
      std::set<GuestId> touched;
      for (const auto& [g, p] : before_s.pfc) touched.insert(g);
      for (const auto& [g, p] : after_s.pfc) touched.insert(g);
      for (GuestId g : touched) {
        if (!range.contains(g)) continue;
        PfcPhase from = before_s.phase_of(g);
        PfcPhase to = after_s.phase_of(g);
        if (from == to) continue;
        audit.transitions++;
        bool ok = false;
        GuestId par = tree.parent[g];
        auto children_all = [&](PfcPhase want) {
          for (GuestId c : tree.children[g]) {
            if (c == kNone) continue;
            PfcPhase ph;
            if (!owner_phase(before, id, c, side, ph)) return false;
            if (ph != want) return false;
          }
          return true;
        };
        PfcPhase parent_phase{};
        bool have_parent = par != kNone && owner_phase(before, id, par, side, parent_phase);
        if (from == PfcPhase::Clean && to == PfcPhase::Propagate) {
          bool parent_ok = par == kNone || (have_parent && parent_phase == PfcPhase::Propagate);
          ok = parent_ok && children_all(PfcPhase::Clean);
        } else if (from == PfcPhase::Propagate && to == PfcPhase::Feedback) {
          bool parent_ok = par == kNone || (have_parent && parent_phase == PfcPhase::Propagate);
          ok = parent_ok && children_all(PfcPhase::Feedback);
        } else if (from == PfcPhase::Feedback && to == PfcPhase::Clean) {
          bool parent_ok = par == kNone || (have_parent && parent_phase == PfcPhase::Feedback);
          ok = parent_ok && children_all(PfcPhase::Clean);
        }
        if (!ok) audit.violations++;
      }
    }
  }
  return audit;
}

}  // namespace simtest
