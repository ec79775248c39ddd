#pragma once

// Local checkability: per-node detector predicates for the global legal
// configuration, cluster validity / properness, and the reset-fault predicate
// the protocol acts on. All functions are pure over immutable snapshots.

#include <map>
#include <set>
#include <string>
#include <vector>

#include "avatar/state.hpp"
#include "avatar/topology.hpp"

namespace avatar {

// ---- timing constants (paper lemma bounds; watchdogs run at twice them) ----
namespace timing {
inline std::int32_t pfc_wave(std::int32_t N) { return 2 * num_levels(N) + 2; }
inline std::int32_t merge(std::int32_t N) { return 5 * num_levels(N) + 4; }
inline std::int32_t connect_wait(std::int32_t N) { return 5 * num_levels(N) + 6; }
inline std::int32_t follower_partner(std::int32_t N) { return 16 * num_levels(N) + 16; }
inline std::int32_t short_follower(std::int32_t N) { return 4 * num_levels(N) + 4; }
inline std::int32_t merge_watchdog(std::int32_t N) { return 2 * merge(N); }
inline std::int32_t wait_watchdog(std::int32_t N) { return 2 * connect_wait(N); }
inline std::int32_t partner_watchdog(std::int32_t N) { return 2 * follower_partner(N); }
inline std::int32_t wave_watchdog(std::int32_t N) {
  return 4 * pfc_wave(N) + 2 * connect_wait(N);
}
}  // namespace timing

enum class Violation : std::uint8_t {
  BadClusterId,
  BadSuccessor,
  BadPredecessor,
  BadRangeEdge,
  MissingType2Edge,
  PfcInconsistent,
  ForeignClusterId,
  FaultyBitMismatch,
  FaultyBitSet,
  ActiveWhileTerminated,
  Isolated,
  MergeWatchdog,
  WaitWatchdog,
  WaveWatchdog,
};

inline const char* violation_name(Violation v) {
  switch (v) {
    case Violation::BadClusterId: return "bad-cluster-id";
    case Violation::BadSuccessor: return "bad-successor";
    case Violation::BadPredecessor: return "bad-predecessor";
    case Violation::BadRangeEdge: return "bad-range-edge";
    case Violation::MissingType2Edge: return "missing-type2-edge";
    case Violation::PfcInconsistent: return "pfc-inconsistent";
    case Violation::ForeignClusterId: return "foreign-cluster-id";
    case Violation::FaultyBitMismatch: return "faulty-bit-mismatch";
    case Violation::FaultyBitSet: return "faulty-bit-set";
    case Violation::ActiveWhileTerminated: return "active-while-terminated";
    case Violation::Isolated: return "isolated-node";
    case Violation::MergeWatchdog: return "merge-watchdog";
    case Violation::WaitWatchdog: return "wait-watchdog";
    case Violation::WaveWatchdog: return "wave-watchdog";
  }
  return "?";
}

struct DetectorReport {
  HostId node{kNone};
  std::vector<Violation> violated;
};

// Guests of [lo,hi) that have a tree neighbor outside the interval.
inline std::vector<GuestId> boundary_guests(std::int32_t N, Range r) {
  std::set<GuestId> b;
  for_each_crossing_edge(N, r.lo, r.hi, [&](GuestId in, GuestId) { b.insert(in); });
  return {b.begin(), b.end()};
}

inline HbView make_heartbeat(const NodeState& s, std::int32_t N) {
  HbView h;
  h.id = s.id;
  h.cluster = s.cluster;
  h.cluster_pred = s.cluster_pred;
  h.cluster_succ = s.cluster_succ;
  h.faulty_bit = s.faulty_bit;
  h.reset_last_round = s.reset_last_round;
  h.role = s.role;
  h.committed = s.committed;
  h.selected_leader_host = s.selected_leader_host;
  h.selected_leader_cluster = s.selected_leader_cluster;
  h.root_waiting = s.root_phase == RootPhase::AwaitPartner;
  if (s.follow_target != kNone) h.follow_targets.push_back(s.follow_target);
  for (const auto& [g, acc] : s.pending_fb)
    for (const auto& c : acc.candidates) h.follow_targets.push_back(c.leader_host);
  for (const auto& c : s.root_candidates) h.follow_targets.push_back(c.leader_host);
  h.merge_active = s.merge.active;
  h.merge_partner = s.merge.partner_cluster;
  h.merge_side = s.merge.side;
  h.merge_partner_root = s.merge.partner_root;
  h.merge_orig_range = s.merge.orig_range;
  h.prep_done = s.merge.prep_done;
  h.prep_received = s.merge.prep_received;
  h.psi_round = s.merge.psi_round;
  h.psi_bits = s.merge.psi_bits;
  h.holdings = s.merge.holdings;
  h.wave = s.wave;
  Range r = s.range(N);
  if (r.lo < r.hi) {
    for (GuestId g : boundary_guests(N, r)) {
      PfcPhase p = s.phase_of(g);
      if (p != PfcPhase::Clean) h.boundary_pfc.push_back({g, p, s.wave.key()});
    }
  }
  return h;
}

// Legal (parent, child) PFC phase combinations under the three guarded
// transitions, derived by running a wave: the parent leads the propagate
// front, trails the feedback, and only cleans once the child has.
inline bool pfc_pair_legal(PfcPhase parent, PfcPhase child,
                           std::uint64_t parent_key, std::uint64_t child_key) {
  using P = PfcPhase;
  bool shape_ok =
      (parent == P::Clean && child == P::Clean) ||
      (parent == P::Propagate && child == P::Clean) ||
      (parent == P::Propagate && child == P::Propagate) ||
      (parent == P::Propagate && child == P::Feedback) ||
      (parent == P::Feedback && child == P::Feedback) ||
      (parent == P::Feedback && child == P::Clean);
  if (!shape_ok) return false;
  if (parent != P::Clean && child != P::Clean && parent_key != child_key) return false;
  return true;
}

// Whether some guest edge leaves range `a` and lands inside range `b`.
inline bool type2_between(std::int32_t N, Range a, Range b) {
  bool found = false;
  for_each_crossing_edge(N, a.lo, a.hi, [&](GuestId, GuestId out) {
    if (b.contains(out)) found = true;
  });
  return found;
}

// Merge bookkeeping that is still consistent with a legal in-progress merge.
inline bool merge_state_plausible(const NodeState& s, std::int32_t N) {
  const MergeState& m = s.merge;
  if (!m.active) return false;
  if (m.partner_cluster == kNone || m.partner_cluster == m.side) return false;
  if (m.rounds_in_merge > timing::merge_watchdog(N)) return false;
  if (m.resolve_started && !m.prep_received) return false;
  return true;
}

// Per-node violation scan. In cluster mode, foreign-cluster neighbors and
// faulty bits are tolerated (they are normal while converging); global mode
// checks the full legal-configuration predicate.
inline std::vector<Violation> local_violations(const NodeState& s,
                                               const std::vector<HbView>& nbrs,
                                               std::int32_t N, bool global_mode,
                                               std::size_t total_nodes = 2) {
  std::vector<Violation> out;
  auto flag = [&](Violation v) {
    for (Violation w : out)
      if (w == v) return;
    out.push_back(v);
  };

  if (global_mode && total_nodes > 1 && nbrs.empty()) flag(Violation::Isolated);

  // Merging nodes are judged by their merge bookkeeping, not by cluster shape.
  if (s.merge.active) {
    if (!merge_state_plausible(s, N)) flag(Violation::MergeWatchdog);
    if (global_mode) flag(Violation::ActiveWhileTerminated);
    return out;
  }

  if (s.cluster < 0 || s.cluster >= N) flag(Violation::BadClusterId);
  if (s.cluster_pred != kNone && (s.cluster_pred < 0 || s.cluster_pred >= s.id))
    flag(Violation::BadPredecessor);
  if (s.cluster_succ != kNone && (s.cluster_succ <= s.id || s.cluster_succ > N))
    flag(Violation::BadSuccessor);
  if (!out.empty()) return out;  // range undefined past this point

  const Range my = s.range(N);
  const GuestId root_guest = cbt_root(N);
  if (my.contains(root_guest) != (s.cluster == s.id)) flag(Violation::BadClusterId);

  const HbView* succ_hb = nullptr;
  const HbView* pred_hb = nullptr;
  for (const auto& v : nbrs) {
    if (v.id == s.cluster_succ) succ_hb = &v;
    if (v.id == s.cluster_pred) pred_hb = &v;
  }
  if (s.cluster_succ != kNone &&
      (!succ_hb || (!succ_hb->merge_active &&
                    (succ_hb->cluster != s.cluster || succ_hb->cluster_pred != s.id))))
    flag(Violation::BadSuccessor);
  if (s.cluster_pred != kNone &&
      (!pred_hb || (!pred_hb->merge_active &&
                    (pred_hb->cluster != s.cluster || pred_hb->cluster_succ != s.id))))
    flag(Violation::BadPredecessor);

  for (const auto& v : nbrs) {
    if (v.merge_active) {
      if (global_mode) flag(Violation::ActiveWhileTerminated);
      continue;  // its shape is in flux; its own checks cover it
    }
    if (v.cluster != s.cluster) {
      if (global_mode) flag(Violation::ForeignClusterId);
      continue;
    }
    // same-cluster neighbor: disjoint range and a type-1/type-2 justification.
    // Leftover merge edges awaiting the post-merge prune are not faults.
    if (my.contains(v.id) && v.id != s.id)
      flag(v.id > s.id ? Violation::BadSuccessor : Violation::BadPredecessor);
    if (v.id != s.cluster_succ && v.id != s.cluster_pred &&
        !s.prune_pending && !type2_between(N, my, v.range(N)))
      flag(Violation::BadRangeEdge);
  }

  // every guest edge leaving my range must land on some same-cluster neighbor;
  // a neighbor that entered a merge from this cluster's side still counts
  // (the prep wave flips cluster identifiers one level per round)
  auto covers = [&](const HbView& v) {
    return v.cluster == s.cluster ||
           (v.merge_active && v.merge_side == s.cluster);
  };
  bool missing = false;
  for_each_crossing_edge(N, my.lo, my.hi, [&](GuestId, GuestId out_guest) {
    for (const auto& v : nbrs)
      if (covers(v) && v.range(N).contains(out_guest)) return;
    missing = true;
  });
  if (missing) flag(Violation::MissingType2Edge);

  // PFC guard consistency around every non-clean guest I host
  const GuestTree& t = [&]() -> const GuestTree& {
    static thread_local std::map<std::int32_t, GuestTree> cache;
    auto it = cache.find(N);
    if (it == cache.end()) it = cache.emplace(N, cbt_structure(N)).first;
    return it->second;
  }();
  auto phase_key_of = [&](GuestId g, PfcPhase& ph, std::uint64_t& key) -> bool {
    if (my.contains(g)) { ph = s.phase_of(g); key = s.wave.key(); return true; }
    for (const auto& v : nbrs)
      if (v.cluster == s.cluster && !v.merge_active && v.range(N).contains(g)) {
        ph = v.phase_of(g); key = v.wave_key_of(g); return true;
      }
    return false;
  };
  auto check_pair = [&](GuestId pg, GuestId cg) {
    PfcPhase pp, cp;
    std::uint64_t pk, ck;
    if (!phase_key_of(pg, pp, pk) || !phase_key_of(cg, cp, ck)) return;
    if (!pfc_pair_legal(pp, cp, pk, ck)) flag(Violation::PfcInconsistent);
  };
  for (const auto& [g, ph] : s.pfc) {
    if (!my.contains(g)) { flag(Violation::PfcInconsistent); continue; }
    if (global_mode && s.faulty_bit == 0) flag(Violation::ActiveWhileTerminated);
    if (t.parent[g] != kNone) check_pair(t.parent[g], g);
    for (GuestId c : t.children[g])
      if (c != kNone) check_pair(g, c);
  }
  // boundary guests may be Clean while an external parent/child is not
  for (GuestId g : boundary_guests(N, my)) {
    if (s.phase_of(g) != PfcPhase::Clean) continue;
    if (t.parent[g] != kNone && !my.contains(t.parent[g])) check_pair(t.parent[g], g);
    for (GuestId c : t.children[g])
      if (c != kNone && !my.contains(c)) check_pair(g, c);
  }

  if (global_mode) {
    for (const auto& v : nbrs)
      if (v.faulty_bit != s.faulty_bit) flag(Violation::FaultyBitMismatch);
    if (s.faulty_bit) flag(Violation::FaultyBitSet);
    if (s.role == RoleKind::OpenLeader && s.faulty_bit == 0)
      flag(Violation::ActiveWhileTerminated);
  }

  // protocol liveness watchdogs (cluster mode only)
  if (!global_mode) {
    if (s.wait_rounds > timing::wait_watchdog(N)) flag(Violation::WaitWatchdog);
    if (s.wave_rounds > timing::wave_watchdog(N)) flag(Violation::WaveWatchdog);
  }
  return out;
}

// Minimal immutable view of a configuration for the global checks.
struct ConfigView {
  std::int32_t N{0};
  const std::map<HostId, NodeState>* nodes{nullptr};
  const std::map<HostId, std::set<HostId>>* adj{nullptr};

  std::vector<HbView> neighbor_views(HostId u) const {
    std::vector<HbView> out;
    auto it = adj->find(u);
    if (it == adj->end()) return out;
    for (HostId v : it->second) out.push_back(make_heartbeat(nodes->at(v), N));
    return out;
  }
};

// Nodes whose own state plus neighbor states witness that the configuration
// is not the legal Avatar_CBT(N, V) single-cluster configuration.
inline std::vector<DetectorReport> detectors(const ConfigView& cfg) {
  std::vector<DetectorReport> out;
  for (const auto& [u, s] : *cfg.nodes) {
    auto viols = local_violations(s, cfg.neighbor_views(u), cfg.N, /*global=*/true,
                                  cfg.nodes->size());
    if (!viols.empty()) out.push_back({u, std::move(viols)});
  }
  return out;
}

// Cluster validity per the two-condition definition: the induced subgraph is
// exactly Avatar_CBT(N, T) and every member's cluster range matches its legal
// range there.
inline bool is_valid_cluster(const ConfigView& cfg, const std::set<HostId>& T) {
  if (T.empty()) return false;
  std::vector<HostId> sorted(T.begin(), T.end());
  EdgeSet want = avatar_edges(cfg.N, sorted);
  auto ranges = compute_ranges(sorted, cfg.N);
  for (HostId u : sorted) {
    auto it = cfg.nodes->find(u);
    if (it == cfg.nodes->end()) return false;
    const NodeState& s = it->second;
    if (s.range(cfg.N) != ranges.at(u)) return false;
    // pointer values must name the true neighbors in T (or kNone at the ends)
    HostId want_pred = kNone, want_succ = kNone;
    for (HostId v : sorted) {
      if (v < u && (want_pred == kNone || v > want_pred)) want_pred = v;
      if (v > u && (want_succ == kNone || v < want_succ)) want_succ = v;
    }
    if (s.cluster_pred != want_pred || s.cluster_succ != want_succ) return false;
    std::set<HostId> induced;
    auto ait = cfg.adj->find(u);
    if (ait != cfg.adj->end())
      for (HostId v : ait->second)
        if (T.count(v)) induced.insert(v);
    std::set<HostId> expect;
    for (const auto& [e, tags] : want.edges) {
      if (e.first == u) expect.insert(e.second);
      if (e.second == u) expect.insert(e.first);
    }
    if (induced != expect) return false;
  }
  return true;
}

// Conditions (i)-(v) of a proper cluster.
inline bool is_proper_cluster(const ConfigView& cfg, const std::set<HostId>& T) {
  if (!is_valid_cluster(cfg, T)) return false;  // (i) + (ii)
  std::vector<HostId> sorted(T.begin(), T.end());
  HostId root_host = host_of(cbt_root(cfg.N), sorted);
  for (HostId u : sorted) {
    const NodeState& s = cfg.nodes->at(u);
    if (s.cluster != root_host) return false;  // (iii)
    auto ait = cfg.adj->find(u);
    if (ait != cfg.adj->end())
      for (HostId v : ait->second)
        if (!T.count(v) && cfg.nodes->at(v).cluster == s.cluster) return false;  // (iv)
  }
  // (v): every adjacent guest pair must be a reachable PFC combination
  GuestTree t = cbt_structure(cfg.N);
  auto ranges = compute_ranges(sorted, cfg.N);
  auto owner = [&](GuestId g) { return host_of(g, sorted); };
  for (GuestId g = 0; g < cfg.N; ++g) {
    if (t.parent[g] == kNone) continue;
    const NodeState& ps = cfg.nodes->at(owner(t.parent[g]));
    const NodeState& cs = cfg.nodes->at(owner(g));
    if (!pfc_pair_legal(ps.phase_of(t.parent[g]), cs.phase_of(g),
                        ps.wave.key(), cs.wave.key()))
      return false;
  }
  (void)ranges;
  return true;
}

inline bool cluster_all_clean(const ConfigView& cfg, const std::set<HostId>& T) {
  for (HostId u : T)
    if (!cfg.nodes->at(u).pfc.empty()) return false;
  return true;
}

inline bool cluster_unmatched(const ConfigView& cfg, const std::set<HostId>& T) {
  for (HostId u : T)
    if (cfg.nodes->at(u).merge.active) return false;
  return true;
}

// The reset trigger: locally invalid, not shielded by a plausible in-progress
// merge, and no reset in the previous round. Terminated nodes additionally
// re-arm on any evidence that silence was a lie.
inline bool reset_fault(const NodeState& s, const std::vector<HbView>& nbrs,
                        std::int32_t N) {
  if (s.reset_last_round) return false;                      // (iii)
  if (s.merge.active) return !merge_state_plausible(s, N);   // (ii)
  if (!local_violations(s, nbrs, N, /*global=*/false).empty()) return true;  // (i)
  if (s.faulty_bit == 0) {
    bool announce_running = !s.pfc.empty() && s.wave.kind == WaveKind::Announce;
    if (!s.pfc.empty() && !announce_running) return true;
    if (s.role == RoleKind::OpenLeader) return true;
    for (const auto& v : nbrs) {
      if (v.cluster != s.cluster) return true;
      if (v.reset_last_round) return true;
      if (v.faulty_bit != 0 && !announce_running) return true;
    }
  }
  return false;
}

}  // namespace avatar
