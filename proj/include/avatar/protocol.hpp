#pragma once

// The per-node program: one pure transition executed each synchronous round.
// Dispatches reset, PFC wave simulation on the guest tree, leader/follower
// matching, cluster merging and termination detection. Reads only the
// previous round's snapshot (own state, neighbor heartbeats, inbox).

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "avatar/checker.hpp"
#include "avatar/state.hpp"
#include "avatar/topology.hpp"

namespace avatar {

struct RoundInputs {
  std::int32_t N{0};
  std::int64_t round{0};
  const GuestTree* tree{nullptr};
  std::vector<HbView> neighbors;  // sorted by id
  std::vector<Message> inbox;
  std::function<std::uint64_t(std::int32_t)> psi;  // round -> fresh shared bits
  std::uint64_t rng_base{0};                       // per-node random stream base
};

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}
}  // namespace detail

inline std::uint64_t node_draw(std::uint64_t base, std::uint64_t counter) {
  return detail::splitmix64(base ^ detail::splitmix64(counter + 0x51ed2701));
}

// Merged host of guest g between the hosts of its two copies: the closest
// host at or below g, or the smaller host when both lie above g.
inline HostId resolve_winner(GuestId g, HostId a, HostId b) {
  if (a <= g && b <= g) return std::max(a, b);
  if (a > g && b > g) return std::min(a, b);
  return a <= g ? a : b;
}

inline std::int32_t merge_new_cluster(std::int32_t N, std::int32_t side, std::int32_t partner) {
  return resolve_winner(cbt_root(N), side, partner);
}

inline std::int32_t eff_cluster(const HbView& v, std::int32_t N) {
  return v.merge_active ? merge_new_cluster(N, v.merge_side, v.merge_partner) : v.cluster;
}

// The unique minimum-level guest inside a nonempty range.
inline GuestId top_guest(std::int32_t N, Range r) {
  std::int32_t a = 0, b = N - 1;
  while (true) {
    GuestId m = (a + b) / 2;
    if (r.contains(m)) return m;
    if (m < r.lo) a = m + 1; else b = m - 1;
  }
}

// ---- ReplaceNode planning (host-level view of one guest-copy resolution) ---

enum class ReplaceCase : std::uint8_t { SuccessorUpdate, PredecessorUpdate, NoPointerUpdate };

struct ReplaceOutcome {
  ReplaceCase kase{ReplaceCase::NoPointerUpdate};
  HostId new_succ{kNone};
  HostId new_pred{kNone};
  std::vector<GuestId> lost_nodes;  // guests leaving c's embedding, bound for d
  HostId transfer_target{kNone};
};

// Pointer/transfer plan for host c when the copy of a shared guest resolves
// against host d. Exactly one of the three cases applies.
inline ReplaceOutcome replace_node_plan(HostId c_id, Range c_range, HostId c_pred,
                                        HostId c_succ, HostId d, std::int32_t N) {
  ReplaceOutcome out;
  out.transfer_target = d;
  std::int32_t succ_bound = c_succ == kNone ? N : c_succ;
  if (d > c_id && d < succ_bound) {
    out.kase = ReplaceCase::SuccessorUpdate;
    out.new_succ = d;
    for (GuestId g = std::max(c_range.lo, d); g < c_range.hi; ++g) out.lost_nodes.push_back(g);
  } else if (c_pred == kNone && d < c_id) {
    out.kase = ReplaceCase::PredecessorUpdate;
    out.new_pred = d;
    for (GuestId g = std::max(c_range.lo, d); g < std::min(c_range.hi, c_id); ++g)
      out.lost_nodes.push_back(g);
  } else {
    out.kase = ReplaceCase::NoPointerUpdate;
  }
  return out;
}

// The three guarded PFC transitions; anything else holds its phase.
// `parent_phase` is nullopt for the root guest (virtual always-matching parent).
inline PfcPhase pfc_transition(PfcPhase own, std::optional<PfcPhase> parent_phase,
                               const std::vector<PfcPhase>& children) {
  auto all_children = [&](PfcPhase p) {
    for (PfcPhase c : children)
      if (c != p) return false;
    return true;
  };
  bool parent_prop = !parent_phase || *parent_phase == PfcPhase::Propagate;
  bool parent_fb = !parent_phase || *parent_phase == PfcPhase::Feedback;
  if (own == PfcPhase::Clean && parent_phase && *parent_phase == PfcPhase::Propagate &&
      all_children(PfcPhase::Clean))
    return PfcPhase::Propagate;
  if (own == PfcPhase::Propagate && parent_prop && all_children(PfcPhase::Feedback))
    return PfcPhase::Feedback;
  if (own == PfcPhase::Feedback && parent_fb && all_children(PfcPhase::Clean))
    return PfcPhase::Clean;
  return own;
}

// ---------------------------------------------------------------------------

namespace detail {

struct StepCtx {
  const NodeState& prev;
  const RoundInputs& in;
  NodeState s;
  StepResult R;
  std::map<HostId, const HbView*> nb;
  std::vector<const MsgResolveTrigger*> triggers;
  std::vector<const MsgChildrenHandover*> handovers;
  std::vector<const MsgTransfer*> transfers;
  std::vector<MsgMergeFeedback> merge_fbs;
  std::vector<std::pair<HostId, MsgPartnerAssigned>> partner_msgs;
  bool root_got_feedback{false};
  bool reset_now{false};

  StepCtx(const NodeState& p, const RoundInputs& i) : prev(p), in(i), s(p) {}

  std::int32_t N() const { return in.N; }
  const GuestTree& tree() const { return *in.tree; }
  GuestId root_guest() const { return cbt_root(in.N); }

  const HbView* hb(HostId h) const {
    auto it = nb.find(h);
    return it == nb.end() ? nullptr : it->second;
  }

  std::int32_t my_side() const { return s.merge.active ? s.merge.side : s.cluster; }
  std::int32_t nbr_side(const HbView& v) const { return v.merge_active ? v.merge_side : v.cluster; }
  bool wave_peer(const HbView& v) const { return nbr_side(v) == my_side(); }
  Range peer_range(const HbView& v) const {
    return v.merge_active ? v.merge_orig_range : v.range(N());
  }

  bool psi_check(std::int32_t round, std::uint64_t bits) const {
    return round >= 0 && in.psi && in.psi(round) == bits;
  }

  void do_reset() {
    NodeState ns;
    ns.id = prev.id;
    ns.cluster = prev.id;
    ns.faulty_bit = 1;
    ns.reset_last_round = true;
    ns.draw_counter = prev.draw_counter;
    s = ns;
    R.did_reset = true;
    reset_now = true;
  }

  // ---- message ingestion ----------------------------------------------

  void ingest() {
    for (const Message& m : in.inbox) {
      if (const auto* fb = std::get_if<MsgFbData>(&m.body)) {
        auto& acc = s.pending_fb[fb->parent_position];
        acc.faulty |= fb->faulty_or;
        for (const auto& c : fb->candidates) acc.candidates.push_back(c);
      } else if (const auto* ff = std::get_if<MsgForwardFollower>(&m.body)) {
        s.handed_followers.push_back({ff->follower_root, ff->follower_cluster});
      } else if (const auto* pa = std::get_if<MsgPartnerAssigned>(&m.body)) {
        partner_msgs.push_back({m.from, *pa});
      } else if (const auto* rd = std::get_if<MsgFollowRedirect>(&m.body)) {
        if (s.root_phase == RootPhase::AwaitPartner && s.committed)
          s.selected_leader_host = rd->new_contact;
      } else if (const auto* tg = std::get_if<MsgResolveTrigger>(&m.body)) {
        triggers.push_back(tg);
      } else if (const auto* ho = std::get_if<MsgChildrenHandover>(&m.body)) {
        handovers.push_back(ho);
      } else if (const auto* mf = std::get_if<MsgMergeFeedback>(&m.body)) {
        merge_fbs.push_back(*mf);
      } else if (const auto* xf = std::get_if<MsgTransfer>(&m.body)) {
        transfers.push_back(xf);
      }
    }
  }

  // ---- follower marks ---------------------------------------------------

  bool mark_target_valid(HostId t) const {
    const HbView* v = hb(t);
    if (!v) return false;
    if (eff_cluster(*v, N()) == s.cluster) return false;
    return v->role == RoleKind::OpenLeader || v->role == RoleKind::ClosedLeader ||
           v->merge_active;
  }

  void scan_for_leaders() {
    if (s.follow_target != kNone && !mark_target_valid(s.follow_target))
      s.follow_target = kNone;
    if (!is_follower_role(s.role) || s.committed || s.merge.active) return;
    if (s.follow_target != kNone) return;
    const HbView* best = nullptr;
    for (const auto& [id, v] : nb) {
      if (!v->potential_leader()) continue;
      if (eff_cluster(*v, N()) == s.cluster) continue;
      if (!best || std::pair(eff_cluster(*v, N()), v->id) <
                       std::pair(eff_cluster(*best, N()), best->id))
        best = v;
    }
    if (best) s.follow_target = best->id;
  }

  // ---- fault evidence (feeds faulty-bit aggregation) ---------------------

  bool own_fault_evidence() const {
    for (const auto& [id, v] : nb)
      if (eff_cluster(*v, N()) != s.cluster) return true;
    if (!s.merge.active &&
        !local_violations(s, in.neighbors, N(), /*global=*/false).empty())
      return true;
    return false;
  }

  // ---- merge machinery ----------------------------------------------------

  bool i_am_merge_root() const {
    return s.merge.active && s.merge.orig_range.contains(root_guest());
  }

  // ---- copy-ownership bookkeeping ------------------------------------------

  static bool holds(const std::vector<Holding>& hs, GuestId g, std::int32_t side) {
    for (const auto& h : hs)
      if (h.side == side && h.range.contains(g)) return true;
    return false;
  }

  // Current host of the side's copy of guest g, as far as this node can tell:
  // its own holdings, intervals it ceded itself, then neighbor heartbeats.
  HostId holder_of(GuestId g, std::int32_t side) const {
    if (holds(s.merge.holdings, g, side)) return s.id;
    for (const auto& [h, to] : s.merge.sent_away)
      if (h.side == side && h.range.contains(g)) return to;
    for (const auto& [id, v] : nb) {
      if (!v->merge_active) continue;
      bool related = v->merge_side == s.merge.side || v->merge_side == s.merge.partner_cluster;
      if (!related) continue;
      if (holds(v->holdings, g, side)) return v->id;
    }
    return kNone;
  }

  void holdings_remove(Range cut, std::int32_t side) {
    std::vector<Holding> out;
    for (const auto& h : s.merge.holdings) {
      if (h.side != side || h.range.hi <= cut.lo || h.range.lo >= cut.hi) {
        out.push_back(h);
        continue;
      }
      if (h.range.lo < cut.lo) out.push_back({Range{h.range.lo, cut.lo}, side});
      if (h.range.hi > cut.hi) out.push_back({Range{cut.hi, h.range.hi}, side});
    }
    s.merge.holdings = std::move(out);
  }

  void holdings_add(Holding h) {
    if (h.range.lo >= h.range.hi) return;
    s.merge.holdings.push_back(h);
  }

  // Cede every live copy in `lost` (both sides; not the position being
  // resolved, not copies already lost at their own resolutions) to `target`,
  // together with the host links the adopted tree neighbors need.
  void cede_interval(Range lost, GuestId resolving, HostId target) {
    if (lost.lo >= lost.hi) return;
    MsgTransfer xfer;
    for (const auto& h : s.merge.holdings) {
      Range in{std::max(h.range.lo, lost.lo), std::min(h.range.hi, lost.hi)};
      if (in.lo >= in.hi) continue;
      // split around positions whose copies are already settled here
      std::vector<GuestId> cuts{resolving};
      for (const auto& [g, pos] : s.merge.positions)
        if (pos.resolved && in.contains(g)) cuts.push_back(g);
      std::sort(cuts.begin(), cuts.end());
      std::int32_t lo = in.lo;
      auto emit = [&](std::int32_t a, std::int32_t b) {
        if (a < b) xfer.items.push_back({Range{a, b}, h.side});
      };
      for (GuestId c : cuts) {
        if (!in.contains(c)) continue;
        emit(lo, c);
        lo = c + 1;
      }
      emit(lo, in.hi);
    }
    if (xfer.items.empty()) return;
    for (const auto& h : xfer.items) {
      // the receiver must reach the holders of every tree neighbor of the
      // adopted copies; at most two such edges exist per span size
      for_each_crossing_edge(N(), h.range.lo, h.range.hi, [&](GuestId, GuestId out) {
        if (out == resolving) return;
        HostId oh = holder_of(out, h.side);
        if (oh != kNone && oh != target && oh != s.id)
          R.actions.push_back(AddEdge{target, oh, s.id});
      });
      holdings_remove(h.range, h.side);
      s.merge.sent_away.push_back({h, target});
    }
    R.outbox.push_back({s.id, target, xfer});
  }

  void activate_merge(std::int32_t partner_cluster, HostId partner_root) {
    MergeState m;
    m.active = true;
    m.partner_cluster = partner_cluster;
    m.partner_root = partner_root;
    m.side = s.cluster;
    m.orig_range = s.range(N());
    m.new_cluster = merge_new_cluster(N(), m.side, partner_cluster);
    m.unresolved = 0;
    m.holdings.push_back({m.orig_range, m.side});
    m.followed_during_merge = s.merge.followed_during_merge;
    s.merge = m;
    s.role = RoleKind::Merging;
  }

  void abort_merge() {
    // Pre-resolution: nothing was mutated yet, fall back to a fresh draw.
    s.cluster = s.merge.side;
    s.merge = MergeState{};
    s.role = RoleKind::Unassigned;
    s.committed = false;
    s.selected_leader_host = kNone;
    s.selected_leader_cluster = kNone;
    s.pending_wave = WaveKind::None;
    if (s.range(N()).contains(root_guest())) s.root_phase = RootPhase::Idle;
  }

  void finish_merge() {
    s.merge = MergeState{};
    s.prune_pending = true;
    if (s.role == RoleKind::Merging) s.role = RoleKind::Unassigned;
    s.committed = false;
    s.selected_leader_host = kNone;
    s.selected_leader_cluster = kNone;
  }

  // Drop intra-cluster edges no longer justified, but only once every member
  // has finished its own resolution: a peer still merging may not have its
  // final pointers yet.
  void maybe_prune() {
    if (!s.prune_pending || s.merge.active) return;
    for (const auto& [id, v] : nb)
      if (v->merge_active && eff_cluster(*v, N()) == s.cluster) return;
    Range mine = s.range(N());
    for (const auto& [id, v] : nb) {
      if (v->cluster != s.cluster) continue;
      if (v->id == s.cluster_succ || v->id == s.cluster_pred) continue;
      if (!type2_between(N(), mine, v->range(N())))
        R.actions.push_back(DeleteEdge{s.id, v->id});
    }
    s.prune_pending = false;
  }

  // The side of my copy of position g (kNone when not held; resolver treats
  // holding both sides as an internal resolution).
  std::int32_t copy_side(GuestId g) const {
    bool a = holds(s.merge.holdings, g, s.merge.side);
    bool b = holds(s.merge.holdings, g, s.merge.partner_cluster);
    if (a && b) return -2;  // both: internal
    if (a) return s.merge.side;
    if (b) return s.merge.partner_cluster;
    return kNone;
  }

  // Copies a host gives up when its pointer tightens toward `other`: the
  // guests at or above a new successor, or between a new predecessor and
  // this host's own identifier.
  Range lost_interval(HostId other) const {
    std::int32_t succ_bound = s.cluster_succ == kNone ? N() : s.cluster_succ;
    if (other > s.id && other < succ_bound) return Range{other, N()};
    std::int32_t pred_bound = s.cluster_pred == kNone ? -1 : s.cluster_pred;
    if (other < s.id && other > pred_bound) return Range{other, s.id};
    return Range{0, 0};
  }

  void resolve_position(GuestId g, MergePosition& pos) {
    std::int32_t side = copy_side(g);
    if (side == kNone) return;  // ceded away; the trigger forwarder covers it
    if (side == -2) {
      // both copies live here: the adopted one dissolves into the embedding
      pos.resolved = true;
      pos.winner = true;
      pos.internal = true;
      s.merge.unresolved--;
      std::int32_t nc = 0;
      for (GuestId c : tree().children[g])
        if (c != kNone) nc++;
      pos.children_pending = nc;
      if (nc > 0) s.merge.spawn_queue.push_back(g);
      return;
    }
    const HbView* cp = hb(pos.counterpart);
    if (cp && !holds(cp->holdings, g, side == s.merge.side ? s.merge.partner_cluster
                                                           : s.merge.side)) {
      // the other copy moved; chase the current holder
      HostId h = holder_of(g, side == s.merge.side ? s.merge.partner_cluster
                                                   : s.merge.side);
      if (h != kNone && h != s.id) pos.counterpart = h;
      cp = hb(pos.counterpart);
    }
    if (!cp) return;  // not adjacent yet; retried next round, watchdog backstops
    bool same_merge =
        (cp->merge_side == s.merge.side && cp->merge_partner == s.merge.partner_cluster) ||
        (cp->merge_side == s.merge.partner_cluster && cp->merge_partner == s.merge.side);
    bool guard = cp->merge_active && same_merge && cp->prep_received &&
                 s.merge.prep_received && psi_check(s.merge.psi_round, s.merge.psi_bits) &&
                 psi_check(cp->psi_round, cp->psi_bits);
    if (!guard) {
      do_reset();
      return;
    }
    HostId other = pos.counterpart;
    // both hosts tighten toward each other and exchange the copies that fall
    // outside their updated ranges
    Range lost = lost_interval(other);
    if (other > s.id) {
      if (s.cluster_succ == kNone || other < s.cluster_succ) s.cluster_succ = other;
    } else {
      if (s.cluster_pred == kNone || other > s.cluster_pred) s.cluster_pred = other;
    }
    cede_interval(lost, g, other);

    HostId w = resolve_winner(g, s.id, other);
    pos.resolved = true;
    pos.winner = (w == s.id);
    s.merge.unresolved--;
    const GuestTree& t = tree();
    if (pos.winner) {
      std::int32_t nc = 0;
      for (GuestId c : t.children[g])
        if (c != kNone) nc++;
      pos.children_pending = nc;
    } else {
      // hand my side's child copies over so the winner can pair them
      MsgChildrenHandover ho;
      ho.position = g;
      for (GuestId c : t.children[g]) {
        if (c == kNone) continue;
        HostId h = holder_of(c, side);
        if (h == kNone) { do_reset(); return; }
        ho.child_holders.push_back({c, h});
        if (h != w && h != s.id) R.actions.push_back(AddEdge{w, h, s.id});
      }
      R.outbox.push_back({s.id, w, ho});
    }
  }

  // Winner-side fan-out for position g: pair the child copies and trigger
  // their resolutions. `handed` carries the loser side's holders when the
  // resolution was cross-host; `loser_side` labels them.
  void spawn_children(GuestId g, const std::vector<std::pair<GuestId, HostId>>* handed,
                      std::int32_t loser_side) {
    auto it = s.merge.positions.find(g);
    if (it == s.merge.positions.end() || !it->second.winner) return;
    std::map<HostId, MsgResolveTrigger> batches;
    bool retry = false;
    for (GuestId c : tree().children[g]) {
      if (c == kNone) continue;
      HostId ha = holder_of(c, s.merge.side);
      HostId hb_ = holder_of(c, s.merge.partner_cluster);
      if (handed)
        for (auto [cc, h] : *handed)
          if (cc == c) {
            if (loser_side == s.merge.side) ha = h;
            else hb_ = h;
          }
      if (ha == kNone || hb_ == kNone) {
        retry = true;
        continue;
      }
      if (ha != hb_ && ha != s.id && hb_ != s.id)
        R.actions.push_back(AddEdge{ha, hb_, s.id});
      auto enqueue = [&](HostId to, HostId counterpart) {
        if (to == s.id) {
          if (!s.merge.positions.count(c)) {
            MergePosition p;
            p.counterpart = counterpart;
            p.parent_winner = s.id;
            p.deferred = true;
            s.merge.positions.emplace(c, p);
            s.merge.unresolved++;
          }
        } else {
          auto& b = batches[to];
          b.items.push_back({c, ha, hb_});
          b.parent_winner = s.id;
          b.parent_position = g;
        }
      };
      if (ha == hb_) {
        enqueue(ha, ha);  // collocated: one holder resolves internally
      } else {
        enqueue(ha, hb_);
        enqueue(hb_, ha);
      }
    }
    if (retry) s.merge.spawn_queue.push_back(g);  // holder not visible yet
    for (auto& [to, msg] : batches) R.outbox.push_back({s.id, to, msg});
  }

  void flush_merge_feedback() {
    const GuestTree& t = tree();
    bool evidence = own_fault_evidence();
    bool progressed = true;
    while (progressed) {
      progressed = false;
      for (auto& [g, pos] : s.merge.positions) {
        if (!pos.resolved || !pos.winner || pos.fb_sent || pos.children_pending > 0)
          continue;
        bool fa = pos.fb_faulty || evidence;
        bool fo = pos.fb_followed || s.merge.followed_during_merge;
        pos.fb_sent = true;
        progressed = true;
        if (pos.parent_winner == kNone) {
          // whole-tree feedback returned to the merged root
          R.merge_completed = true;
          s.faulty_bit = 1;
          s.committed = false;
          s.selected_leader_host = kNone;
          s.selected_leader_cluster = kNone;
          s.root_phase = RootPhase::Idle;
          if (!fa) {
            s.pending_wave = WaveKind::Announce;
            s.role = RoleKind::Unassigned;
          } else if (fo) {
            s.pending_wave = WaveKind::OpenLead;
            s.role = RoleKind::Unassigned;
          } else {
            s.role = RoleKind::Unassigned;
          }
        } else if (pos.parent_winner == s.id) {
          auto pit = s.merge.positions.find(t.parent[g]);
          if (pit != s.merge.positions.end() && pit->second.winner) {
            pit->second.children_pending--;
            pit->second.fb_faulty |= fa;
            pit->second.fb_followed |= fo;
          }
        } else {
          R.outbox.push_back({s.id, pos.parent_winner,
                              MsgMergeFeedback{t.parent[g], fa, fo}});
        }
      }
    }
  }

  void run_merge() {
    // finalize a merge completed last round
    if (s.merge.active && s.merge.clear_pending) {
      finish_merge();
    }

    // a waiting follower root accepts its assignment
    if (!s.merge.active && s.root_phase == RootPhase::AwaitPartner &&
        !partner_msgs.empty() && s.range(N()).contains(root_guest())) {
      std::sort(partner_msgs.begin(), partner_msgs.end(),
                [](const auto& a, const auto& b) { return a.first < b.first; });
      const auto& pa = partner_msgs.front().second;
      if (pa.partner_cluster != s.cluster) {
        activate_merge(pa.partner_cluster, pa.partner_root);
        s.root_phase = RootPhase::MergeRunning;
        s.pending_wave = WaveKind::MergePrep;
      }
    }
    if (!s.merge.active) return;

    s.merge.rounds_in_merge++;

    // sticky: someone out there is following this merging node
    for (const auto& [id, v] : nb)
      if (v->follows(s.id) && nbr_side(*v) != s.merge.side &&
          nbr_side(*v) != s.merge.partner_cluster)
        s.merge.followed_during_merge = true;

    // pre-resolution abort: the partner root never joined or walked away
    if (i_am_merge_root() && !s.merge.resolve_started) {
      const HbView* pr = hb(s.merge.partner_root);
      bool contradiction =
          pr && ((pr->merge_active && (pr->merge_partner != s.merge.side ||
                                       pr->merge_side != s.merge.partner_cluster)) ||
                 pr->reset_last_round);
      bool silent_too_long = (!pr || !pr->merge_active) && s.merge.rounds_in_merge > 6;
      if (contradiction || silent_too_long) {
        abort_merge();
        return;
      }
    }

    // remove pre-existing matched edges, each exactly once, when both
    // endpoints hold the true shared sequence; edges re-created afterwards
    // belong to the resolution and stay
    if (s.merge.prep_received && !s.merge.resolve_started) {
      bool mine_ok = psi_check(s.merge.psi_round, s.merge.psi_bits);
      for (const auto& [id, v] : nb) {
        if (!v->merge_active || v->merge_side != s.merge.partner_cluster ||
            v->merge_partner != s.merge.side || !v->prep_received)
          continue;
        bool root_root = i_am_merge_root() && v->id == s.merge.partner_root;
        if (root_root) continue;
        if (!s.merge.cut_candidates.count(v->id)) continue;
        if (s.merge.cut_done.count(v->id)) continue;
        if (mine_ok && psi_check(v->psi_round, v->psi_bits)) {
          s.merge.cut_done.insert(v->id);
          R.actions.push_back(DeleteEdge{s.id, v->id});
          R.forged_cut |= s.merge.psi_planted;
        }
      }
    }

    // both prep waves done: start resolving at the roots
    if (i_am_merge_root() && s.merge.prep_done && !s.merge.resolve_started) {
      const HbView* pr = hb(s.merge.partner_root);
      if (pr && pr->merge_active && pr->prep_done &&
          pr->merge_partner == s.merge.side &&
          pr->merge_side == s.merge.partner_cluster) {
        s.merge.resolve_started = true;
        MergePosition p;
        p.counterpart = s.merge.partner_root;
        p.parent_winner = kNone;
        s.merge.positions.emplace(root_guest(), p);
        s.merge.unresolved++;
      }
    }

    // adopt intervals ceded to this host a round ago
    for (const auto* xf : transfers)
      for (const auto& h : xf->items) holdings_add(h);

    // triggers name positions whose copies resolve this round
    for (const auto* tg : triggers) {
      for (const auto& item : tg->items) {
        std::int32_t side = copy_side(item.position);
        if (side == kNone) {
          // the copy moved on; pass the trigger to wherever it went
          if (tg->ttl > 0) {
            for (const auto& [h, to] : s.merge.sent_away)
              if (h.range.contains(item.position)) {
                MsgResolveTrigger fwd;
                fwd.items.push_back(item);
                fwd.parent_winner = tg->parent_winner;
                fwd.parent_position = tg->parent_position;
                fwd.ttl = tg->ttl - 1;
                R.outbox.push_back({s.id, to, fwd});
                break;
              }
          }
          continue;
        }
        if (s.merge.positions.count(item.position)) continue;
        HostId other = item.holder_side_a == s.id ? item.holder_side_b : item.holder_side_a;
        s.merge.resolve_started = true;
        MergePosition p;
        p.counterpart = other == s.id ? item.holder_side_a : other;
        p.parent_winner = tg->parent_winner;
        s.merge.positions.emplace(item.position, p);
        s.merge.unresolved++;
      }
    }

    // winner fan-out queued by last round's resolutions
    {
      std::vector<GuestId> q;
      std::swap(q, s.merge.spawn_queue);
      std::sort(q.begin(), q.end());
      q.erase(std::unique(q.begin(), q.end()), q.end());
      for (GuestId g : q) spawn_children(g, nullptr, kNone);
    }
    for (const auto* ho : handovers) {
      std::int32_t my_side_of = copy_side(ho->position);
      std::int32_t loser_side = my_side_of == s.merge.side ? s.merge.partner_cluster
                                                           : s.merge.side;
      spawn_children(ho->position, &ho->child_holders, loser_side);
    }

    for (auto& [g, pos] : s.merge.positions) {
      if (reset_now) return;
      if (!pos.resolved && !pos.deferred) resolve_position(g, pos);
    }
    if (reset_now) return;

    for (const auto& mf : merge_fbs) {
      auto it = s.merge.positions.find(mf.position);
      if (it != s.merge.positions.end() && it->second.winner && it->second.resolved) {
        it->second.children_pending--;
        it->second.fb_faulty |= mf.faulty;
        it->second.fb_followed |= mf.followed;
      }
    }

    flush_merge_feedback();

    // done once every copy this host still owns has met its counterpart and
    // all winner feedback has moved up
    if (!s.merge.clear_pending && s.merge.resolve_started) {
      bool all_done = s.merge.spawn_queue.empty();
      for (const auto& h : s.merge.holdings) {
        for (GuestId g = h.range.lo; g < h.range.hi && all_done; ++g) {
          auto it = s.merge.positions.find(g);
          if (it == s.merge.positions.end() || !it->second.resolved ||
              (it->second.winner && !it->second.fb_sent))
            all_done = false;
        }
        if (!all_done) break;
      }
      if (all_done) s.merge.clear_pending = true;
    }

    for (auto& [g, pos] : s.merge.positions) pos.deferred = false;
  }

  // ---- PFC wave machinery -------------------------------------------------

  // Phase of guest x at round start, looked up internally or in a same-side
  // neighbor's boundary summary. Returns false when no holder is visible.
  bool phase_at(GuestId x, PfcPhase& ph, std::uint64_t& key) const {
    Range mine = prev.merge.active && prev.wave.kind == WaveKind::MergePrep
                     ? prev.merge.orig_range
                     : prev.range(N());
    if (mine.contains(x)) {
      ph = prev.phase_of(x);
      key = prev.wave.key();
      return true;
    }
    for (const auto& [id, v] : nb) {
      if (!wave_peer(*v)) continue;
      Range r = peer_range(*v);
      if (!r.contains(x)) continue;
      ph = v->phase_of(x);
      key = v->wave_key_of(x);
      return true;
    }
    return false;
  }

  bool children_all(GuestId g, PfcPhase want, std::uint64_t want_key) const {
    for (GuestId c : tree().children[g]) {
      if (c == kNone) continue;
      PfcPhase ph;
      std::uint64_t key;
      if (!phase_at(c, ph, key)) return false;
      if (ph != want) return false;
      if (want != PfcPhase::Clean && key != want_key) return false;
    }
    return true;
  }

  void adopt_wave(const WaveInfo& info) {
    // buffers from the previous wave are dropped; their edges stay behind as
    // ordinary inter-cluster edges (deleting one could strand a singleton
    // whose only link was the forwarded edge)
    s.pending_fb.clear();
    s.root_candidates.clear();
    s.handed_followers.clear();
    s.wave = info;
    s.mark_claimed = false;
    s.pairing_done = false;
    s.wait_rounds = 0;
    s.wave_rounds = 0;

    switch (info.kind) {
      case WaveKind::OpenLead:
        s.role = RoleKind::OpenLeader;
        s.committed = false;
        s.follow_target = kNone;
        break;
      case WaveKind::CloseConnect:
        s.role = RoleKind::ClosedLeader;
        break;
      case WaveKind::FollowerPoll:
        s.role = info.a == 0 ? RoleKind::ShortFollower : RoleKind::LongFollower;
        s.committed = false;
        break;
      case WaveKind::LeaderInform:
        s.committed = true;
        s.selected_leader_host = info.a;
        s.selected_leader_cluster = info.b;
        s.follow_target = kNone;
        break;
      case WaveKind::MergePrep: {
        if (s.merge.active && s.merge.partner_cluster != info.a) {
          // stale leftover from an aborted merge
          s.cluster = s.merge.side;
          s.merge = MergeState{};
        }
        if (!s.merge.active) activate_merge(info.a, info.b);
        s.merge.prep_received = true;
        s.merge.psi_round = info.psi_round;
        s.merge.psi_bits = info.psi_bits;
        s.merge.psi_ok = psi_check(info.psi_round, info.psi_bits);
        s.merge.psi_planted = false;
        // only edges that already exist now are "matched edges"; anything the
        // resolution creates later must survive
        for (const auto& [id, v] : nb) s.merge.cut_candidates.insert(id);
        s.cluster = s.merge.new_cluster;
        s.role = RoleKind::Merging;
        break;
      }
      case WaveKind::Announce:
        s.faulty_bit = 0;
        s.role = RoleKind::Unassigned;
        s.committed = false;
        break;
      case WaveKind::None:
        break;
    }
  }

  // ConnectFollowers wait: block while anyone still funnels an edge at me.
  bool pairing_blocked() const {
    for (const auto& [id, v] : nb) {
      if (!v->follows(s.id)) continue;
      bool ready = v->root_waiting && v->committed && v->selected_leader_host == s.id;
      if (!ready) return true;
    }
    return false;
  }

  HostId parent_host_of_top() const {
    Range mine = s.range(N());
    GuestId tg = top_guest(N(), mine);
    GuestId p = tree().parent[tg];
    if (p == kNone) return kNone;
    for (const auto& [id, v] : nb)
      if (wave_peer(*v) && peer_range(*v).contains(p)) return v->id;
    return kNone;
  }

  void do_pairing() {
    std::vector<std::pair<std::int32_t, HostId>> ready;  // (cluster, host)
    for (const auto& [id, v] : nb)
      if (v->root_waiting && v->committed && v->selected_leader_host == s.id)
        ready.push_back({v->cluster, v->id});
    for (auto [h, c] : s.handed_followers) {
      const HbView* v = hb(h);
      if (v && v->root_waiting) ready.push_back({v->cluster, v->id});
    }
    std::sort(ready.begin(), ready.end());
    ready.erase(std::unique(ready.begin(), ready.end(),
                            [](const auto& a, const auto& b) { return a.second == b.second; }),
                ready.end());
    std::size_t i = 0;
    for (; i + 1 < ready.size(); i += 2) {
      auto [c0, b0] = ready[i];
      auto [c1, b1] = ready[i + 1];
      R.actions.push_back(AddEdge{b0, b1, s.id});
      R.outbox.push_back({s.id, b0, MsgPartnerAssigned{c1, b1}});
      R.outbox.push_back({s.id, b1, MsgPartnerAssigned{c0, b0}});
      R.actions.push_back(DeleteEdge{s.id, b1});
    }
    if (i < ready.size()) {
      auto [lc, lb] = ready[i];
      if (s.range(N()).contains(root_guest())) {
        // the root adopts the final follower as its own merge partner
        activate_merge(lc, lb);
        s.root_phase = RootPhase::MergeRunning;
        s.pending_wave = WaveKind::MergePrep;
        R.outbox.push_back({s.id, lb, MsgPartnerAssigned{s.merge.side, s.id}});
      } else {
        HostId ph = parent_host_of_top();
        if (ph != kNone) {
          R.actions.push_back(AddEdge{ph, lb, s.id});
          R.actions.push_back(DeleteEdge{s.id, lb});
          R.outbox.push_back({s.id, ph, MsgForwardFollower{lb, lc}});
          R.outbox.push_back({s.id, lb, MsgFollowRedirect{ph}});
        }
      }
    }
    s.handed_followers.clear();
  }

  // Feedback hook for guest g; returns false when the action blocks the wave.
  bool feedback_action(GuestId g) {
    Range mine = s.range(N());
    bool is_top = g == top_guest(N(), mine);
    if (s.wave.kind == WaveKind::CloseConnect && is_top && !s.pairing_done) {
      if (pairing_blocked()) {
        s.wait_rounds++;
        return false;
      }
      do_pairing();
      s.pairing_done = true;
    }

    bool fb_faulty = own_fault_evidence();
    std::vector<LeaderCandidate> cands;
    auto acc_it = s.pending_fb.find(g);
    if (acc_it != s.pending_fb.end()) {
      fb_faulty |= acc_it->second.faulty;
      cands = acc_it->second.candidates;
      s.pending_fb.erase(acc_it);
    }
    if (s.wave.kind == WaveKind::FollowerPoll && !s.mark_claimed &&
        s.follow_target != kNone && mark_target_valid(s.follow_target)) {
      const HbView* v = hb(s.follow_target);
      cands.push_back({s.follow_target, eff_cluster(*v, N()), false});
      s.mark_claimed = true;
      s.follow_target = kNone;
    }

    LeaderCandidate winner;
    bool have_winner = false;
    if (s.wave.kind == WaveKind::FollowerPoll && !cands.empty()) {
      std::sort(cands.begin(), cands.end());
      std::set<HostId> seen;
      std::vector<LeaderCandidate> uniq;
      for (const auto& c : cands)
        if (seen.insert(c.leader_host).second) uniq.push_back(c);
      winner = uniq.front();
      have_winner = true;
      // losing candidates keep their edges; only the forwarded one moves
    }

    GuestId p = tree().parent[g];
    if (p == kNone || !mine.contains(p)) {
      if (p == kNone) {
        // root guest: results land at the root machine
        s.root_fb_faulty = fb_faulty;
        if (have_winner) s.root_candidates.push_back(winner);
        root_got_feedback = true;
      } else {
        HostId ph = kNone;
        for (const auto& [id, v] : nb)
          if (wave_peer(*v) && peer_range(*v).contains(p)) { ph = v->id; break; }
        if (ph != kNone) {
          MsgFbData fb;
          fb.parent_position = p;
          fb.faulty_or = fb_faulty;
          if (have_winner) {
            R.actions.push_back(AddEdge{ph, winner.leader_host, s.id});
            R.actions.push_back(DeleteEdge{s.id, winner.leader_host});
            LeaderCandidate fwd = winner;
            fwd.edge_is_chain = true;
            fb.candidates.push_back(fwd);
          }
          R.outbox.push_back({s.id, ph, fb});
        }
      }
    } else {
      auto& acc = s.pending_fb[p];
      acc.faulty |= fb_faulty;
      if (have_winner) acc.candidates.push_back(winner);
    }
    return true;
  }

  void run_pfc() {
    struct Transition {
      GuestId g;
      PfcPhase to;
      WaveInfo adopt;   // only for Clean->Propagate
      bool adopts{false};
    };
    std::vector<Transition> fires;
    // the prep wave runs on the embedding the merge started from; pointer
    // updates during resolution must not reshape its cleanup
    Range mine = prev.merge.active && prev.wave.kind == WaveKind::MergePrep
                     ? prev.merge.orig_range
                     : prev.range(N());
    if (mine.lo >= mine.hi) return;
    const GuestTree& t = tree();
    std::uint64_t my_key = prev.wave.key();

    std::set<GuestId> prop_candidates;
    for (const auto& [g, ph] : prev.pfc)
      if (ph == PfcPhase::Propagate)
        for (GuestId c : t.children[g])
          if (c != kNone && mine.contains(c) && prev.phase_of(c) == PfcPhase::Clean)
            prop_candidates.insert(c);
    for (GuestId g : boundary_guests(N(), mine)) {
      if (prev.phase_of(g) != PfcPhase::Clean) continue;
      GuestId p = t.parent[g];
      if (p == kNone || mine.contains(p)) continue;
      prop_candidates.insert(g);
    }
    for (GuestId g : prop_candidates) {
      GuestId p = t.parent[g];
      if (p == kNone) continue;
      PfcPhase pph;
      std::uint64_t pkey;
      if (!phase_at(p, pph, pkey)) continue;
      if (pph != PfcPhase::Propagate) continue;
      if (!children_all(g, PfcPhase::Clean, 0)) continue;
      WaveInfo info;
      if (mine.contains(p)) {
        info = prev.wave;
      } else {
        const HbView* v = nullptr;
        for (const auto& [id, w] : nb)
          if (wave_peer(*w) && peer_range(*w).contains(p)) { v = w; break; }
        if (!v || v->wave.key() != pkey) continue;  // payload not visible yet
        info = v->wave;
      }
      fires.push_back({g, PfcPhase::Propagate, info, true});
    }

    for (const auto& [g, ph] : prev.pfc) {
      if (ph == PfcPhase::Propagate) {
        bool parent_ok = false;
        GuestId p = t.parent[g];
        if (p == kNone) {
          parent_ok = true;
        } else {
          PfcPhase pph;
          std::uint64_t pkey;
          if (phase_at(p, pph, pkey) && pph == PfcPhase::Propagate && pkey == my_key)
            parent_ok = true;
        }
        if (parent_ok && children_all(g, PfcPhase::Feedback, my_key))
          fires.push_back({g, PfcPhase::Feedback, {}, false});
      } else if (ph == PfcPhase::Feedback) {
        bool parent_ok = false;
        GuestId p = t.parent[g];
        if (p == kNone) {
          parent_ok = true;
        } else {
          PfcPhase pph;
          std::uint64_t pkey;
          if (phase_at(p, pph, pkey) && pph == PfcPhase::Feedback && pkey == my_key)
            parent_ok = true;
        }
        if (parent_ok && children_all(g, PfcPhase::Clean, 0))
          fires.push_back({g, PfcPhase::Clean, {}, false});
      }
    }

    std::sort(fires.begin(), fires.end(),
              [](const Transition& a, const Transition& b) { return a.g < b.g; });

    // adopt a freshly arriving wave once per host
    for (const auto& f : fires)
      if (f.adopts && f.adopt.key() != s.wave.key()) {
        adopt_wave(f.adopt);
        break;
      }

    for (const auto& f : fires) {
      if (f.adopts && f.adopt.key() != s.wave.key()) continue;  // different wave, wait
      if (f.to == PfcPhase::Feedback) {
        if (!feedback_action(f.g)) continue;  // action blocked; stay in Propagate
      }
      s.set_phase(f.g, f.to);
      // the root guest cleans last: its cleanup marks the wave fully done,
      // which is what the merge start waits for
      if (f.to == PfcPhase::Clean && f.g == root_guest() && s.merge.active &&
          s.wave.kind == WaveKind::MergePrep)
        s.merge.prep_done = true;
    }
  }

  // ---- root machine -------------------------------------------------------

  bool hosts_root_guest() const { return s.range(N()).contains(root_guest()); }

  bool all_clean_at_start() const {
    if (!prev.pfc.empty()) return false;
    GuestId rg = root_guest();
    for (GuestId c : tree().children[rg]) {
      if (c == kNone) continue;
      PfcPhase ph;
      std::uint64_t key;
      if (!phase_at(c, ph, key)) return false;
      if (ph != PfcPhase::Clean) return false;
    }
    return true;
  }

  void initiate(WaveKind kind, std::int32_t a, std::int32_t b) {
    WaveInfo info;
    info.kind = kind;
    info.a = a;
    info.b = b;
    info.seq = s.wave.seq + 1;
    if (kind == WaveKind::MergePrep) {
      info.psi_round = static_cast<std::int32_t>(in.round);
      info.psi_bits = in.psi ? in.psi(info.psi_round) : 0;
    }
    adopt_wave(info);
    s.set_phase(root_guest(), PfcPhase::Propagate);
    if (kind == WaveKind::MergePrep)
      s.root_phase = RootPhase::MergeRunning;
    else if (kind != WaveKind::LeaderInform)
      s.root_phase = RootPhase::Waving;
    s.pending_wave = WaveKind::None;
  }

  void run_root() {
    if (!hosts_root_guest()) return;

    if (root_got_feedback && !s.merge.active) {
      switch (s.wave.kind) {
        case WaveKind::OpenLead:
          s.pending_wave = WaveKind::CloseConnect;
          break;
        case WaveKind::CloseConnect:
          if (!s.merge.active) s.role = RoleKind::Unassigned;
          s.root_phase = s.merge.active ? RootPhase::MergeRunning : RootPhase::Idle;
          break;
        case WaveKind::FollowerPoll: {
          if (!s.root_candidates.empty()) {
            std::sort(s.root_candidates.begin(), s.root_candidates.end());
            std::set<HostId> seen;
            std::vector<LeaderCandidate> uniq;
            for (const auto& c : s.root_candidates)
              if (seen.insert(c.leader_host).second) uniq.push_back(c);
            s.selected_leader_host = uniq.front().leader_host;
            s.selected_leader_cluster = uniq.front().leader_cluster;
            s.committed = true;
            s.root_candidates.clear();
            // waiting starts at selection; the inform wave runs alongside
            s.root_phase = RootPhase::AwaitPartner;
            s.await_rounds = 0;
            s.pending_wave = WaveKind::LeaderInform;
          } else {
            s.poll_remaining--;
            if (s.poll_remaining > 0) {
              s.pending_wave = WaveKind::FollowerPoll;
            } else {
              s.role = RoleKind::Unassigned;
              s.root_phase = RootPhase::Idle;
            }
          }
          break;
        }
        case WaveKind::LeaderInform:
          break;  // already waiting since the selection
        default:
          break;
      }
      if (s.wave.kind != WaveKind::Announce && s.wave.kind != WaveKind::MergePrep &&
          !s.merge.active && !s.root_fb_faulty && s.faulty_bit == 1) {
        s.pending_wave = WaveKind::Announce;
        s.role = RoleKind::Unassigned;
        s.committed = false;
        s.root_phase = RootPhase::Idle;
      }
    }
    if (s.root_phase == RootPhase::AwaitPartner && !s.merge.active) {
      const HbView* v = hb(s.selected_leader_host);
      // Unassigned is tolerated: a cluster that was followed during its merge
      // re-opens as a leader within a couple of rounds of clearing
      bool valid = v && !v->reset_last_round &&
                   eff_cluster(*v, N()) != s.cluster &&
                   (v->role == RoleKind::OpenLeader || v->role == RoleKind::ClosedLeader ||
                    v->role == RoleKind::Unassigned || v->merge_active);
      if (valid) s.selected_leader_cluster = eff_cluster(*v, N());
      if (!valid || s.await_rounds > timing::partner_watchdog(N())) {
        s.committed = false;
        s.selected_leader_host = kNone;
        s.selected_leader_cluster = kNone;
        s.role = RoleKind::Unassigned;
        s.root_phase = RootPhase::Idle;
      }
    }

    // initiate the next wave once everything is clean
    bool may_initiate =
        s.root_phase == RootPhase::Idle || s.root_phase == RootPhase::Waving ||
        (s.root_phase == RootPhase::MergeRunning && s.pending_wave == WaveKind::MergePrep) ||
        (s.root_phase == RootPhase::AwaitPartner && s.pending_wave == WaveKind::LeaderInform);
    if (!may_initiate || !all_clean_at_start() || root_got_feedback) return;
    if (!s.pfc.empty()) return;

    if (s.pending_wave != WaveKind::None) {
      WaveKind k = s.pending_wave;
      // only the prep wave runs inside a merge; everything else waits a full
      // round past the merge clear so it propagates over the final embedding
      if (k != WaveKind::MergePrep && (s.merge.active || prev.merge.active)) return;
      std::int32_t a = kNone, b = kNone;
      if (k == WaveKind::FollowerPoll) a = s.role == RoleKind::ShortFollower ? 0 : 1;
      if (k == WaveKind::LeaderInform) { a = s.selected_leader_host; b = s.selected_leader_cluster; }
      if (k == WaveKind::MergePrep) { a = s.merge.partner_cluster; b = s.merge.partner_root; }
      initiate(k, a, b);
      return;
    }
    if (s.merge.active || prev.merge.active || s.faulty_bit == 0) return;
    if (s.root_phase == RootPhase::Idle && s.role == RoleKind::Unassigned) {
      bool leader = (node_draw(in.rng_base, s.draw_counter++) & 1) == 0;
      if (leader) {
        initiate(WaveKind::OpenLead, kNone, kNone);
      } else {
        bool short_f = (node_draw(in.rng_base, s.draw_counter++) & 1) == 0;
        s.poll_remaining = short_f ? 2 : 12;
        initiate(WaveKind::FollowerPoll, short_f ? 0 : 1, kNone);
      }
    }
  }

  // -------------------------------------------------------------------------

  StepResult run() {
    if (reset_fault(prev, in.neighbors, in.N)) {
      do_reset();
      return std::move(R);
    }
    s.reset_last_round = false;
    for (const auto& v : in.neighbors) nb[v.id] = &v;
    ingest();

    if (s.root_phase == RootPhase::AwaitPartner) s.await_rounds++;
    if (s.wave.kind != WaveKind::None && !prev.pfc.empty()) s.wave_rounds++;

    scan_for_leaders();
    run_merge();
    if (reset_now) return std::move(R);
    maybe_prune();
    run_pfc();
    run_root();
    return std::move(R);
  }
};

}  // namespace detail

inline StepResult step(const NodeState& prev, const RoundInputs& in) {
  detail::StepCtx ctx(prev, in);
  StepResult r = ctx.run();
  r.state = std::move(ctx.s);
  return r;
}

}  // namespace avatar
