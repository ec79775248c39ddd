#pragma once

// Per-node protocol state, the per-round exchanged neighbor summary, message
// payloads and topology actions. The engine snapshots these between rounds;
// the protocol's step function only ever reads previous-round copies.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "avatar/topology.hpp"

namespace avatar {

enum class PfcPhase : std::uint8_t { Clean = 0, Propagate = 1, Feedback = 2 };

enum class WaveKind : std::uint8_t {
  None = 0,
  OpenLead,      // set every member to open leader
  CloseConnect,  // close leaders; feedback action pairs attached followers
  FollowerPoll,  // distribute follower role, collect potential-leader edges
  LeaderInform,  // commit the cluster to one selected leader
  MergePrep,     // distribute merge partner + shared-sequence sample
  Announce,      // termination: clear faulty bits
};

enum class RoleKind : std::uint8_t {
  Unassigned = 0,
  OpenLeader,
  ClosedLeader,
  ShortFollower,
  LongFollower,
  Merging,
};

inline bool is_follower_role(RoleKind r) {
  return r == RoleKind::ShortFollower || r == RoleKind::LongFollower;
}

// Payload identity for a wave; nodes compare keys when checking that adjacent
// guests ride the same wave.
struct WaveInfo {
  WaveKind kind{WaveKind::None};
  std::int32_t a{kNone};   // FollowerPoll: 0 short / 1 long. LeaderInform: leader host.
                           // MergePrep: partner cluster.
  std::int32_t b{kNone};   // LeaderInform: leader cluster. MergePrep: partner root.
  std::int32_t psi_round{kNone};
  std::uint64_t psi_bits{0};
  std::int32_t seq{0};     // distinguishes successive waves of the same kind

  bool operator==(const WaveInfo&) const = default;
  std::uint64_t key() const {
    if (kind == WaveKind::None) return 0;
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&](std::uint64_t v) { h ^= v; h *= 1099511628211ull; };
    mix(static_cast<std::uint64_t>(kind));
    mix(static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)));
    mix(static_cast<std::uint64_t>(static_cast<std::uint32_t>(b)));
    mix(static_cast<std::uint64_t>(static_cast<std::uint32_t>(psi_round)));
    mix(psi_bits);
    mix(static_cast<std::uint64_t>(static_cast<std::uint32_t>(seq)));
    return h;
  }
};

// A potential-leader edge travelling up a follower tree.
struct LeaderCandidate {
  HostId leader_host{kNone};
  std::int32_t leader_cluster{kNone};
  bool edge_is_chain{false};  // edge was created by a child forward (delete on drop)
  bool operator<(const LeaderCandidate& o) const {
    if (leader_cluster != o.leader_cluster) return leader_cluster < o.leader_cluster;
    return leader_host < o.leader_host;
  }
};

// Feedback data accumulating at a guest position until its own transition.
struct FbAccum {
  bool faulty{false};
  std::vector<LeaderCandidate> candidates;
};

// Root-side phase of the matching/merging loop.
enum class RootPhase : std::uint8_t {
  Idle = 0,       // needs a role draw
  Waving,         // a wave is in flight
  AwaitPartner,   // follower committed to a leader, waiting for assignment
  MergeRunning,
};

// One guest position this host still owns a copy of during a merge.
struct MergePosition {
  bool resolved{false};
  bool winner{false};
  bool deferred{false};         // created this round; acts next round
  bool internal{false};         // both copies live here after transfers
  HostId counterpart{kNone};    // host of the other cluster's copy
  HostId parent_winner{kNone};  // where the merge feedback for the parent goes
  std::int32_t children_pending{0};
  bool fb_faulty{false};
  bool fb_followed{false};
  bool fb_sent{false};

  bool operator==(const MergePosition&) const = default;
};

// Copy-ownership interval: which host currently hosts a side's guest copies.
struct Holding {
  Range range{0, 0};
  std::int32_t side{kNone};
  bool operator==(const Holding&) const = default;
};

struct MergeState {
  bool active{false};
  std::int32_t partner_cluster{kNone};
  HostId partner_root{kNone};
  std::int32_t side{kNone};     // cluster id this host entered the merge with
  Range orig_range{0, 0};
  bool prep_received{false};
  std::int32_t psi_round{kNone};
  std::uint64_t psi_bits{0};
  bool psi_ok{false};
  bool psi_planted{false};      // forged by the initial-configuration adversary
  bool prep_done{false};        // root only: own prep wave completed
  bool resolve_started{false};
  std::int32_t rounds_in_merge{0};
  bool followed_during_merge{false};
  std::int32_t new_cluster{kNone};
  std::map<GuestId, MergePosition> positions;
  std::int32_t unresolved{0};
  bool clear_pending{false};      // all done; prune and drop state next round
  std::set<HostId> cut_candidates;  // neighbors when prep arrived: only their edges are matched
  std::set<HostId> cut_done;        // each matched edge is removed once
  std::vector<Holding> holdings;    // guest copies currently hosted here
  std::vector<std::pair<Holding, HostId>> sent_away;  // intervals ceded, and to whom
  std::vector<GuestId> spawn_queue;  // winner positions whose children pair next round

  bool operator==(const MergeState&) const = default;
};

// Full per-node state. The hosted guest interval is derived from
// (id, cluster_pred, cluster_succ); PFC phases are stored sparsely with
// absent == Clean.
struct NodeState {
  HostId id{kNone};
  std::int32_t cluster{kNone};
  HostId cluster_pred{kNone};
  HostId cluster_succ{kNone};

  RoleKind role{RoleKind::Unassigned};
  bool committed{false};                 // follower: leader selection announced
  HostId selected_leader_host{kNone};
  std::int32_t selected_leader_cluster{kNone};

  std::uint8_t faulty_bit{1};
  bool reset_last_round{false};

  WaveInfo wave;                          // wave this host believes is running
  std::map<GuestId, PfcPhase> pfc;        // non-Clean guests only

  // follower chain bookkeeping
  HostId follow_target{kNone};            // marked potential leader (organic edge)
  bool mark_claimed{false};               // my mark already fed into this wave
  std::map<GuestId, FbAccum> pending_fb;  // keyed by destination guest position

  // leader-side bookkeeping
  std::vector<std::pair<HostId, std::int32_t>> handed_followers;
  bool pairing_done{false};
  std::int32_t wait_rounds{0};            // ConnectFollowers wait watchdog
  std::int32_t wave_rounds{0};            // whole-wave watchdog

  // root machine
  RootPhase root_phase{RootPhase::Idle};
  WaveKind pending_wave{WaveKind::None};
  std::int32_t poll_remaining{0};
  std::int32_t await_rounds{0};
  std::vector<LeaderCandidate> root_candidates;
  bool root_fb_faulty{false};

  MergeState merge;
  bool prune_pending{false};              // drop unjustified edges once peers settle

  std::uint64_t draw_counter{0};          // per-node RNG cursor

  Range range(std::int32_t N) const {
    return Range{cluster_pred == kNone ? 0 : id, cluster_succ == kNone ? N : cluster_succ};
  }
  bool hosts_guest(GuestId g, std::int32_t N) const { return range(N).contains(g); }
  PfcPhase phase_of(GuestId g) const {
    auto it = pfc.find(g);
    return it == pfc.end() ? PfcPhase::Clean : it->second;
  }
  void set_phase(GuestId g, PfcPhase p) {
    if (p == PfcPhase::Clean) pfc.erase(g); else pfc[g] = p;
  }
};

// State summary a node shares with every neighbor each round.
struct GuestPfcView {
  GuestId guest{kNone};
  PfcPhase phase{PfcPhase::Clean};
  std::uint64_t wave_key{0};
};

struct HbView {
  HostId id{kNone};
  std::int32_t cluster{kNone};
  HostId cluster_pred{kNone};
  HostId cluster_succ{kNone};
  std::uint8_t faulty_bit{1};
  bool reset_last_round{false};
  RoleKind role{RoleKind::Unassigned};
  bool committed{false};
  HostId selected_leader_host{kNone};
  std::int32_t selected_leader_cluster{kNone};
  bool root_waiting{false};
  std::vector<HostId> follow_targets;     // marks/chain edges currently held here
  bool merge_active{false};
  std::int32_t merge_partner{kNone};
  std::int32_t merge_side{kNone};
  HostId merge_partner_root{kNone};
  Range merge_orig_range{0, 0};
  bool prep_done{false};
  bool prep_received{false};
  std::int32_t psi_round{kNone};
  std::uint64_t psi_bits{0};
  std::vector<Holding> holdings;
  WaveInfo wave;
  std::vector<GuestPfcView> boundary_pfc;

  Range range(std::int32_t N) const {
    return Range{cluster_pred == kNone ? 0 : id, cluster_succ == kNone ? N : cluster_succ};
  }
  PfcPhase phase_of(GuestId g) const {
    for (const auto& v : boundary_pfc)
      if (v.guest == g) return v.phase;
    return PfcPhase::Clean;
  }
  std::uint64_t wave_key_of(GuestId g) const {
    for (const auto& v : boundary_pfc)
      if (v.guest == g) return v.wave_key;
    return 0;
  }
  bool potential_leader() const { return role == RoleKind::OpenLeader || merge_active; }
  bool follows(HostId h) const {
    for (HostId t : follow_targets)
      if (t == h) return true;
    return false;
  }
};

// ---- messages -------------------------------------------------------------

struct MsgFbData {                 // feedback crossing a host boundary
  GuestId parent_position{kNone};  // guest the payload is addressed to
  bool faulty_or{false};
  std::vector<LeaderCandidate> candidates;  // FollowerPoll only (<=1)
};
struct MsgForwardFollower {        // odd follower handed to the guest parent
  HostId follower_root{kNone};
  std::int32_t follower_cluster{kNone};
};
struct MsgPartnerAssigned {
  std::int32_t partner_cluster{kNone};
  HostId partner_root{kNone};
};
struct MsgFollowRedirect {         // your edge into the leader cluster moved
  HostId new_contact{kNone};
};
struct MsgResolveTrigger {
  struct Item {
    GuestId position{kNone};
    HostId holder_side_a{kNone};   // holder on parent-winner's side
    HostId holder_side_b{kNone};   // holder on the other side
  };
  std::vector<Item> items;
  HostId parent_winner{kNone};
  GuestId parent_position{kNone};
  std::int32_t ttl{4};             // forwarding budget when a holder moved
};
struct MsgTransfer {               // copy intervals ceded to the counterpart
  std::vector<Holding> items;
};
struct MsgChildrenHandover {       // loser tells winner where its child copies live
  GuestId position{kNone};
  std::vector<std::pair<GuestId, HostId>> child_holders;
};
struct MsgMergeFeedback {
  GuestId position{kNone};         // parent position this feeds into
  bool faulty{false};
  bool followed{false};
};

using MessageBody = std::variant<MsgFbData, MsgForwardFollower, MsgPartnerAssigned,
                                 MsgFollowRedirect, MsgResolveTrigger,
                                 MsgChildrenHandover, MsgMergeFeedback, MsgTransfer>;

struct Message {
  HostId from{kNone};
  HostId to{kNone};
  MessageBody body;
};

// ---- topology actions ------------------------------------------------------

struct DeleteEdge {
  HostId u{kNone}, v{kNone};
};
struct AddEdge {
  HostId u{kNone}, w{kNone};
  HostId via{kNone};  // witness: (u,via) and (via,w) must exist in the snapshot
};
using TopologyAction = std::variant<DeleteEdge, AddEdge>;

struct StepResult {
  NodeState state;
  std::vector<Message> outbox;
  std::vector<TopologyAction> actions;
  bool did_reset{false};
  bool merge_completed{false};
  bool forged_cut{false};  // an initially-planted sequence matched and released a cut
};

}  // namespace avatar
