#pragma once

// Synchronous round scheduler: snapshots the configuration, steps every node
// against the previous round's heartbeats and inbox, validates and applies
// topology actions (deletes before adds, witness paths checked against the
// round-start snapshot), and audits connectivity, degree deltas and silence.

#include <cstdint>
#include <deque>
#include <map>
#include <set>
#include <stdexcept>
#include <vector>

#include "avatar/checker.hpp"
#include "avatar/protocol.hpp"
#include "avatar/state.hpp"
#include "avatar/topology.hpp"

namespace avatar {

struct Configuration {
  std::int32_t N{0};
  std::map<HostId, NodeState> nodes;
  std::map<HostId, std::set<HostId>> adj;
  std::int64_t round{0};
  std::uint64_t psi_seed{0};
  std::uint64_t rng_seed{0};
  std::map<HostId, std::vector<Message>> inboxes;

  ConfigView view() const { return ConfigView{N, &nodes, &adj}; }

  std::vector<HostId> hosts() const {
    std::vector<HostId> v;
    for (const auto& [id, s] : nodes) v.push_back(id);
    return v;
  }
  std::int32_t psi_bit_count() const {
    if (N <= 1) return 2;
    std::int32_t k = 2 * (floor_log2(N - 1) + 1);  // 2 * ceil(log2 N)
    return std::min(k, 62);
  }
  std::uint64_t psi(std::int32_t r) const {
    std::uint64_t mask = (1ull << psi_bit_count()) - 1;
    return detail::splitmix64(psi_seed ^ (static_cast<std::uint64_t>(r) * 0x9e3779b97f4a7c15ull + 0xd1b54a32d192ed03ull)) & mask;
  }

  void add_edge(HostId a, HostId b) {
    if (a == b) return;
    adj[a].insert(b);
    adj[b].insert(a);
  }
  bool has_edge(HostId a, HostId b) const {
    auto it = adj.find(a);
    return it != adj.end() && it->second.count(b) > 0;
  }
  std::int32_t degree(HostId a) const {
    auto it = adj.find(a);
    return it == adj.end() ? 0 : static_cast<std::int32_t>(it->second.size());
  }
  std::int32_t max_degree() const {
    std::int32_t m = 0;
    for (const auto& [id, nb] : adj) m = std::max(m, static_cast<std::int32_t>(nb.size()));
    return m;
  }
  bool weakly_connected() const {
    if (nodes.empty()) return true;
    std::set<HostId> seen;
    std::deque<HostId> q{nodes.begin()->first};
    seen.insert(nodes.begin()->first);
    while (!q.empty()) {
      HostId u = q.front();
      q.pop_front();
      auto it = adj.find(u);
      if (it == adj.end()) continue;
      for (HostId v : it->second)
        if (seen.insert(v).second) q.push_back(v);
    }
    return seen.size() == nodes.size();
  }
};

struct RoundTrace {
  std::int64_t round{0};
  std::int32_t cluster_count{0};
  std::int32_t detector_count{-1};  // computed only when requested
  std::int32_t max_degree{0};
  std::int32_t max_degree_so_far{0};
  std::int32_t actions_emitted{0};
  std::int32_t actions_applied{0};
  std::int32_t actions_rejected{0};
  std::int32_t resets{0};
  std::int32_t merges{0};
  std::int32_t max_sender_delta{0};  // most nodes one sender added to one neighborhood
  bool messages_changed{true};
  bool connected{true};
  std::int32_t forged_cuts{0};
  std::vector<std::int32_t> degrees;  // full traces only, in host order
};

struct ExperimentResult {
  std::int64_t converged_round{-1};
  std::int64_t rounds_executed{0};
  std::int32_t max_degree_during_run{0};
  std::int32_t initial_max_degree{0};
  std::int32_t final_topology_max_degree{0};
  double degree_expansion{1.0};
  std::int64_t reset_count{0};
  std::int64_t merge_count{0};
  bool connectivity_ok{true};
  bool silence_ok{true};
  bool any_forgery_success{false};
  std::int32_t max_sender_delta{0};
};

struct RunOptions {
  std::int64_t max_rounds{0};      // 0: use 200*(levels)^2 default
  std::int32_t extend_rounds{-1};  // silent rounds required after convergence
  bool full_trace{false};
  bool detectors_each_round{false};
  bool stop_on_convergence{true};
};

struct RunOutput {
  Configuration config;
  std::vector<RoundTrace> trace;
  ExperimentResult result;
};

inline std::int64_t default_max_rounds(std::int32_t N) {
  std::int64_t l = num_levels(N);
  return 200 * l * l;
}

// Legal final configuration: no detectors, one cluster covering everything,
// the canonical edge set, and all faulty bits cleared.
inline bool check_convergence(const Configuration& cfg) {
  if (cfg.nodes.empty()) return false;
  std::vector<HostId> V = cfg.hosts();
  HostId root_host = host_of(cbt_root(cfg.N), V);
  for (const auto& [id, s] : cfg.nodes) {
    if (s.cluster != root_host) return false;
    if (s.faulty_bit != 0) return false;
    if (s.merge.active) return false;
  }
  EdgeSet want = avatar_edges(cfg.N, V);
  std::size_t edge_count = 0;
  for (const auto& [id, nb] : cfg.adj) edge_count += nb.size();
  if (edge_count != 2 * want.size()) return false;
  for (const auto& [e, tags] : want.edges)
    if (!cfg.has_edge(e.first, e.second)) return false;
  return detectors(cfg.view()).empty();
}

namespace detail {

inline void mix_hash(std::uint64_t& h, std::uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
}

inline std::uint64_t message_hash(const Message& m) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  mix_hash(h, static_cast<std::uint32_t>(m.from));
  mix_hash(h, static_cast<std::uint32_t>(m.to));
  mix_hash(h, m.body.index());
  std::visit(
      [&](const auto& b) {
        using T = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<T, MsgFbData>) {
          mix_hash(h, static_cast<std::uint32_t>(b.parent_position));
          mix_hash(h, b.faulty_or);
          for (const auto& c : b.candidates) {
            mix_hash(h, static_cast<std::uint32_t>(c.leader_host));
            mix_hash(h, static_cast<std::uint32_t>(c.leader_cluster));
          }
        } else if constexpr (std::is_same_v<T, MsgForwardFollower>) {
          mix_hash(h, static_cast<std::uint32_t>(b.follower_root));
          mix_hash(h, static_cast<std::uint32_t>(b.follower_cluster));
        } else if constexpr (std::is_same_v<T, MsgPartnerAssigned>) {
          mix_hash(h, static_cast<std::uint32_t>(b.partner_cluster));
          mix_hash(h, static_cast<std::uint32_t>(b.partner_root));
        } else if constexpr (std::is_same_v<T, MsgFollowRedirect>) {
          mix_hash(h, static_cast<std::uint32_t>(b.new_contact));
        } else if constexpr (std::is_same_v<T, MsgResolveTrigger>) {
          for (const auto& it : b.items) {
            mix_hash(h, static_cast<std::uint32_t>(it.position));
            mix_hash(h, static_cast<std::uint32_t>(it.holder_side_a));
            mix_hash(h, static_cast<std::uint32_t>(it.holder_side_b));
          }
          mix_hash(h, static_cast<std::uint32_t>(b.parent_winner));
        } else if constexpr (std::is_same_v<T, MsgChildrenHandover>) {
          mix_hash(h, static_cast<std::uint32_t>(b.position));
          for (auto [c, hh] : b.child_holders) {
            mix_hash(h, static_cast<std::uint32_t>(c));
            mix_hash(h, static_cast<std::uint32_t>(hh));
          }
        } else if constexpr (std::is_same_v<T, MsgMergeFeedback>) {
          mix_hash(h, static_cast<std::uint32_t>(b.position));
          mix_hash(h, b.faulty);
          mix_hash(h, b.followed);
        }
      },
      m.body);
  return h;
}

inline std::uint64_t heartbeat_hash(const HbView& v) {
  std::uint64_t h = 0x84222325cbf29ce4ull;
  mix_hash(h, static_cast<std::uint32_t>(v.id));
  mix_hash(h, static_cast<std::uint32_t>(v.cluster));
  mix_hash(h, static_cast<std::uint32_t>(v.cluster_pred));
  mix_hash(h, static_cast<std::uint32_t>(v.cluster_succ));
  mix_hash(h, v.faulty_bit);
  mix_hash(h, v.reset_last_round);
  mix_hash(h, static_cast<std::uint64_t>(v.role));
  mix_hash(h, v.committed);
  mix_hash(h, static_cast<std::uint32_t>(v.selected_leader_host));
  mix_hash(h, v.root_waiting);
  for (HostId t : v.follow_targets) mix_hash(h, static_cast<std::uint32_t>(t));
  mix_hash(h, v.merge_active);
  mix_hash(h, v.wave.key());
  for (const auto& g : v.boundary_pfc) {
    mix_hash(h, static_cast<std::uint32_t>(g.guest));
    mix_hash(h, static_cast<std::uint64_t>(g.phase));
    mix_hash(h, g.wave_key);
  }
  return h;
}

}  // namespace detail

// Executes one synchronous round in place; returns the trace row.
inline RoundTrace step_round(Configuration& cfg, const GuestTree& tree,
                             std::uint64_t* payload_hash_out = nullptr) {
  RoundTrace tr;
  tr.round = cfg.round + 1;

  // snapshot heartbeats and adjacency
  std::map<HostId, HbView> hbs;
  for (const auto& [id, s] : cfg.nodes) hbs.emplace(id, make_heartbeat(s, cfg.N));
  const std::map<HostId, std::set<HostId>> snapshot_adj = cfg.adj;

  auto psi_fn = [&cfg](std::int32_t r) { return cfg.psi(r); };

  struct NodeOut {
    HostId id;
    StepResult res;
  };
  std::vector<NodeOut> outs;
  outs.reserve(cfg.nodes.size());
  std::uint64_t phash = 0x100001b3ull;

  for (auto& [id, s] : cfg.nodes) {
    RoundInputs in;
    in.N = cfg.N;
    in.round = cfg.round;
    in.tree = &tree;
    auto ait = snapshot_adj.find(id);
    if (ait != snapshot_adj.end())
      for (HostId v : ait->second) {
        in.neighbors.push_back(hbs.at(v));
        detail::mix_hash(phash, detail::heartbeat_hash(hbs.at(v)));
      }
    auto iit = cfg.inboxes.find(id);
    if (iit != cfg.inboxes.end()) in.inbox = std::move(iit->second);
    in.psi = psi_fn;
    in.rng_base = detail::splitmix64(cfg.rng_seed ^ (static_cast<std::uint64_t>(id) + 1) * 0xbf58476d1ce4e5b9ull);
    outs.push_back({id, step(s, in)});
  }
  cfg.inboxes.clear();

  // apply: deletions first, then witness-checked additions on the snapshot
  auto snap_has = [&](HostId a, HostId b) {
    auto it = snapshot_adj.find(a);
    return it != snapshot_adj.end() && it->second.count(b) > 0;
  };
  std::map<std::pair<HostId, HostId>, std::int32_t> sender_delta;
  for (auto& o : outs) {
    tr.resets += o.res.did_reset ? 1 : 0;
    tr.merges += o.res.merge_completed ? 1 : 0;
    tr.forged_cuts += o.res.forged_cut ? 1 : 0;
    tr.actions_emitted += static_cast<std::int32_t>(o.res.actions.size());
    for (const auto& a : o.res.actions) {
      if (const auto* d = std::get_if<DeleteEdge>(&a)) {
        if (cfg.has_edge(d->u, d->v)) {
          cfg.adj[d->u].erase(d->v);
          cfg.adj[d->v].erase(d->u);
          tr.actions_applied++;
        }
      }
    }
  }
  for (auto& o : outs) {
    for (const auto& a : o.res.actions) {
      if (const auto* ad = std::get_if<AddEdge>(&a)) {
        bool valid = ad->u != ad->w && cfg.nodes.count(ad->u) && cfg.nodes.count(ad->w) &&
                     snap_has(ad->u, ad->via) && snap_has(ad->via, ad->w);
        if (!valid) {
          tr.actions_rejected++;
          continue;
        }
        tr.actions_applied++;
        if (!cfg.has_edge(ad->u, ad->w)) {
          cfg.add_edge(ad->u, ad->w);
          auto& d1 = sender_delta[{o.id, ad->u}];
          auto& d2 = sender_delta[{o.id, ad->w}];
          d1++;
          d2++;
          tr.max_sender_delta = std::max({tr.max_sender_delta, d1, d2});
        }
      }
    }
  }

  // commit states and deliver messages
  for (auto& o : outs) {
    cfg.nodes[o.id] = std::move(o.res.state);
    for (Message& m : o.res.outbox) {
      detail::mix_hash(phash, detail::message_hash(m));
      cfg.inboxes[m.to].push_back(std::move(m));
    }
  }
  cfg.round++;

  tr.max_degree = cfg.max_degree();
  tr.connected = cfg.weakly_connected();
  std::set<std::int32_t> clusters;
  for (const auto& [id, s] : cfg.nodes) clusters.insert(s.cluster);
  tr.cluster_count = static_cast<std::int32_t>(clusters.size());
  if (payload_hash_out) *payload_hash_out = phash;
  return tr;
}

// Full run with stop rule (converged + required silent streak) and audits.
inline RunOutput run(Configuration cfg, const RunOptions& opt = {}) {
  RunOutput out;
  GuestTree tree = cbt_structure(cfg.N);
  std::int64_t max_rounds = opt.max_rounds > 0 ? opt.max_rounds : default_max_rounds(cfg.N);
  std::int32_t extend = opt.extend_rounds >= 0
                            ? opt.extend_rounds
                            : std::max<std::int32_t>(50, timing::pfc_wave(cfg.N));

  out.result.initial_max_degree = cfg.max_degree();
  out.result.max_degree_during_run = out.result.initial_max_degree;
  out.result.connectivity_ok = cfg.weakly_connected();

  if (check_convergence(cfg)) out.result.converged_round = 0;

  std::uint64_t prev_hash = 0;
  bool have_prev_hash = false;
  std::int32_t silent_streak = 0;
  std::int64_t extend_left = -1;

  while (cfg.round < max_rounds) {
    std::uint64_t phash = 0;
    RoundTrace tr = step_round(cfg, tree, &phash);
    if (opt.detectors_each_round)
      tr.detector_count = static_cast<std::int32_t>(detectors(cfg.view()).size());
    if (opt.full_trace) {
      for (const auto& [id, s] : cfg.nodes) tr.degrees.push_back(cfg.degree(id));
    }
    tr.max_degree_so_far = std::max(out.result.max_degree_during_run, tr.max_degree);
    bool comparable = have_prev_hash;
    bool payload_repeat = comparable && phash == prev_hash;
    bool silent = tr.actions_emitted == 0 && payload_repeat;
    tr.messages_changed = !payload_repeat;
    prev_hash = phash;
    have_prev_hash = true;
    silent_streak = silent ? silent_streak + 1 : 0;

    out.result.max_degree_during_run = tr.max_degree_so_far;
    out.result.reset_count += tr.resets;
    out.result.merge_count += tr.merges;
    out.result.connectivity_ok &= tr.connected;
    out.result.any_forgery_success |= tr.forged_cuts > 0;
    out.result.max_sender_delta = std::max(out.result.max_sender_delta, tr.max_sender_delta);
    out.trace.push_back(std::move(tr));

    if (out.result.converged_round < 0 && check_convergence(cfg))
      out.result.converged_round = cfg.round;

    if (out.result.converged_round >= 0 && extend_left < 0)
      extend_left = extend;
    if (extend_left >= 0 && cfg.round > out.result.converged_round) {
      if (out.trace.back().actions_emitted > 0) out.result.silence_ok = false;
      // payloads sent in the round right after convergence still describe the
      // final transition; round-over-round equality applies from then on
      if (cfg.round > out.result.converged_round + 1 && comparable && !payload_repeat)
        out.result.silence_ok = false;
    }
    if (extend_left >= 0) {
      extend_left--;
      if (extend_left <= 0 && opt.stop_on_convergence) break;
    }
  }

  out.result.rounds_executed = cfg.round;
  std::vector<HostId> V = cfg.hosts();
  if (V.size() >= 2) {
    EdgeSet fin = avatar_edges(cfg.N, V);
    std::map<HostId, std::int32_t> deg;
    for (const auto& [e, tags] : fin.edges) {
      deg[e.first]++;
      deg[e.second]++;
    }
    for (const auto& [h, d] : deg)
      out.result.final_topology_max_degree = std::max(out.result.final_topology_max_degree, d);
  }
  std::int32_t denom = std::max(out.result.initial_max_degree, out.result.final_topology_max_degree);
  out.result.degree_expansion =
      denom > 0 ? static_cast<double>(out.result.max_degree_during_run) / denom : 1.0;
  out.config = std::move(cfg);
  return out;
}

}  // namespace avatar
