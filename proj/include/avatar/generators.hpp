#pragma once

// Initial-configuration generators: canonical topologies, random weakly
// connected graphs, state-corruption policies and the two adversarial kinds
// (forged merge sequences, fabricated cluster structure). The adversary never
// sees the true shared sequence, so forged bits are independent guesses.

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

#include "avatar/engine.hpp"

namespace avatar {

enum class GenKind {
  Line,
  Star,
  Clique,
  RandomTree,
  RandomConnected,
  FromFile,
  AdversarialMergeForgery,
  AdversarialFakeClusters,
};

inline const char* gen_kind_name(GenKind k) {
  switch (k) {
    case GenKind::Line: return "line";
    case GenKind::Star: return "star";
    case GenKind::Clique: return "clique";
    case GenKind::RandomTree: return "random-tree";
    case GenKind::RandomConnected: return "random-connected";
    case GenKind::FromFile: return "from-file";
    case GenKind::AdversarialMergeForgery: return "adversarial-merge-forgery";
    case GenKind::AdversarialFakeClusters: return "adversarial-fake-clusters";
  }
  return "?";
}

inline bool parse_gen_kind(const std::string& s, GenKind& out) {
  for (GenKind k : {GenKind::Line, GenKind::Star, GenKind::Clique, GenKind::RandomTree,
                    GenKind::RandomConnected, GenKind::FromFile,
                    GenKind::AdversarialMergeForgery, GenKind::AdversarialFakeClusters})
    if (s == gen_kind_name(k)) { out = k; return true; }
  return false;
}

enum class CorruptionPolicy { Zeroed, RandomFields, Crafted };

inline bool parse_policy(const std::string& s, CorruptionPolicy& out) {
  if (s == "zeroed") { out = CorruptionPolicy::Zeroed; return true; }
  if (s == "random-fields") { out = CorruptionPolicy::RandomFields; return true; }
  if (s == "crafted") { out = CorruptionPolicy::Crafted; return true; }
  return false;
}

struct InitialConfigSpec {
  GenKind kind{GenKind::Line};
  std::int32_t n{0};
  std::int32_t N{0};
  CorruptionPolicy policy{CorruptionPolicy::Zeroed};
  std::string path;  // from-file only
};

namespace detail {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(splitmix64(seed ^ 0xabcdef12345ull)) {}
  std::uint64_t next() { return state_ = splitmix64(state_); }
  std::uint64_t below(std::uint64_t n) { return n ? next() % n : 0; }

 private:
  std::uint64_t state_;
};

inline std::vector<HostId> sample_hosts(std::int32_t n, std::int32_t N, Rng& rng) {
  if (n == N) {
    std::vector<HostId> v(n);
    for (std::int32_t i = 0; i < n; ++i) v[i] = i;
    return v;
  }
  std::vector<HostId> pool(N);
  for (std::int32_t i = 0; i < N; ++i) pool[i] = i;
  for (std::int32_t i = 0; i < n; ++i) {
    std::size_t j = i + rng.below(N - i);
    std::swap(pool[i], pool[j]);
  }
  std::vector<HostId> v(pool.begin(), pool.begin() + n);
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace detail

// Post-reset state: a fresh size-1 cluster.
inline NodeState fresh_node(HostId id) {
  NodeState s;
  s.id = id;
  s.cluster = id;
  s.faulty_bit = 1;
  return s;
}

// Exact legal configuration for Avatar_CBT(N, V): canonical edges, correct
// pointers and cluster ids, clean waves, faulty bits cleared.
inline Configuration make_legal_configuration(std::int32_t N, std::vector<HostId> V,
                                              std::uint64_t seed = 0) {
  std::sort(V.begin(), V.end());
  Configuration cfg;
  cfg.N = N;
  cfg.psi_seed = detail::splitmix64(seed ^ 0x517cc1b727220a95ull);
  cfg.rng_seed = detail::splitmix64(seed ^ 0x2545f4914f6cdd1dull);
  HostId root_host = host_of(cbt_root(N), V);
  for (std::size_t i = 0; i < V.size(); ++i) {
    NodeState s = fresh_node(V[i]);
    s.cluster = root_host;
    s.cluster_pred = i == 0 ? kNone : V[i - 1];
    s.cluster_succ = i + 1 == V.size() ? kNone : V[i + 1];
    s.faulty_bit = 0;
    cfg.nodes[V[i]] = s;
  }
  for (const auto& [e, tags] : avatar_edges(N, V).edges) cfg.add_edge(e.first, e.second);
  return cfg;
}

inline Configuration generate_initial(const InitialConfigSpec& spec, std::uint64_t seed) {
  if (spec.n < 1 || spec.n > spec.N)
    throw std::invalid_argument("generate_initial: need 1 <= n <= N");
  detail::Rng rng(seed);
  Configuration cfg;
  cfg.N = spec.N;
  cfg.psi_seed = detail::splitmix64(seed ^ 0x517cc1b727220a95ull);
  cfg.rng_seed = detail::splitmix64(seed ^ 0x2545f4914f6cdd1dull);

  std::vector<HostId> V = detail::sample_hosts(spec.n, spec.N, rng);
  for (HostId h : V) cfg.nodes[h] = fresh_node(h);

  auto random_tree_edges = [&]() {
    std::vector<HostId> order = V;
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.below(i)]);
    for (std::size_t i = 1; i < order.size(); ++i)
      cfg.add_edge(order[i], order[rng.below(i)]);
  };

  switch (spec.kind) {
    case GenKind::Line:
      for (std::size_t i = 0; i + 1 < V.size(); ++i) cfg.add_edge(V[i], V[i + 1]);
      break;
    case GenKind::Star:
      for (std::size_t i = 1; i < V.size(); ++i) cfg.add_edge(V[0], V[i]);
      break;
    case GenKind::Clique:
      for (std::size_t i = 0; i < V.size(); ++i)
        for (std::size_t j = i + 1; j < V.size(); ++j) cfg.add_edge(V[i], V[j]);
      break;
    case GenKind::RandomTree:
    case GenKind::AdversarialMergeForgery:
      random_tree_edges();
      break;
    case GenKind::RandomConnected:
    case GenKind::AdversarialFakeClusters: {
      random_tree_edges();
      std::size_t extra = V.size() / 2;
      for (std::size_t i = 0; i < extra && V.size() >= 2; ++i) {
        HostId a = V[rng.below(V.size())];
        HostId b = V[rng.below(V.size())];
        cfg.add_edge(a, b);
      }
      break;
    }
    case GenKind::FromFile:
      throw std::invalid_argument("generate_initial: from-file configs come from io parsing");
  }

  if (spec.policy == CorruptionPolicy::RandomFields) {
    for (auto& [id, s] : cfg.nodes) {
      s.cluster = V[rng.below(V.size())];
      HostId p = V[rng.below(V.size())];
      HostId q = V[rng.below(V.size())];
      s.cluster_pred = (rng.next() & 1) ? kNone : p;
      s.cluster_succ = (rng.next() & 1) ? kNone : q;
      s.faulty_bit = static_cast<std::uint8_t>(rng.next() & 1);
      s.role = static_cast<RoleKind>(rng.below(5));
      if (rng.next() & 1) {
        Range r = s.range(cfg.N);
        if (r.lo < r.hi) {
          GuestId g = r.lo + static_cast<GuestId>(rng.below(r.hi - r.lo));
          s.wave.kind = static_cast<WaveKind>(1 + rng.below(4));
          s.wave.seq = static_cast<std::int32_t>(rng.below(5));
          s.set_phase(g, static_cast<PfcPhase>(1 + (rng.next() & 1)));
        }
      }
    }
  }

  if (spec.kind == GenKind::AdversarialMergeForgery && V.size() >= 2) {
    // disjoint adjacent pairs planted mid-merge with guessed sequences
    std::set<HostId> used;
    std::int32_t k = cfg.psi_bit_count();
    for (HostId u : V) {
      if (used.count(u)) continue;
      HostId v = kNone;
      for (HostId w : cfg.adj[u])
        if (!used.count(w)) { v = w; break; }
      if (v == kNone) continue;
      used.insert(u);
      used.insert(v);
      std::int32_t guess_round = static_cast<std::int32_t>(rng.below(64));
      std::uint64_t guess_bits = rng.next() & ((1ull << k) - 1);
      for (HostId x : {u, v}) {
        NodeState& s = cfg.nodes[x];
        HostId other = x == u ? v : u;
        s.merge.active = true;
        s.merge.side = x;
        s.merge.partner_cluster = other;
        s.merge.partner_root = kNone;  // fabricated; no such root exists
        s.merge.prep_received = true;
        s.merge.psi_round = guess_round;
        s.merge.psi_bits = guess_bits;
        s.merge.psi_planted = true;
        s.merge.cut_candidates.insert(other);
        s.merge.new_cluster = merge_new_cluster(cfg.N, s.merge.side, s.merge.partner_cluster);
        // keep the root guest out of the claimed embedding so the pair edge
        // does not enjoy root-root protection
        GuestId rg = cbt_root(cfg.N);
        s.merge.orig_range = x == rg ? Range{x + 1, x + 2} : Range{x, x + 1};
        if (s.merge.orig_range.hi > cfg.N) s.merge.orig_range = Range{0, 1};
        s.merge.holdings.push_back({s.merge.orig_range, s.merge.side});
        s.role = RoleKind::Merging;
        s.cluster = s.merge.new_cluster;
      }
    }
  }

  if (spec.kind == GenKind::AdversarialFakeClusters && V.size() >= 2) {
    // consecutive id groups all claiming membership of a cluster whose
    // topology does not exist
    std::size_t i = 0;
    while (i < V.size()) {
      std::size_t len = 2 + rng.below(3);
      std::size_t end = std::min(V.size(), i + len);
      HostId fake_root = V[i + rng.below(end - i)];
      for (std::size_t j = i; j < end; ++j) {
        NodeState& s = cfg.nodes[V[j]];
        s.cluster = fake_root;
        s.cluster_pred = j == i ? kNone : V[j - 1];
        s.cluster_succ = j + 1 == end ? kNone : V[j + 1];
        s.faulty_bit = static_cast<std::uint8_t>(rng.next() & 1);
      }
      i = end;
    }
  }

  return cfg;
}

}  // namespace avatar
