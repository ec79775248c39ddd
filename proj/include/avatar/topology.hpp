#pragma once

// Canonical Avatar_CBT(N, V) topology: the complete-binary-search-tree guest
// family, host ranges, the dilation-1 embedding and the induced host edges.
// Everything here is a pure function of (N, V).

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <stdexcept>
#include <utility>
#include <vector>

namespace avatar {

using HostId = std::int32_t;
using GuestId = std::int32_t;

inline constexpr std::int32_t kNone = -1;

inline std::int32_t floor_log2(std::int64_t n) {
  if (n < 1) throw std::invalid_argument("floor_log2: n must be >= 1");
  return static_cast<std::int32_t>(std::bit_width(static_cast<std::uint64_t>(n)) - 1);
}

// Number of guest-tree levels for capacity N.
inline std::int32_t num_levels(std::int32_t N) { return floor_log2(N) + 1; }

// Root of CBT[a,b] is floor((a+b)/2); whole tree is CBT[0, N-1].
inline GuestId cbt_root(std::int32_t N) {
  if (N < 1) throw std::invalid_argument("cbt_root: capacity must be >= 1");
  return (N - 1) / 2;
}

// Half-open interval of guest identifiers assigned to one host.
struct Range {
  std::int32_t lo{0};
  std::int32_t hi{0};
  bool contains(GuestId g) const { return lo <= g && g < hi; }
  bool operator==(const Range&) const = default;
};

// Parent/children/level tables for CBT[0, N-1].
struct GuestTree {
  std::int32_t capacity{0};
  GuestId root{0};
  std::vector<GuestId> parent;                  // kNone for root
  std::vector<std::array<GuestId, 2>> children; // kNone when absent
  std::vector<std::int32_t> level;
  std::int32_t levels{0};

  GuestId left(GuestId g) const { return children[g][0]; }
  GuestId right(GuestId g) const { return children[g][1]; }
};

inline GuestTree cbt_structure(std::int32_t N) {
  if (N < 1) throw std::invalid_argument("cbt_structure: capacity must be >= 1");
  GuestTree t;
  t.capacity = N;
  t.root = cbt_root(N);
  t.parent.assign(N, kNone);
  t.children.assign(N, {kNone, kNone});
  t.level.assign(N, 0);
  // Iterative expansion of the CBT[a,b] recursion; empty intervals yield no node.
  struct Frame { std::int32_t a, b; GuestId par; std::int32_t lvl; };
  std::vector<Frame> stack{{0, N - 1, kNone, 0}};
  while (!stack.empty()) {
    auto [a, b, par, lvl] = stack.back();
    stack.pop_back();
    if (a > b) continue;
    GuestId r = (a + b) / 2;
    t.parent[r] = par;
    t.level[r] = lvl;
    if (par != kNone) {
      if (r < par) t.children[par][0] = r; else t.children[par][1] = r;
    }
    stack.push_back({a, r - 1, r, lvl + 1});
    stack.push_back({r + 1, b, r, lvl + 1});
  }
  t.levels = num_levels(N);
  return t;
}

// Ranges of a sorted host set: [u_i, u_{i+1}) with the first stretched to 0
// and the last stretched to N. A lone host covers all of [0, N).
inline std::map<HostId, Range> compute_ranges(const std::vector<HostId>& V, std::int32_t N) {
  if (V.empty()) throw std::invalid_argument("compute_ranges: host set empty");
  for (std::size_t i = 0; i < V.size(); ++i) {
    if (V[i] < 0 || V[i] >= N) throw std::invalid_argument("compute_ranges: host id outside [0,N)");
    if (i > 0 && V[i] <= V[i - 1]) throw std::invalid_argument("compute_ranges: hosts must be strictly sorted");
  }
  std::map<HostId, Range> out;
  for (std::size_t i = 0; i < V.size(); ++i) {
    std::int32_t lo = (i == 0) ? 0 : V[i];
    std::int32_t hi = (i + 1 == V.size()) ? N : V[i + 1];
    out[V[i]] = Range{lo, hi};
  }
  return out;
}

// Host of guest g under the ranges of sorted host set V: the greatest host
// <= g, or the least host when g precedes every host id.
inline HostId host_of(GuestId g, const std::vector<HostId>& sortedV) {
  auto it = std::upper_bound(sortedV.begin(), sortedV.end(), g);
  if (it == sortedV.begin()) return sortedV.front();
  return *std::prev(it);
}

// Enumerates guest-tree edges with exactly one endpoint inside [lo, hi).
// Walks only subtrees straddling a boundary, so O(log N) edges/time.
inline void for_each_crossing_edge(std::int32_t N, std::int32_t lo, std::int32_t hi,
                                   const std::function<void(GuestId inside, GuestId outside)>& fn) {
  if (N < 1) throw std::invalid_argument("for_each_crossing_edge: bad capacity");
  auto inside = [&](GuestId g) { return lo <= g && g < hi; };
  // Subtree [a,b] needs a visit unless entirely inside or entirely outside.
  std::function<void(std::int32_t, std::int32_t)> visit = [&](std::int32_t a, std::int32_t b) {
    if (a > b) return;
    if (a >= lo && b < hi) return;           // fully inside: no crossing below
    if (b < lo || a >= hi) return;           // fully outside: no crossing below
    GuestId r = (a + b) / 2;
    for (auto [ca, cb] : {std::pair{a, r - 1}, std::pair{r + 1, b}}) {
      if (ca > cb) continue;
      GuestId c = (ca + cb) / 2;
      if (inside(r) != inside(c)) {
        if (inside(r)) fn(r, c); else fn(c, r);
      }
      visit(ca, cb);
    }
  };
  visit(0, N - 1);
}

// Edge tags; one host pair may carry both.
inline constexpr std::uint8_t kType1 = 1; // successor chain
inline constexpr std::uint8_t kType2 = 2; // induced by a guest edge

struct EdgeSet {
  // canonical (min,max) pair -> tag bits
  std::map<std::pair<HostId, HostId>, std::uint8_t> edges;

  bool has(HostId a, HostId b) const {
    if (a > b) std::swap(a, b);
    return edges.count({a, b}) > 0;
  }
  std::uint8_t tags(HostId a, HostId b) const {
    if (a > b) std::swap(a, b);
    auto it = edges.find({a, b});
    return it == edges.end() ? 0 : it->second;
  }
  std::size_t size() const { return edges.size(); }
};

// The canonical Avatar_CBT(N, V) edge set.
inline EdgeSet avatar_edges(std::int32_t N, const std::vector<HostId>& hosts) {
  std::vector<HostId> V = hosts;
  std::sort(V.begin(), V.end());
  auto ranges = compute_ranges(V, N);

  EdgeSet es;
  auto add = [&](HostId a, HostId b, std::uint8_t tag) {
    if (a == b) return;
    if (a > b) std::swap(a, b);
    es.edges[{a, b}] |= tag;
  };
  for (std::size_t i = 0; i + 1 < V.size(); ++i) add(V[i], V[i + 1], kType1);
  for (HostId u : V) {
    const Range r = ranges.at(u);
    for_each_crossing_edge(N, r.lo, r.hi, [&](GuestId, GuestId outside) {
      add(u, host_of(outside, V), kType2);
    });
  }
  return es;
}

// Proven ceiling on any host degree in Avatar_CBT(N, V).
inline std::int32_t max_degree_bound(std::int32_t N) {
  if (N < 2) throw std::invalid_argument("max_degree_bound: capacity must be >= 2");
  return 2 * floor_log2(N) + 2;
}

}  // namespace avatar
