#pragma once

// Test-only oracles, kept independent of the library implementation paths
// they check: a direct recursive enumeration of the guest tree and a
// brute-force construction of the overlay edge set.

#include <map>
#include <set>
#include <utility>
#include <vector>

namespace oracle {

using Edge = std::pair<int, int>;

inline void cbt_edges_rec(int a, int b, std::set<Edge>& out) {
  if (a > b) return;
  int r = (a + b) / 2;
  if (a <= r - 1) {
    int lc = (a + r - 1) / 2;
    out.insert({std::min(r, lc), std::max(r, lc)});
    cbt_edges_rec(a, r - 1, out);
  }
  if (r + 1 <= b) {
    int rc = (r + 1 + b) / 2;
    out.insert({std::min(r, rc), std::max(r, rc)});
    cbt_edges_rec(r + 1, b, out);
  }
}

inline std::set<Edge> cbt_edges(int N) {
  std::set<Edge> out;
  cbt_edges_rec(0, N - 1, out);
  return out;
}

inline void cbt_levels_rec(int a, int b, int depth, std::map<int, int>& out) {
  if (a > b) return;
  int r = (a + b) / 2;
  out[r] = depth;
  cbt_levels_rec(a, r - 1, depth + 1, out);
  cbt_levels_rec(r + 1, b, depth + 1, out);
}

inline std::map<int, int> cbt_levels(int N) {
  std::map<int, int> out;
  cbt_levels_rec(0, N - 1, 0, out);
  return out;
}

// host of a guest id: linear scan over the sorted host list
inline int host_of(int g, const std::vector<int>& sortedV) {
  int h = sortedV.front();
  for (int v : sortedV)
    if (v <= g) h = v;
  return h;
}

// brute-force Avatar edge set: successor chain plus every guest edge mapped
// through the ranges
inline std::set<Edge> brute_avatar_edges(int N, std::vector<int> V) {
  std::sort(V.begin(), V.end());
  std::set<Edge> out;
  for (std::size_t i = 0; i + 1 < V.size(); ++i) out.insert({V[i], V[i + 1]});
  for (auto [a, b] : cbt_edges(N)) {
    int ha = host_of(a, V), hb = host_of(b, V);
    if (ha != hb) out.insert({std::min(ha, hb), std::max(ha, hb)});
  }
  return out;
}

}  // namespace oracle
