#include <cstdio>
#include "sim_helpers.hpp"
using namespace avatar;
using namespace simtest;
int main() {
  Configuration cfg = make_matched_pair(8, {1}, {2, 3});
  GuestTree t = cbt_structure(8);
  for (int r = 1; r <= 40; ++r) {
    step_round(cfg, t);
    std::printf("r%-3d ", r);
    for (const auto& [id, s] : cfg.nodes) {
      std::printf("| %d c%d [%d,%d) ur%d%s pos{", id, s.cluster, s.range(8).lo,
                  s.range(8).hi, s.merge.active ? s.merge.unresolved : -1,
                  s.merge.resolve_started ? "rs" : "");
      for (const auto& [g, p] : s.merge.positions)
        std::printf("%d%s%s/%d ", g, p.resolved ? (p.winner ? "W" : "L") : "-",
                    p.deferred ? "d" : "", p.counterpart);
      std::printf("} ");
    }
    std::printf("|| edges:");
    for (const auto& [u, nb] : cfg.adj)
      for (HostId v : nb)
        if (u < v) std::printf(" %d-%d", u, v);
    std::printf("\n");
  }
  return 0;
}
