// scratch driver for protocol debugging (not part of the test suite)
#include <cstdio>
#include <iostream>

#include "sim_helpers.hpp"

using namespace avatar;
using namespace simtest;

static const char* ph(PfcPhase p) {
  switch (p) {
    case PfcPhase::Clean: return "C";
    case PfcPhase::Propagate: return "P";
    case PfcPhase::Feedback: return "F";
  }
  return "?";
}
static const char* rk(RoleKind r) {
  switch (r) {
    case RoleKind::Unassigned: return "UN";
    case RoleKind::OpenLeader: return "OL";
    case RoleKind::ClosedLeader: return "CL";
    case RoleKind::ShortFollower: return "SF";
    case RoleKind::LongFollower: return "LF";
    case RoleKind::Merging: return "MG";
  }
  return "?";
}
static const char* wk(WaveKind k) {
  switch (k) {
    case WaveKind::None: return "-";
    case WaveKind::OpenLead: return "OPEN";
    case WaveKind::CloseConnect: return "CLOS";
    case WaveKind::FollowerPoll: return "POLL";
    case WaveKind::LeaderInform: return "INFO";
    case WaveKind::MergePrep: return "PREP";
    case WaveKind::Announce: return "ANNC";
  }
  return "?";
}

int main(int argc, char** argv) {
  std::string mode = argc > 1 ? argv[1] : "cluster";
  int rounds = argc > 2 ? std::atoi(argv[2]) : 40;

  Configuration cfg;
  if (mode == "cluster") {
    cfg.N = 8;
    cfg.psi_seed = 5;
    cfg.rng_seed = 6;
    install_cluster(cfg, {1, 6});
  } else if (mode == "merge") {
    cfg = make_matched_pair(4, {0}, {2});
  } else if (mode == "twoline") {
    InitialConfigSpec spec;
    spec.kind = GenKind::Line;
    spec.n = 2;
    spec.N = 4;
    cfg = generate_initial(spec, argc > 3 ? std::strtoull(argv[3], nullptr, 10) : 0);
  } else if (mode == "line8") {
    InitialConfigSpec spec;
    spec.kind = GenKind::Line;
    spec.n = 8;
    spec.N = 8;
    cfg = generate_initial(spec, argc > 3 ? std::strtoull(argv[3], nullptr, 10) : 0);
  }

  GuestTree t = cbt_structure(cfg.N);
  for (int r = 1; r <= rounds; ++r) {
    step_round(cfg, t);
    std::printf("r%-3d ", r);
    for (const auto& [id, s] : cfg.nodes) {
      std::printf("| %d c%d [%d,%d) %s %s%d w%s ", id, s.cluster,
                  s.range(cfg.N).lo, s.range(cfg.N).hi, rk(s.role),
                  s.merge.active ? "M" : "", s.faulty_bit, wk(s.wave.kind));
      for (const auto& [g, p] : s.pfc) std::printf("%d%s ", g, ph(p));
      if (s.merge.active)
        std::printf("mg(p%d ur%d %s%s) ", s.merge.partner_cluster, s.merge.unresolved,
                    s.merge.prep_done ? "pd" : "", s.merge.resolve_started ? "rs" : "");
    }
    std::printf("|| edges:");
    for (const auto& [u, nb] : cfg.adj)
      for (HostId v : nb)
        if (u < v) std::printf(" %d-%d", u, v);
    std::printf("\n");
    if (check_convergence(cfg)) {
      std::printf("CONVERGED at %d\n", r);
      break;
    }
  }
  return 0;
}
