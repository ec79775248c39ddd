#include <cstdio>
#include <random>
#include "sim_helpers.hpp"
using namespace avatar;
using namespace simtest;
int main() {
  { // pfc 121 repro
    Configuration cfg;
    cfg.N = 8; cfg.psi_seed = 7; cfg.rng_seed = 8;
    install_cluster(cfg, {0,1,2,3,4,5,6,7});
    RunOptions opt; opt.max_rounds = 400;
    RunOutput out = run(std::move(cfg), opt);
    std::printf("pfc121: conv=%lld silence=%d resets=%lld\n",
      (long long)out.result.converged_round, out.result.silence_ok ? 1 : 0,
      (long long)out.result.reset_count);
    // find the unsilent rounds
    for (auto& t : out.trace)
      if (t.round > out.result.converged_round + 1 && t.messages_changed)
        std::printf("  round %lld changed, actions=%d\n", (long long)t.round, t.actions_emitted);
  }
  { // merge trial 0 repro: seed 23 first trial
    std::mt19937_64 rng(23);
    const std::int32_t N = 16;
    int n1 = 1 + static_cast<int>(rng() % 5);
    int n2 = 1 + static_cast<int>(rng() % 5);
    std::set<HostId> used;
    auto sample = [&](int k) {
      std::vector<HostId> v;
      while ((int)v.size() < k) { HostId h = (HostId)(rng() % N); if (used.insert(h).second) v.push_back(h); }
      std::sort(v.begin(), v.end());
      return v;
    };
    std::vector<HostId> T1 = sample(n1), T2 = sample(n2);
    std::printf("merge trial0: T1={"); for (auto h : T1) std::printf("%d ", h);
    std::printf("} T2={"); for (auto h : T2) std::printf("%d ", h); std::printf("}\n");
    Configuration cfg = make_matched_pair(N, T1, T2, rng());
    std::set<HostId> all(T1.begin(), T1.end()); all.insert(T2.begin(), T2.end());
    GuestTree t = cbt_structure(N);
    for (int r = 1; r <= timing::merge(N) + 20; ++r) {
      step_round(cfg, t);
      ConfigView v = cfg.view();
      bool p = is_proper_cluster(v, all), u = cluster_unmatched(v, all), c = cluster_all_clean(v, all);
      if (r >= timing::merge(N) - 6)
        std::printf("  r%d proper=%d unmatched=%d clean=%d\n", r, p, u, c);
      if (p && u && c) { std::printf("  done r%d (bound %d)\n", r, timing::merge(N)); break; }
    }
  }
  return 0;
}
