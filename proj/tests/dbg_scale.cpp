// scratch: convergence scaling probe
#include <chrono>
#include <cstdio>
#include <cstring>
#include "sim_helpers.hpp"
using namespace avatar;
using namespace simtest;
int main(int argc, char** argv) {
  int n = argc > 1 ? std::atoi(argv[1]) : 64;
  int N = argc > 2 ? std::atoi(argv[2]) : n;
  int seeds = argc > 3 ? std::atoi(argv[3]) : 5;
  std::string gen = argc > 4 ? argv[4] : "line";
  GenKind kind;
  parse_gen_kind(gen, kind);
  std::int64_t l = num_levels(N);
  for (int s = 0; s < seeds; ++s) {
    InitialConfigSpec spec;
    spec.kind = kind;
    spec.n = n; spec.N = N;
    auto t0 = std::chrono::steady_clock::now();
    Configuration cfg = generate_initial(spec, s);
    RunOutput out = run(std::move(cfg));
    auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                  std::chrono::steady_clock::now() - t0).count();
    std::printf(
        "%s n=%d N=%d seed=%d conv=%lld ratio=%.2f resets=%lld merges=%lld degx=%.3f "
        "maxdeg=%d delta=%d conn=%d sil=%d %lldms\n",
        gen.c_str(), n, N, s, (long long)out.result.converged_round,
        out.result.converged_round / double(l * l), (long long)out.result.reset_count,
        (long long)out.result.merge_count, out.result.degree_expansion,
        out.result.max_degree_during_run, out.result.max_sender_delta,
        out.result.connectivity_ok ? 1 : 0, out.result.silence_ok ? 1 : 0, (long long)ms);
  }
  return 0;
}
