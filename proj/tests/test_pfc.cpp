#include <catch2/catch_amalgamated.hpp>

#include "avatar/protocol.hpp"
#include "sim_helpers.hpp"

using namespace avatar;
using namespace simtest;

TEST_CASE("pfc_transition guards") {
  using P = PfcPhase;
  // leaf under a propagating parent picks the wave up, then feeds back
  CHECK(pfc_transition(P::Clean, P::Propagate, {}) == P::Propagate);
  CHECK(pfc_transition(P::Propagate, P::Propagate, {}) == P::Feedback);
  // root: virtual parent always matches
  CHECK(pfc_transition(P::Propagate, std::nullopt, {P::Feedback, P::Feedback}) == P::Feedback);
  CHECK(pfc_transition(P::Feedback, std::nullopt, {P::Clean, P::Clean}) == P::Clean);
  // blocked shapes hold their phase
  CHECK(pfc_transition(P::Clean, P::Clean, {}) == P::Clean);
  CHECK(pfc_transition(P::Propagate, P::Propagate, {P::Propagate, P::Feedback}) == P::Propagate);
  CHECK(pfc_transition(P::Feedback, P::Propagate, {P::Clean}) == P::Feedback);
  CHECK(pfc_transition(P::Clean, P::Feedback, {}) == P::Clean);
}

TEST_CASE("single-host wave, N=4: exact frozen phase table") {
  // one node hosting the whole guest tree; phases advance one level per round
  Configuration cfg;
  cfg.N = 4;
  cfg.psi_seed = 11;
  cfg.rng_seed = 22;
  cfg.nodes[0] = fresh_node(0);
  GuestTree t = cbt_structure(4);

  using P = PfcPhase;
  auto phase = [&](GuestId g) { return cfg.nodes[0].phase_of(g); };
  // round: expected phases of guests 0..3 after the round
  struct Row { std::array<P, 4> want; };
  const std::vector<Row> table = {
      {{P::Clean, P::Propagate, P::Clean, P::Clean}},
      {{P::Propagate, P::Propagate, P::Propagate, P::Clean}},
      {{P::Feedback, P::Propagate, P::Propagate, P::Propagate}},
      {{P::Feedback, P::Propagate, P::Propagate, P::Feedback}},
      {{P::Feedback, P::Propagate, P::Feedback, P::Feedback}},
      {{P::Feedback, P::Feedback, P::Feedback, P::Clean}},
      {{P::Clean, P::Feedback, P::Clean, P::Clean}},
      {{P::Clean, P::Clean, P::Clean, P::Clean}},
  };
  for (std::size_t r = 0; r < table.size(); ++r) {
    step_round(cfg, t);
    for (GuestId g = 0; g < 4; ++g) {
      INFO("round " << r + 1 << " guest " << g);
      CHECK(phase(g) == table[r].want[g]);
    }
  }
  // 2*(levels)+2 = 8 rounds: wave complete, all clean and ready again
  CHECK(all_clean(cfg));
}

TEST_CASE("waves on proper clusters run in exactly 2*(log N + 1) + 2 rounds") {
  struct Case { std::int32_t N; std::vector<HostId> T; };
  std::vector<Case> cases = {
      {4, {2}},
      {8, {1, 6}},
      {8, {0, 1, 2, 3, 4, 5, 6, 7}},
      {16, {3, 7, 9, 12}},
      {16, {0, 2, 4, 6, 8, 10, 12, 14}},
      {32, {5, 9, 17, 21, 26, 30}},
  };
  for (const auto& c : cases) {
    Configuration cfg;
    cfg.N = c.N;
    cfg.psi_seed = 5;
    cfg.rng_seed = 6;
    install_cluster(cfg, c.T);
    std::int64_t expect = timing::pfc_wave(c.N);
    auto windows = wave_windows(cfg, static_cast<int>(4 * expect + 8));
    REQUIRE(windows.size() >= 2);
    for (const auto& w : windows) {
      INFO("N=" << c.N << " n=" << c.T.size() << " window " << w.start << ".." << w.end);
      CHECK(w.length() == expect);
    }
  }
}

TEST_CASE("every phase change matches a guarded transition") {
  // isolated proper clusters cycling waves
  {
    Configuration cfg;
    cfg.N = 16;
    cfg.psi_seed = 3;
    cfg.rng_seed = 4;
    install_cluster(cfg, {1, 4, 9, 13});
    auto audit = audit_guards(cfg, 120);
    CHECK(audit.transitions > 0);
    CHECK(audit.violations == 0);
  }
  // full convergence runs including merges and resets
  for (std::uint64_t seed : {1ull, 2ull}) {
    InitialConfigSpec spec;
    spec.kind = GenKind::Line;
    spec.n = 8;
    spec.N = 8;
    Configuration cfg = generate_initial(spec, seed);
    auto audit = audit_guards(cfg, 400);
    CHECK(audit.transitions > 0);
    CHECK(audit.violations == 0);
  }
}

TEST_CASE("terminated cluster goes silent with faulty bits cleared") {
  // a lone proper cluster covering all hosts discovers there is nothing
  // faulty, announces termination and stops
  Configuration cfg;
  cfg.N = 8;
  cfg.psi_seed = 7;
  cfg.rng_seed = 8;
  install_cluster(cfg, {0, 1, 2, 3, 4, 5, 6, 7});  // faulty bits start at 1
  RunOptions opt;
  opt.max_rounds = 400;
  RunOutput out = run(std::move(cfg), opt);
  CHECK(out.result.converged_round > 0);
  CHECK(out.result.silence_ok);
  for (const auto& [id, s] : out.config.nodes) CHECK(s.faulty_bit == 0);
}
